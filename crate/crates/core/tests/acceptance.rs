//! Acceptance suite: every numbered criterion prints exactly one PASS/FAIL
//! line and the process exits nonzero if any criterion fails. The criteria
//! run sequentially because later ones reuse earlier artifacts (the recovery
//! fit's champion feeds the flatness sweep). Set
//! `HVDVG_ACCEPTANCE_FILTER=3,7` to run a subset while developing; skipped
//! criteria are not counted as failures.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use hvdvg::{
    analytic_high_moi, batch_fit, classify_omega_limit, final_state_identity, fit_cost, integrate,
    integrate_at_times, scan_grid, spectrum_at, stability_case, variational_wrt_ic_at,
    variational_wrt_param, variational_wrt_param_at, vector_field, AxisName, AxisScale, AxisSpec,
    Candidate, Dataset, FitConfig, GeneRange, GridSpec, InoculumSpec, IntegratorConfig,
    ModelParams, ParamName, PlaneClass, StabilityCase, State, Trajectory,
};
use nalgebra::Matrix6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// High-burst interference scenario shared by criteria 6, 8 and 12:
/// B = 500, beta = 1e-6, delta = 10, iota/alpha = 0.1.
fn high_burst_params() -> ModelParams {
    ModelParams::new(500.0, 1e-6, 10.0, 0.1, 1.0).expect("valid parameters")
}

fn run(n: usize, name: &str, failures: &mut usize, f: impl FnOnce() -> Check) {
    if let Ok(filter) = std::env::var("HVDVG_ACCEPTANCE_FILTER") {
        if !filter.split(',').any(|tok| tok.trim() == n.to_string()) {
            println!("criterion {n:02} SKIP        {name}");
            return;
        }
    }
    let started = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f));
    let dt = started.elapsed().as_secs_f64();
    match outcome {
        Ok(Ok(detail)) => println!("criterion {n:02} PASS [{dt:7.1}s] {name} :: {detail}"),
        Ok(Err(detail)) => {
            *failures += 1;
            println!("criterion {n:02} FAIL [{dt:7.1}s] {name} :: {detail}");
        }
        Err(payload) => {
            *failures += 1;
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "opaque panic payload".to_string());
            println!("criterion {n:02} FAIL [{dt:7.1}s] {name} :: panicked: {msg}");
        }
    }
}

// criterion 1: the stability regime must switch exactly at the closed-form
// burst-size thresholds B = 1 + beta + delta and B = 1 + beta, and the
// classification is pure arithmetic (sub-millisecond).
fn criterion_01() -> Check {
    let mk = |b: f64| ModelParams::new(b, 0.2, 2.0, 1.0, 1.0).expect("valid parameters");
    let ps = [
        mk(3.2 + 1e-9),
        mk(3.2),
        mk(3.2 - 1e-9),
        mk(1.2 + 1e-9),
        mk(1.2),
        mk(1.2 - 1e-9),
    ];
    let started = Instant::now();
    let cases: Vec<StabilityCase> = ps.iter().map(stability_case).collect();
    let dt = started.elapsed();

    ensure(
        matches!(cases[0], StabilityCase::FullInfection),
        format!("B just above 3.2 classified {:?}, expected full infection", cases[0]),
    )?;
    ensure(
        matches!(cases[1], StabilityCase::Degenerate),
        format!("B = 3.2 exactly classified {:?}, expected the degenerate boundary", cases[1]),
    )?;
    ensure(
        matches!(cases[2], StabilityCase::RatioDependent { .. }),
        format!("B just below 3.2 classified {:?}, expected ratio dependent", cases[2]),
    )?;
    ensure(
        matches!(cases[3], StabilityCase::RatioDependent { .. }),
        format!("B just above 1.2 classified {:?}, expected ratio dependent", cases[3]),
    )?;
    ensure(
        matches!(cases[4], StabilityCase::Degenerate),
        format!("B = 1.2 exactly classified {:?}, expected the degenerate boundary", cases[4]),
    )?;
    ensure(
        matches!(cases[5], StabilityCase::SelfCuring),
        format!("B just below 1.2 classified {:?}, expected self curing", cases[5]),
    )?;
    ensure(
        dt < Duration::from_millis(1),
        format!("classification took {dt:?}, budget is 1 ms"),
    )?;
    Ok(format!(
        "regime switches at B = 3.2 and B = 1.2 with degenerate boundaries, {:.1} us of arithmetic",
        dt.as_secs_f64() * 1e6
    ))
}

// criterion 2: a 41 x 41 initial-particle scan of the coexistence scenario
// must expose all three attracting end-state planes.
fn criterion_02() -> Check {
    let axis = |name| AxisSpec { name, min: 1.0 / 41.0, max: 1.0, steps: 41, scale: AxisScale::Linear };
    let spec = GridSpec {
        x_axis: axis(AxisName::V0),
        y_axis: axis(AxisName::D0),
        params: ModelParams::new(10.0, 0.5, 20.0, 100.0, 1.0).expect("valid parameters"),
        inoculum: InoculumSpec::new(0.5, 0.5, 1.0).expect("valid inoculum"),
    };
    let result = scan_grid(&spec, &IntegratorConfig::default()).map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for cell in &result.cells {
        *counts.entry(cell.class.as_str()).or_default() += 1;
    }
    for class in ["VD", "CDD", "CCD"] {
        ensure(
            counts.get(class).copied().unwrap_or(0) > 0,
            format!("no node of the 41x41 grid settles on the {class} plane; counts {counts:?}"),
        )?;
    }
    Ok(format!(
        "basins {:?} across 1681 nodes; scan took {:.1}s (budget 120s on 4 workers)",
        counts,
        result.elapsed.as_secs_f64()
    ))
}

// criterion 3: with a supercritical burst size every inoculum must end on
// the extinct-culture plane, whatever the initial particle mix.
fn criterion_03() -> Check {
    let p = ModelParams::new(100.0, 0.01, 1.2, 10.0, 1.0).expect("valid parameters");
    ensure(
        matches!(stability_case(&p), StabilityCase::FullInfection),
        "scenario is not supercritical",
    )?;
    let cfg = IntegratorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..100 {
        let moi = log_uniform(&mut rng, 0.01, 10.0);
        let q = rng.gen_range(0.05..0.95);
        let ino = InoculumSpec::new(moi, q, 1.0).map_err(|e| e.to_string())?;
        let traj = integrate(&p, &ino.initial_state(), &cfg).map_err(|e| e.to_string())?;
        let class = classify_omega_limit(&traj, cfg.extinction_threshold);
        ensure(
            class == PlaneClass::VD,
            format!("inoculum {i} (m = {moi:.3}, qV0 = {q:.3}) settled on {class:?}, expected VD"),
        )?;
    }
    Ok("100/100 random inocula settle on the extinct-culture plane".to_string())
}

/// Shared by criteria 4 and 5: twenty random decay-free supercritical runs,
/// integrated to equilibrium with one initial cell unit.
struct LedgerRun {
    p: ModelParams,
    moi: f64,
    traj: Trajectory,
}

fn ledger_runs() -> Result<Vec<LedgerRun>, String> {
    let cfg = IntegratorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    (0..20)
        .map(|i| {
            let beta = log_uniform(&mut rng, 1e-4, 0.5);
            let delta = rng.gen_range(1.0..5.0);
            // B strictly above the full-infection threshold keeps every run
            // supercritical and clear of the degeneracy window.
            let b = (1.0 + beta + delta) * log_uniform(&mut rng, 1.5, 20.0);
            let alpha = log_uniform(&mut rng, 0.3, 3.0);
            let iota = log_uniform(&mut rng, 0.5, 8.0);
            let moi = log_uniform(&mut rng, 0.1, 3.0);
            let q = rng.gen_range(0.2..0.9);
            let p = ModelParams::new(b, beta, delta, iota, alpha).map_err(|e| e.to_string())?;
            ensure(
                matches!(stability_case(&p), StabilityCase::FullInfection),
                format!("draw {i} left the supercritical regime"),
            )?;
            let ino = InoculumSpec::new(moi, q, 1.0).map_err(|e| e.to_string())?;
            let traj = integrate(&p, &ino.initial_state(), &cfg)
                .map_err(|e| format!("draw {i} failed to integrate: {e}"))?;
            Ok(LedgerRun { p, moi, traj })
        })
        .collect()
}

// criterion 4: every initial cell lyses exactly once, so the two lysis
// accumulators must sum to the initial cell count to one part in 1e8.
fn criterion_04(out: &mut Option<Vec<LedgerRun>>) -> Check {
    let runs = ledger_runs()?;
    *out = Some(runs);
    let runs = out.as_ref().expect("just stored");
    let worst = runs
        .iter()
        .map(|r| (r.traj.iv + r.traj.idv - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(
        worst < 1e-8,
        format!("worst |Iv + Idv - C0| = {worst:.3e} across 20 runs, tolerance 1e-8 relative to C0"),
    )?;
    Ok(format!("lysis events balance initial cells to {worst:.1e} across 20 random runs"))
}

// criterion 5: the final particle total must close the burst ledger to 1e-6
// relative and sit strictly inside the (B + m - 2, B + m - 1) band.
fn criterion_05(runs: &Option<Vec<LedgerRun>>) -> Check {
    let runs = runs.as_ref().ok_or("ledger runs unavailable (criterion 4 crashed)")?;
    let mut worst_rel = 0.0f64;
    let mut min_margin = f64::INFINITY;
    for (i, run) in runs.iter().enumerate() {
        let id = final_state_identity(&run.traj, &run.p, run.moi, 1.0).map_err(|e| e.to_string())?;
        let rel = id.residual_iv.max(id.residual_idv) / id.vf_df;
        worst_rel = worst_rel.max(rel);
        ensure(
            rel < 1e-6,
            format!("run {i}: ledger residual {rel:.2e} exceeds 1e-6 relative"),
        )?;
        ensure(
            id.bounds.0 < id.vf_df && id.vf_df < id.bounds.1,
            format!(
                "run {i}: V_f + D_f = {:.6} does not sit strictly inside ({:.6}, {:.6})",
                id.vf_df, id.bounds.0, id.bounds.1
            ),
        )?;
        min_margin = min_margin.min((id.vf_df - id.bounds.0).min(id.bounds.1 - id.vf_df));
    }
    Ok(format!(
        "ledger closes to {worst_rel:.1e} relative; smallest strict-bound margin {min_margin:.2e}"
    ))
}

// criterion 6: at hundredfold multiplicity the final particle total must
// land in the burst-ledger band, and the measured DVG yield is compared
// against the instantaneous-absorption prediction D_f = beta * eta * C0.
fn criterion_06() -> Check {
    let p = high_burst_params();
    let ino = InoculumSpec::new(100.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let cfg = IntegratorConfig::default();
    let traj = integrate(&p, &ino.initial_state(), &cfg).map_err(|e| e.to_string())?;
    let total = traj.terminal.virions + traj.terminal.dvgs;
    ensure(
        (598.0..=599.0).contains(&total),
        format!("V_f + D_f = {total:.4}, expected within [598, 599] x C0"),
    )?;
    let (_, df_pred) = analytic_high_moi(&p, 100.0, 0.0, 1.0).map_err(|e| e.to_string())?;
    let df = traj.terminal.dvgs;
    let rel = (df - df_pred).abs() / df_pred;
    ensure(
        rel <= 0.10,
        format!(
            "measured D_f = {df:.3} vs instantaneous-absorption prediction {df_pred:.3e} \
             (off by {rel:.1e}, tolerance 0.10); total V_f + D_f = {total:.4} is in band. \
             DVGs released by early bursts are recaptured by cells that are still infected, \
             and each capture bursts delta * eta / kappa further DVGs; the prediction has \
             no such cascade"
        ),
    )?;
    Ok(format!("V_f + D_f = {total:.4} in band; D_f = {df:.3} within 10% of {df_pred:.3e}"))
}

// criterion 7: closed-form plane spectra must match finite-difference
// Jacobian eigenvalues in sign at 1000 random plane points, and every
// closed-form discriminant must be nonnegative.
fn criterion_07() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut compared = 0usize;
    for i in 0..1000 {
        let beta = log_uniform(&mut rng, 1e-6, 1.0);
        let delta = log_uniform(&mut rng, 1.0, 20.0);
        let b = log_uniform(&mut rng, 2.0, 100.0);
        let iota = log_uniform(&mut rng, 0.1, 3.0);
        let alpha = log_uniform(&mut rng, 0.1, 3.0);
        let gamma = if i % 2 == 0 { 0.0 } else { rng.gen_range(0.005..0.2) };
        let p = ModelParams::new(b, beta, delta, iota, alpha)
            .and_then(|p| p.with_decay(gamma))
            .map_err(|e| e.to_string())?;

        let mut coord = || log_uniform(&mut rng, 1e-3, 10.0);
        let (state, disc_coords) = match i % 4 {
            0 => (State::new(0.0, 0.0, 0.0, 0.0, coord(), coord()), None),
            1 => {
                let (cd, d) = (coord(), coord());
                (State::new(0.0, 0.0, cd, 0.0, 0.0, d), Some((0.0, cd)))
            }
            2 => {
                let (c, cd) = (coord(), coord());
                (State::new(c, 0.0, cd, 0.0, 0.0, 0.0), Some((c, cd)))
            }
            _ => (State::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), None),
        };

        // The mixed-plane pair comes from a quadratic; its discriminant is a
        // square plus a nonnegative product and must never go negative.
        if let Some((c, cd)) = disc_coords {
            let disc = (iota * (c + cd) - alpha).powi(2)
                + 4.0 * alpha * iota * p.eta() * (c + cd / p.kappa());
            ensure(disc >= 0.0, format!("sample {i}: discriminant {disc:.3e} is negative"))?;
        }

        let spec = spectrum_at(&p, &state, 0.0).map_err(|e| e.to_string())?;
        let closed = spec.sorted_descending();

        // The vector field is quadratic in the state, so central differences
        // are exact up to roundoff; a generous step buries the roundoff.
        let base = state.to_array();
        let mut jac = [[0.0f64; 6]; 6];
        for c in 0..6 {
            let h = 1e-2 * base[c].abs().max(1.0);
            let mut up = base;
            let mut dn = base;
            up[c] += h;
            dn[c] -= h;
            let fu = vector_field(&p, &State::from_slice(&up)).to_array();
            let fd = vector_field(&p, &State::from_slice(&dn)).to_array();
            for r in 0..6 {
                jac[r][c] = (fu[r] - fd[r]) / (2.0 * h);
            }
        }
        let mut numeric: Vec<f64> = Matrix6::from_fn(|r, c| jac[r][c])
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .collect();
        numeric.sort_by(|a, b| b.total_cmp(a));

        for k in 0..6 {
            if closed[k].abs() > 1e-8 {
                ensure(
                    (closed[k] > 0.0) == (numeric[k] > 0.0),
                    format!(
                        "sample {i} ({:?}): rank {k} closed-form eigenvalue {:.6e} vs numeric {:.6e}",
                        spec.plane, closed[k], numeric[k]
                    ),
                )?;
                compared += 1;
            }
        }
    }
    Ok(format!(
        "{compared} eigenvalue signs agree across 1000 plane points; all discriminants nonnegative"
    ))
}

// criterion 8: the variational sensitivities must match central finite
// differences to 1e-5 at the cell-extinction time of the hundredfold-MOI
// scenario, and interference must lower virions and raise DVGs pointwise.
fn criterion_08() -> Check {
    let p = high_burst_params();
    let y0 = InoculumSpec::new(100.0, 0.75, 1.0).map_err(|e| e.to_string())?.initial_state();
    let cfg = IntegratorConfig::default();

    let probe = integrate(&p, &y0, &cfg).map_err(|e| e.to_string())?;
    let t_c = probe.extinction.cells.ok_or("cells never crossed the extinction threshold")?;

    // dV/dbeta at t_C, analytic vs central differences in beta.
    let beta_sens =
        variational_wrt_param_at(&y0, &p, ParamName::Beta, &cfg, &[t_c]).map_err(|e| e.to_string())?;
    let analytic_dv = beta_sens.samples[0].sens[4];
    let h = 5e-7;
    let at = |beta: f64| -> Result<State, String> {
        let q = ModelParams::new(500.0, beta, 10.0, 0.1, 1.0).map_err(|e| e.to_string())?;
        Ok(integrate_at_times(&q, &y0, &cfg, &[t_c]).map_err(|e| e.to_string())?.samples[0].state)
    };
    let fd_dv = (at(1e-6 + h)?.virions - at(1e-6 - h)?.virions) / (2.0 * h);
    let rel_beta = (analytic_dv - fd_dv).abs() / fd_dv.abs();
    ensure(
        rel_beta < 1e-5,
        format!("dV/dbeta at t_C: analytic {analytic_dv:.8e} vs differenced {fd_dv:.8e} (rel {rel_beta:.1e})"),
    )?;

    // Full initial-condition response matrix at t_C against column-wise
    // central differences.
    let ic = variational_wrt_ic_at(&y0, &p, &cfg, &[t_c]).map_err(|e| e.to_string())?;
    let analytic_m = ic.samples[0].sens;
    let base = y0.to_array();
    let mut fd_m = [[0.0f64; 6]; 6];
    for c in 0..6 {
        let hc = 1e-6 * base[c].abs().max(1.0);
        let mut up = base;
        let mut dn = base;
        up[c] += hc;
        dn[c] -= hc;
        let xu = integrate_at_times(&p, &State::from_slice(&up), &cfg, &[t_c])
            .map_err(|e| e.to_string())?
            .samples[0]
            .state
            .to_array();
        let xd = integrate_at_times(&p, &State::from_slice(&dn), &cfg, &[t_c])
            .map_err(|e| e.to_string())?
            .samples[0]
            .state
            .to_array();
        for r in 0..6 {
            fd_m[r][c] = (xu[r] - xd[r]) / (2.0 * hc);
        }
    }
    let scale = analytic_m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut worst = 0.0f64;
    for r in 0..6 {
        for c in 0..6 {
            let diff = (analytic_m[r][c] - fd_m[r][c]).abs() / scale;
            worst = worst.max(diff);
            ensure(
                diff < 1e-5,
                format!(
                    "initial-condition response [{r}][{c}]: analytic {:.8e} vs differenced {:.8e} \
                     ({diff:.1e} of matrix scale {scale:.3e})",
                    analytic_m[r][c], fd_m[r][c]
                ),
            )?;
        }
    }

    // Interference direction, pointwise along the whole sampled orbit.
    let full = variational_wrt_param(&y0, &p, ParamName::Beta, &cfg).map_err(|e| e.to_string())?;
    let mag = full
        .samples
        .iter()
        .flat_map(|s| s.sens.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let dust = 1e-10 * mag.max(1.0);
    for s in &full.samples {
        ensure(
            s.sens[4] <= dust,
            format!("dV/dbeta = {:.3e} > 0 at t = {:.2}", s.sens[4], s.t),
        )?;
        ensure(
            s.sens[5] >= -dust,
            format!("dD/dbeta = {:.3e} < 0 at t = {:.2}", s.sens[5], s.t),
        )?;
    }
    Ok(format!(
        "dV/dbeta matches differencing to {rel_beta:.1e}, response matrix to {worst:.1e}; \
         interference lowers V and raises D at all {} samples",
        full.samples.len()
    ))
}

/// Ground truth for the recovery fit: a decay-carrying scenario whose virion
/// titers are observed 21 times with 5% lognormal noise. The observation
/// grid concentrates where each parameter is identifiable: the adsorption
/// dip (seconds) pins iota, the production ramp pins alpha, the peak pins
/// the burst size, and the late tail pins the decay rate.
const TRUTH: Candidate = Candidate {
    b: 78.0,
    beta: 1e-8,
    delta: 1.0,
    alpha: 0.1827,
    iota: 0.0027,
    gamma: 0.0154,
    v0: 1.5e6,
    d0: 1.0,
};

fn synthetic_titers() -> Result<Dataset, String> {
    // Log-spaced samples through the adsorption transient (sub-second to
    // seconds), then ramp, peak, and decay tail. The transient's depth is
    // about one virion per cell whatever the absorption rate, so only its
    // timing identifies the infection rate; a grid that skips it leaves a
    // family of fast-absorption impostors fitting the rest of the curve.
    let times = [
        0.0, 0.0001, 0.0002, 0.0004, 0.0008, 0.0016, 0.0032, 0.0064, 0.25, 0.5, 1.0, 2.0, 3.0,
        4.0, 5.0, 6.0, 8.0, 12.0, 16.0, 24.0, 36.0, 48.0, 60.0, 72.0,
    ];
    let p = ModelParams::new(TRUTH.b, TRUTH.beta, TRUTH.delta, TRUTH.iota, TRUTH.alpha)
        .and_then(|p| p.with_decay(TRUTH.gamma))
        .map_err(|e| e.to_string())?;
    let cells = TRUTH.v0 / 1.8;
    let s0 = State::new(cells, 0.0, 0.0, 0.0, TRUTH.v0, TRUTH.d0);
    let traj =
        integrate_at_times(&p, &s0, &IntegratorConfig::default(), &times).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let points = traj
        .samples
        .iter()
        .map(|s| {
            let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            (s.t, s.state.virions * (0.05 * z).exp())
        })
        .collect();
    Dataset::new(points, 1.8, 1.0, cells).map_err(|e| e.to_string())
}

struct Recovery {
    champion: Candidate,
    dataset: Dataset,
    cfg: FitConfig,
}

// criterion 9: five seeded populations of 600 over 2000 generations must
// recover the burst size, lysis rate, infection rate and decay rate of the
// synthetic scenario within 20%, with nonincreasing per-run minima.
fn criterion_09(out: &mut Option<Recovery>) -> Check {
    let dataset = synthetic_titers()?;
    let mut cfg = FitConfig { generations: 2000, rng_seed: 0, ..FitConfig::default() };
    // Fresh-stock prior: a low-passage inoculum carries at most ~1e3 DVGs.
    // Open to 1e7, the virion-only series admits impostors that convert the
    // whole monolayer to coinfection at t = 0 and mimic the yield.
    cfg.ranges.d0 = GeneRange { min: 1.0, max: 1e3, scale: AxisScale::Log };
    let result = batch_fit(&dataset, &cfg).map_err(|e| e.to_string())?;
    let stats = result.batch_stats.clone().ok_or("batch statistics missing")?;
    *out = Some(Recovery { champion: result.best, dataset, cfg });

    for (b, history) in stats.histories.iter().enumerate() {
        for pair in history.windows(2) {
            ensure(
                pair[1].min <= pair[0].min,
                format!("batch {b}: minimum cost rose from {:.6} to {:.6}", pair[0].min, pair[1].min),
            )?;
        }
    }

    let best = result.best;
    let checks = [
        ("B", best.b, TRUTH.b),
        ("alpha", best.alpha, TRUTH.alpha),
        ("iota", best.iota, TRUTH.iota),
        ("gamma", best.gamma, TRUTH.gamma),
    ];
    let mut misses = Vec::new();
    for (name, got, want) in checks {
        let rel = (got - want) / want;
        if rel.abs() > 0.20 {
            misses.push(format!("{name} = {got:.5} vs {want:.5} ({:+.1}%)", rel * 100.0));
        }
    }
    let summary = format!(
        "champion B = {:.2}, alpha = {:.4}, iota = {:.5}, gamma = {:.5}, cost {:.4} \
         (winners' costs {:?})",
        best.b,
        best.alpha,
        best.iota,
        best.gamma,
        result.cost,
        stats.costs.iter().map(|c| (c * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    ensure(misses.is_empty(), format!("outside 20%: {}; {summary}", misses.join(", ")))?;
    Ok(summary)
}

// criterion 10: with the champion's DVG inoculum floored, sweeping the
// interference branching and yield over their full search ranges must move
// the cost by less than 1%.
fn criterion_10(rec: &Option<Recovery>) -> Check {
    let rec = rec.as_ref().ok_or("no champion available (the recovery fit crashed)")?;
    let mut base = rec.champion;
    base.d0 = 1.0; // floor of the DVG-inoculum search range
    let f_ref = fit_cost(&base, &rec.dataset, &rec.cfg.penalty, &rec.cfg.integrator);
    let mut worst = 0.0f64;
    let mut worst_at = (base.beta, base.delta);
    for bi in 0..9 {
        for di in 0..9 {
            let mut c = base;
            c.beta = (1e-8f64.ln() + bi as f64 / 8.0 * (1.0f64.ln() - 1e-8f64.ln())).exp();
            c.delta = 1.0 + di as f64 / 8.0 * 199.0;
            let f = fit_cost(&c, &rec.dataset, &rec.cfg.penalty, &rec.cfg.integrator);
            let dev = (f - f_ref).abs() / f_ref.abs();
            if dev > worst {
                worst = dev;
                worst_at = (c.beta, c.delta);
            }
        }
    }
    ensure(
        worst < 0.01,
        format!(
            "cost at the floored champion moves {:.1}% across the interference sweep \
             (reference {f_ref:.4}, worst at beta = {:.2e}, delta = {:.0}); tolerance 1%. \
             High branching halves the effective yield B/(1+beta), which the titer data resolve",
            worst * 100.0,
            worst_at.0,
            worst_at.1
        ),
    )?;
    Ok(format!("cost varies {:.3}% over the 9x9 interference sweep (reference {f_ref:.4})", worst * 100.0))
}

// criterion 11: scans and fits must be bit-identical across thread counts
// and across repeated same-seed runs.
fn criterion_11() -> Check {
    let pool = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| e.to_string())
    };
    let one = pool(1)?;
    let two = pool(2)?;

    let axis = |name| AxisSpec { name, min: 1.0 / 9.0, max: 1.0, steps: 9, scale: AxisScale::Linear };
    let spec = GridSpec {
        x_axis: axis(AxisName::V0),
        y_axis: axis(AxisName::D0),
        params: ModelParams::new(10.0, 0.5, 20.0, 100.0, 1.0).expect("valid parameters"),
        inoculum: InoculumSpec::new(0.5, 0.5, 1.0).expect("valid inoculum"),
    };
    let cfg = IntegratorConfig::default();
    let a = one.install(|| scan_grid(&spec, &cfg)).map_err(|e| e.to_string())?;
    let b = two.install(|| scan_grid(&spec, &cfg)).map_err(|e| e.to_string())?;
    for (ca, cb) in a.cells.iter().zip(&b.cells) {
        ensure(
            ca.class == cb.class
                && ca.vf.to_bits() == cb.vf.to_bits()
                && ca.df.to_bits() == cb.df.to_bits(),
            format!("scan node ({}, {}) differs between 1 and 2 workers", ca.x, ca.y),
        )?;
    }

    let dataset = synthetic_titers()?;
    let fit_cfg = FitConfig { population: 60, generations: 25, batches: 2, rng_seed: 42, ..FitConfig::default() };
    let fa = one.install(|| batch_fit(&dataset, &fit_cfg)).map_err(|e| e.to_string())?;
    let fb = two.install(|| batch_fit(&dataset, &fit_cfg)).map_err(|e| e.to_string())?;
    let fc = one.install(|| batch_fit(&dataset, &fit_cfg)).map_err(|e| e.to_string())?;
    for (label, other) in [("1 vs 2 workers", &fb), ("repeat on 1 worker", &fc)] {
        ensure(
            fa.cost.to_bits() == other.cost.to_bits(),
            format!("champion cost differs ({label})"),
        )?;
        for (x, y) in fa.best.genes().iter().zip(other.best.genes()) {
            ensure(x.to_bits() == y.to_bits(), format!("champion genes differ ({label})"))?;
        }
    }
    Ok(format!(
        "81-node scan and 2-batch fit are bit-identical across worker counts; fit champion cost {:.4}",
        fa.cost
    ))
}

// criterion 12: with slow decay the orbit must first visit the neighborhood
// of the decay-free end state's plane while most of the particle pool is
// still standing, and only then drain away.
fn criterion_12() -> Check {
    let p0 = high_burst_params();
    let y0 = InoculumSpec::new(0.01, 0.75, 1.0).map_err(|e| e.to_string())?.initial_state();
    let cfg = IntegratorConfig::default();

    let free = integrate(&p0, &y0, &cfg).map_err(|e| e.to_string())?;
    ensure(
        classify_omega_limit(&free, cfg.extinction_threshold) == PlaneClass::VD,
        "decay-free orbit did not settle on the extinct-culture plane",
    )?;
    let pool_ref = free.terminal.virions + free.terminal.dvgs;

    let pd = p0.with_decay(0.01).map_err(|e| e.to_string())?; // decay at 1% of the lysis rate
    let decayed = integrate(&pd, &y0, &cfg).map_err(|e| e.to_string())?;

    // Distance to the plane that carries every decay-free end state is the
    // norm of the four cell compartments; "before total decay" restricts the
    // search to samples still holding at least half the reference pool.
    let mut min_plane = f64::INFINITY;
    let mut visit = (0.0, 0.0);
    let mut min_point = f64::INFINITY;
    for s in &decayed.samples {
        let cells = [s.state.cells, s.state.cells_v, s.state.cells_d, s.state.cells_dv];
        let plane_dist = cells.iter().map(|x| x * x).sum::<f64>().sqrt();
        let pool = s.state.virions + s.state.dvgs;
        if pool >= 0.5 * pool_ref && plane_dist < min_plane {
            min_plane = plane_dist;
            visit = (s.t, pool);
        }
        let d = s.state.to_array();
        let t = free.terminal.to_array();
        let point = (0..6).map(|k| (d[k] - t[k]).powi(2)).sum::<f64>().sqrt();
        min_point = min_point.min(point);
    }
    ensure(
        min_plane < 1e-3,
        format!(
            "closest approach to the decay-free plane is {min_plane:.3e} while at least half \
             the reference pool of {pool_ref:.1} survives; required 1e-3"
        ),
    )?;
    Ok(format!(
        "orbit comes within {min_plane:.1e} of the decay-free plane at t = {:.0} h with {:.0}% \
         of the reference pool standing; closest full-state pass {min_point:.2}",
        visit.0,
        100.0 * visit.1 / pool_ref
    ))
}

fn main() {
    let mut failures = 0usize;
    let started = Instant::now();

    run(1, "burst-size stability thresholds", &mut failures, criterion_01);
    run(2, "tristable basin scan", &mut failures, criterion_02);
    run(3, "supercritical global attraction", &mut failures, criterion_03);

    let mut ledger: Option<Vec<LedgerRun>> = None;
    run(4, "lysis-event conservation", &mut failures, || criterion_04(&mut ledger));
    run(5, "final-particle identity and bounds", &mut failures, || criterion_05(&ledger));

    run(6, "high-MOI burst ledger", &mut failures, criterion_06);
    run(7, "closed-form spectra against numerical Jacobians", &mut failures, criterion_07);
    run(8, "variational sensitivities against finite differences", &mut failures, criterion_08);

    let mut recovery: Option<Recovery> = None;
    run(9, "synthetic-data parameter recovery", &mut failures, || criterion_09(&mut recovery));
    run(10, "interference-sweep cost flatness", &mut failures, || criterion_10(&recovery));

    run(11, "bitwise determinism across worker counts", &mut failures, criterion_11);
    run(12, "decay ghost of the decay-free equilibria", &mut failures, criterion_12);

    println!(
        "acceptance: {}/12 criteria passed in {:.0}s",
        12 - failures,
        started.elapsed().as_secs_f64()
    );
    std::process::exit(if failures == 0 { 0 } else { 1 });
}
