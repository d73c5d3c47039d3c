//! First-order variational systems: how a solution moves when one kinetic
//! parameter or one initial coordinate moves.
//!
//! Parameter subjects integrate the 12-dimensional augmentation
//! `d/dt s = J(x) s + df/dtheta(x)`, `s(0) = 0`; the initial-condition
//! subject integrates the 42-dimensional `dM/dt = J(x) M`, `M(0) = Id`.
//! Both ride the same adaptive stepper as plain runs, so tolerances and
//! clamping behave identically. Once a cell compartment clamps to zero its
//! sensitivities are frozen at their current values: the flow is not
//! differentiable through the clamp, and holding the value is the
//! documented convention.

use crate::integrator::{
    drive, AugSystem, ExtinctionTimes, IntegrateError, IntegratorConfig, SamplePlan, StopReason,
};
use crate::model::{jacobian, vector_field, ModelParams, ParamError, State, STATE_DIM};
use serde::{Deserialize, Serialize};
use std::io;

/// Wire names follow the kinetic notation: `B`, `beta`, `delta`, `iota`,
/// `alpha`. Degradation is deliberately absent: it shifts every eigenvalue
/// uniformly and is fitted, not analyzed, downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamName {
    #[serde(rename = "B")]
    BurstSize,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "iota")]
    Iota,
    #[serde(rename = "alpha")]
    Alpha,
}

impl ParamName {
    pub const ALL: [ParamName; 5] =
        [ParamName::BurstSize, ParamName::Beta, ParamName::Delta, ParamName::Iota, ParamName::Alpha];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamName::BurstSize => "B",
            ParamName::Beta => "beta",
            ParamName::Delta => "delta",
            ParamName::Iota => "iota",
            ParamName::Alpha => "alpha",
        }
    }
}

/// What a sensitivity trajectory differentiates with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Param(ParamName),
    /// Directional derivative for the infection-to-lysis ratio with the
    /// lysis rate held fixed: `d x / d(iota/alpha) = alpha * dx/diota`.
    IotaOverAlpha,
    InitialConditions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivitySample<P> {
    pub t: f64,
    pub state: State,
    pub sens: P,
}

/// A base orbit bundled with its first-order response, sampled on the same
/// grid a plain run would use.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityTrajectory<P> {
    pub subject: Subject,
    pub samples: Vec<SensitivitySample<P>>,
    pub terminal: SensitivitySample<P>,
    pub extinction: ExtinctionTimes,
    pub stop: StopReason,
}

/// Sensitivity of the six compartments to one scalar parameter.
pub type ParamSensitivity = SensitivityTrajectory<[f64; 6]>;
/// Row-major matrix `M[r][c] = d x_r(t) / d x_c(0)`.
pub type IcSensitivity = SensitivityTrajectory<[[f64; 6]; 6]>;

const SENS: usize = STATE_DIM; // offset of the sensitivity block
const PARAM_DIM: usize = 2 * STATE_DIM;
const IC_DIM: usize = STATE_DIM + STATE_DIM * STATE_DIM;

/// Explicit partial of the vector field with respect to `param`, holding the
/// state fixed. Derived quantities contribute through
/// `deta/dB = 1/(1+beta)`, `deta/dbeta = -B/(1+beta)^2`,
/// `dkappa/dbeta = -delta/(1+beta)^2` and `dkappa/ddelta = 1/(1+beta)`.
fn param_forcing(p: &ModelParams, param: ParamName, y: &[f64]) -> [f64; 6] {
    let (b, beta, delta, alpha) = (p.burst_size(), p.beta(), p.delta(), p.alpha());
    let (eta, kappa) = (p.eta(), p.kappa());
    let (c, cv, cd, cdv, v, d) = (y[0], y[1], y[2], y[3], y[4], y[5]);
    let load = cv + cdv / kappa;
    let mut g = [0.0; 6];
    match param {
        ParamName::BurstSize => {
            let deta = 1.0 / (1.0 + beta);
            g[4] = alpha * deta * load;
            g[5] = alpha * beta * deta * load + alpha * delta * deta * cdv / kappa;
        }
        ParamName::Beta => {
            let deta = -b / (1.0 + beta).powi(2);
            let dkappa = -delta / (1.0 + beta).powi(2);
            let dinv = -dkappa / kappa.powi(2); // d(1/kappa)/dbeta
            g[4] = alpha * deta * load + alpha * eta * dinv * cdv;
            g[5] = alpha * (eta + beta * deta) * load
                + alpha * beta * eta * dinv * cdv
                + alpha * delta * deta * cdv / kappa
                + alpha * delta * eta * dinv * cdv;
        }
        ParamName::Delta => {
            let dinv = -1.0 / ((1.0 + beta) * kappa.powi(2)); // d(1/kappa)/ddelta
            g[4] = alpha * eta * dinv * cdv;
            g[5] = alpha * beta * eta * dinv * cdv + alpha * eta * cdv / kappa + alpha * delta * eta * dinv * cdv;
        }
        ParamName::Iota => {
            g[0] = -c * (v + d);
            g[1] = c * v - cv * d;
            g[2] = c * d - cd * v;
            g[3] = cd * v + cv * d;
            g[4] = -v * (c + cd);
            g[5] = -d * (c + cv);
        }
        ParamName::Alpha => {
            g[1] = -cv;
            g[3] = -cdv;
            g[4] = eta * load;
            g[5] = beta * eta * load + delta * eta * cdv / kappa;
        }
    }
    g
}

struct ParamVariational<'a> {
    p: &'a ModelParams,
    param: ParamName,
}

impl AugSystem for ParamVariational<'_> {
    fn dim(&self) -> usize {
        PARAM_DIM
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let s = State::from_slice(y);
        dy[..STATE_DIM].copy_from_slice(&vector_field(self.p, &s).to_array());
        let j = jacobian(self.p, &s);
        let g = param_forcing(self.p, self.param, y);
        for r in 0..STATE_DIM {
            let mut acc = g[r];
            for c in 0..STATE_DIM {
                acc += j[r][c] * y[SENS + c];
            }
            dy[SENS + r] = acc;
        }
    }

    fn pinned_on_clamp(&self, k: usize) -> Vec<usize> {
        vec![k, SENS + k]
    }
}

struct IcVariational<'a> {
    p: &'a ModelParams,
}

impl AugSystem for IcVariational<'_> {
    fn dim(&self) -> usize {
        IC_DIM
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let s = State::from_slice(y);
        dy[..STATE_DIM].copy_from_slice(&vector_field(self.p, &s).to_array());
        let j = jacobian(self.p, &s);
        for r in 0..STATE_DIM {
            for c in 0..STATE_DIM {
                let mut acc = 0.0;
                for m in 0..STATE_DIM {
                    acc += j[r][m] * y[SENS + STATE_DIM * m + c];
                }
                dy[SENS + STATE_DIM * r + c] = acc;
            }
        }
    }

    fn pinned_on_clamp(&self, k: usize) -> Vec<usize> {
        let mut v = vec![k];
        v.extend((0..STATE_DIM).map(|c| SENS + STATE_DIM * k + c));
        v
    }
}

fn unpack_vec(y: &[f64]) -> [f64; 6] {
    y[SENS..PARAM_DIM].try_into().unwrap()
}

fn unpack_mat(y: &[f64]) -> [[f64; 6]; 6] {
    let mut m = [[0.0; 6]; 6];
    for (r, row) in m.iter_mut().enumerate() {
        row.copy_from_slice(&y[SENS + STATE_DIM * r..SENS + STATE_DIM * (r + 1)]);
    }
    m
}

fn collect<P>(
    subject: Subject,
    run: crate::integrator::RawRun,
    unpack: impl Fn(&[f64]) -> P,
) -> SensitivityTrajectory<P> {
    let mk = |t: f64, y: &[f64]| SensitivitySample { t, state: State::from_slice(y), sens: unpack(y) };
    SensitivityTrajectory {
        samples: run.samples.iter().map(|(t, y)| mk(*t, y)).collect(),
        terminal: mk(run.terminal_time, &run.terminal),
        extinction: run.extinction,
        stop: run.stop,
        subject,
    }
}

fn param_initial(state0: &State) -> [f64; PARAM_DIM] {
    let mut y0 = [0.0; PARAM_DIM];
    y0[..STATE_DIM].copy_from_slice(&state0.to_array());
    y0
}

fn ic_initial(state0: &State) -> [f64; IC_DIM] {
    let mut y0 = [0.0; IC_DIM];
    y0[..STATE_DIM].copy_from_slice(&state0.to_array());
    for k in 0..STATE_DIM {
        y0[SENS + STATE_DIM * k + k] = 1.0;
    }
    y0
}

/// Sensitivity of the orbit through `state0` to `param`, on the regular
/// output grid of `cfg`.
pub fn variational_wrt_param(
    state0: &State,
    p: &ModelParams,
    param: ParamName,
    cfg: &IntegratorConfig,
) -> Result<ParamSensitivity, IntegrateError> {
    let sys = ParamVariational { p, param };
    let run = drive(&sys, &param_initial(state0), cfg, SamplePlan::Every(cfg.sample_dt))?;
    Ok(collect(Subject::Param(param), run, unpack_vec))
}

/// Same as [`variational_wrt_param`], sampled exactly at `times`.
pub fn variational_wrt_param_at(
    state0: &State,
    p: &ModelParams,
    param: ParamName,
    cfg: &IntegratorConfig,
    times: &[f64],
) -> Result<ParamSensitivity, IntegrateError> {
    let sys = ParamVariational { p, param };
    let run = drive(&sys, &param_initial(state0), cfg, SamplePlan::At(times))?;
    Ok(collect(Subject::Param(param), run, unpack_vec))
}

/// Sensitivity of the orbit through `state0` to its own initial coordinates.
pub fn variational_wrt_ic(
    state0: &State,
    p: &ModelParams,
    cfg: &IntegratorConfig,
) -> Result<IcSensitivity, IntegrateError> {
    let sys = IcVariational { p };
    let run = drive(&sys, &ic_initial(state0), cfg, SamplePlan::Every(cfg.sample_dt))?;
    Ok(collect(Subject::InitialConditions, run, unpack_mat))
}

/// Same as [`variational_wrt_ic`], sampled exactly at `times`.
pub fn variational_wrt_ic_at(
    state0: &State,
    p: &ModelParams,
    cfg: &IntegratorConfig,
    times: &[f64],
) -> Result<IcSensitivity, IntegrateError> {
    let sys = IcVariational { p };
    let run = drive(&sys, &ic_initial(state0), cfg, SamplePlan::At(times))?;
    Ok(collect(Subject::InitialConditions, run, unpack_mat))
}

/// Sensitivity to the infection-to-lysis ratio `iota/alpha`, defined as the
/// directional derivative that moves `iota` with `alpha` held fixed:
/// `alpha * dx/diota`. The variational system is linear in the sensitivity,
/// so the scaling is exact; both raw sensitivities remain available through
/// [`variational_wrt_param`].
pub fn ratio_sensitivity(
    state0: &State,
    p: &ModelParams,
    cfg: &IntegratorConfig,
) -> Result<ParamSensitivity, IntegrateError> {
    let mut traj = variational_wrt_param(state0, p, ParamName::Iota, cfg)?;
    let a = p.alpha();
    for s in traj.samples.iter_mut().chain(std::iter::once(&mut traj.terminal)) {
        for v in s.sens.iter_mut() {
            *v *= a;
        }
    }
    traj.subject = Subject::IotaOverAlpha;
    Ok(traj)
}

const VAR_NAMES: [&str; 6] = ["C", "Cv", "Cd", "Cdv", "V", "D"];

/// CSV export `t,dC,dCv,dCd,dCdv,dV,dD` at full precision.
pub fn write_param_csv<W: io::Write>(traj: &ParamSensitivity, w: &mut W) -> io::Result<()> {
    writeln!(w, "t,dC,dCv,dCd,dCdv,dV,dD")?;
    for s in &traj.samples {
        write!(w, "{:.16e}", s.t)?;
        for v in s.sens {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// CSV export of the full matrix, row-major: 36 columns named
/// `d<var>_d<var0>0` after `t`.
pub fn write_ic_csv<W: io::Write>(traj: &IcSensitivity, w: &mut W) -> io::Result<()> {
    write!(w, "t")?;
    for r in VAR_NAMES {
        for c in VAR_NAMES {
            write!(w, ",d{r}_d{c}0")?;
        }
    }
    writeln!(w)?;
    for s in &traj.samples {
        write!(w, "{:.16e}", s.t)?;
        for row in s.sens {
            for v in row {
                write!(w, ",{v:.16e}")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// What a finite-difference verification perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdSubject {
    Param(ParamName),
    /// Index (0..6) of the initial coordinate to perturb; compares one
    /// column of the sensitivity matrix.
    InitialCoordinate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FdScheme {
    Central,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdRow {
    pub h: f64,
    /// Largest |finite difference - analytic sensitivity| over all sampled
    /// times and compartments.
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub subject: FdSubject,
    pub scheme: FdScheme,
    pub rows: Vec<FdRow>,
    /// Log-log slope of error against step size (NaN when errors sit at the
    /// numerical floor and there is nothing to resolve).
    pub observed_order: f64,
    /// Observed order within [0.8, 2.2], or every error at the floor.
    pub passes: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum FdError {
    #[error("initial-coordinate index {0} out of range (state has 6)")]
    BadIndex(usize),
    #[error("no step sizes supplied")]
    NoSteps,
    #[error("perturbed parameters invalid: {0}")]
    Param(#[from] ParamError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

fn reparam(p: &ModelParams, param: ParamName, value: f64) -> Result<ModelParams, ParamError> {
    let (mut b, mut beta, mut delta, mut iota, mut alpha) =
        (p.burst_size(), p.beta(), p.delta(), p.iota(), p.alpha());
    match param {
        ParamName::BurstSize => b = value,
        ParamName::Beta => beta = value,
        ParamName::Delta => delta = value,
        ParamName::Iota => iota = value,
        ParamName::Alpha => alpha = value,
    }
    ModelParams::new(b, beta, delta, iota, alpha)?.with_decay(p.gamma())
}

fn param_value(p: &ModelParams, param: ParamName) -> f64 {
    match param {
        ParamName::BurstSize => p.burst_size(),
        ParamName::Beta => p.beta(),
        ParamName::Delta => p.delta(),
        ParamName::Iota => p.iota(),
        ParamName::Alpha => p.alpha(),
    }
}

fn shift_ic(state0: &State, idx: usize, h: f64) -> State {
    let mut a = state0.to_array();
    a[idx] += h;
    State::from_slice(&a)
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |(num, den), (x, y)| (num + (x - mx) * (y - my), den + (x - mx) * (x - mx)));
    num / den
}

/// Verifies one analytic sensitivity against finite differences of fully
/// re-integrated perturbed orbits, one row per step size. Central
/// differences are used whenever every downward parameter step stays in the
/// valid domain (initial coordinates always qualify); otherwise forward
/// differences, whose observed order drops from ~2 to ~1 but still passes.
pub fn fd_check(
    subject: FdSubject,
    state0: &State,
    p: &ModelParams,
    cfg: &IntegratorConfig,
    steps: &[f64],
) -> Result<FdReport, FdError> {
    if steps.is_empty() {
        return Err(FdError::NoSteps);
    }
    // Analytic sensitivities on the run's own grid define the comparison
    // times; perturbed runs are sampled at exactly those times. Times at or
    // past the first clamp event are excluded (with one output interval of
    // guard): frozen sensitivities are a convention, not the derivative of
    // the clamped flow, and perturbed orbits clamp at slightly shifted times.
    let (mut times, mut base, mut analytic, ext): (Vec<f64>, Vec<State>, Vec<[f64; 6]>, ExtinctionTimes) =
        match subject {
            FdSubject::Param(param) => {
                let traj = variational_wrt_param(state0, p, param, cfg)?;
                (
                    traj.samples.iter().map(|s| s.t).collect(),
                    traj.samples.iter().map(|s| s.state).collect(),
                    traj.samples.iter().map(|s| s.sens).collect(),
                    traj.extinction,
                )
            }
            FdSubject::InitialCoordinate(j) => {
                if j >= STATE_DIM {
                    return Err(FdError::BadIndex(j));
                }
                let traj = variational_wrt_ic(state0, p, cfg)?;
                (
                    traj.samples.iter().map(|s| s.t).collect(),
                    traj.samples.iter().map(|s| s.state).collect(),
                    traj.samples.iter().map(|s| std::array::from_fn(|r| s.sens[r][j])).collect(),
                    traj.extinction,
                )
            }
        };
    let first_clamp = [ext.cells, ext.cells_v, ext.cells_d, ext.cells_dv]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    let cutoff = first_clamp - cfg.sample_dt;
    let kept = times.iter().take_while(|t| **t < cutoff).count().max(1);
    times.truncate(kept);
    base.truncate(kept);
    analytic.truncate(kept);

    let scheme = match subject {
        FdSubject::Param(param) => {
            let v0 = param_value(p, param);
            if steps.iter().all(|h| reparam(p, param, v0 - h).is_ok()) {
                FdScheme::Central
            } else {
                FdScheme::Forward
            }
        }
        FdSubject::InitialCoordinate(_) => FdScheme::Central,
    };

    let run_at = |p: &ModelParams, y0: &State| -> Result<Vec<State>, FdError> {
        let traj = crate::integrator::integrate_at_times(p, y0, cfg, &times)?;
        Ok(traj.samples.iter().map(|s| s.state).collect())
    };
    let perturbed = |h: f64| -> Result<(Vec<State>, Option<Vec<State>>), FdError> {
        match (subject, scheme) {
            (FdSubject::Param(param), FdScheme::Central) => {
                let v0 = param_value(p, param);
                let plus = run_at(&reparam(p, param, v0 + h)?, state0)?;
                let minus = run_at(&reparam(p, param, v0 - h)?, state0)?;
                Ok((plus, Some(minus)))
            }
            (FdSubject::Param(param), FdScheme::Forward) => {
                let v0 = param_value(p, param);
                Ok((run_at(&reparam(p, param, v0 + h)?, state0)?, None))
            }
            (FdSubject::InitialCoordinate(j), _) => {
                let plus = run_at(p, &shift_ic(state0, j, h))?;
                let minus = run_at(p, &shift_ic(state0, j, -h))?;
                Ok((plus, Some(minus)))
            }
        }
    };

    let mut rows = Vec::with_capacity(steps.len());
    for &h in steps {
        let (plus, minus) = perturbed(h)?;
        let mut worst = 0.0f64;
        for (i, s) in analytic.iter().enumerate() {
            let hi = plus[i].to_array();
            let lo = minus.as_ref().map_or_else(|| base[i].to_array(), |m| m[i].to_array());
            let denom = if minus.is_some() { 2.0 * h } else { h };
            for k in 0..STATE_DIM {
                worst = worst.max(((hi[k] - lo[k]) / denom - s[k]).abs());
            }
        }
        rows.push(FdRow { h, max_abs_error: worst });
    }

    let sens_scale = analytic.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-9 * (1.0 + sens_scale);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.max_abs_error > 0.0)
        .map(|r| (r.h.ln(), r.max_abs_error.ln()))
        .collect();
    let observed_order = if pts.len() >= 2 { ls_slope(&pts) } else { f64::NAN };
    let passes = (0.8..=2.2).contains(&observed_order) || rows.iter().all(|r| r.max_abs_error <= floor);
    Ok(FdReport { subject, scheme, rows, observed_order, passes })
}
