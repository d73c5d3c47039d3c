//! One handler per subcommand. Each returns the one-line JSON summary that
//! goes to standard output; artifacts land in the resolved output
//! directory via atomic writes.

use crate::config::{CommandName, RunConfig, SCHEMA_VERSION};
use crate::io;
use hvdvg::integrator::integrate;
use hvdvg::sensitivity::{write_ic_csv, write_param_csv, FdSubject};
use hvdvg::{
    attracting_ratio_threshold, batch_fit, end_state_cloud, estimate_rates, final_state_identity,
    fit_cost, ga_fit, ratio_sensitivity, scan_grid, spectrum_at, stability_case,
    variational_wrt_ic, variational_wrt_ic_at, variational_wrt_param, variational_wrt_param_at,
    Dataset, FdReport, FitError, InoculumSpec, IntegratorConfig, ModelParams, State, Subject,
    Trajectory,
};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Config-class failures exit 2, runtime failures exit 1; both print a
/// machine-readable error document on standard error.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn config<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub struct Context {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    pub prefix: String,
}

/// Loads and validates the config document, then resolves where outputs go:
/// `--out` beats `HVDVG_OUT_DIR` beats the config's `out_dir` beats the
/// working directory.
pub fn context(path: &Path, invoked: CommandName, out_flag: Option<PathBuf>) -> Result<Context, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate(invoked).map_err(CliError::Config)?;
    let dir = out_flag
        .or_else(|| std::env::var_os("HVDVG_OUT_DIR").map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let prefix = cfg.out_prefix.clone().unwrap_or_else(|| invoked.as_str().to_string());
    Ok(Context { cfg, dir, prefix })
}

impl Context {
    fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{suffix}", self.prefix))
    }

    fn model(&self) -> ModelParams {
        self.cfg.model.expect("validated")
    }

    /// Re-validates the inoculum: serde fills the struct without checking
    /// invariants.
    fn inoculum(&self) -> Result<InoculumSpec, CliError> {
        let raw = self.cfg.inoculum.expect("validated");
        InoculumSpec::new(raw.moi, raw.hv_fraction, raw.cells).map_err(config)
    }

    fn integrator(&self) -> Result<IntegratorConfig, CliError> {
        let integ = self.cfg.integrator.unwrap_or_default();
        integ.validate().map_err(config)?;
        Ok(integ)
    }

    fn run_trajectory(&self) -> Result<(ModelParams, InoculumSpec, Trajectory), CliError> {
        let p = self.model();
        let ino = self.inoculum()?;
        let traj = integrate(&p, &ino.initial_state(), &self.integrator()?).map_err(runtime)?;
        Ok((p, ino, traj))
    }
}

pub fn simulate(ctx: &Context) -> Result<String, CliError> {
    let (_, _, traj) = ctx.run_trajectory()?;
    let csv_path = ctx.path("trajectory.csv");
    io::write_atomic(&csv_path, io::trajectory_csv(&traj).as_bytes()).map_err(runtime)?;
    let run = json!({
        "schema_version": SCHEMA_VERSION,
        "stop": traj.stop,
        "terminal_time": traj.terminal_time,
        "terminal": traj.terminal,
        "extinction": traj.extinction,
        "exposure_integrals": {
            "int_cv": traj.int_cv,
            "int_cdv": traj.int_cdv,
            "int_contact": traj.int_contact,
        },
        "lysis_counts": {"iv": traj.iv, "idv": traj.idv},
        "steps": traj.steps,
    });
    let json_path = ctx.path("run.json");
    io::write_atomic(&json_path, to_pretty(&run).as_bytes()).map_err(runtime)?;
    Ok(json!({
        "command": "simulate",
        "stop": traj.stop,
        "terminal_time": traj.terminal_time,
        "samples": traj.samples.len(),
        "outputs": [csv_path, json_path],
    })
    .to_string())
}

pub fn scan(ctx: &Context) -> Result<String, CliError> {
    let grid = ctx.cfg.grid.clone().expect("validated");
    let result = scan_grid(&grid, &ctx.integrator()?).map_err(config)?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv).map_err(runtime)?;
    let csv_path = ctx.path("grid.csv");
    io::write_atomic(&csv_path, &csv).map_err(runtime)?;
    let sidecar_path = ctx.path("grid.json");
    io::write_atomic(&sidecar_path, result.sidecar_json().as_bytes()).map_err(runtime)?;

    let mut classes: BTreeMap<&'static str, usize> = BTreeMap::new();
    for cell in &result.cells {
        *classes.entry(cell.class.as_str()).or_default() += 1;
    }
    Ok(json!({
        "command": "scan",
        "nodes": result.cells.len(),
        "classes": classes,
        "elapsed_s": result.elapsed.as_secs_f64(),
        "outputs": [csv_path, sidecar_path],
    })
    .to_string())
}

pub fn cloud(ctx: &Context) -> Result<String, CliError> {
    let grid = ctx.cfg.grid.clone().expect("validated");
    let integ = ctx.integrator()?;
    let report = end_state_cloud(&grid, &integ).map_err(config)?;
    let csv_path = ctx.path("cloud.csv");
    io::write_atomic(&csv_path, io::cloud_csv(&report).as_bytes()).map_err(runtime)?;
    let sidecar = json!({
        "schema_version": SCHEMA_VERSION,
        "grid": grid,
        "integrator": integ,
        "off_regime_nodes": report.off_regime_nodes,
    });
    let sidecar_path = ctx.path("cloud.json");
    io::write_atomic(&sidecar_path, to_pretty(&sidecar).as_bytes()).map_err(runtime)?;
    Ok(json!({
        "command": "cloud",
        "points": report.points.len(),
        "off_regime_nodes": report.off_regime_nodes,
        "outputs": [csv_path, sidecar_path],
    })
    .to_string())
}

pub fn estimate(ctx: &Context) -> Result<String, CliError> {
    let (p, ino, traj) = ctx.run_trajectory()?;
    let report = estimate_rates(&traj, &p, ino.cells, true).map_err(runtime)?;
    // The strict particle ledger only closes without decay and with every
    // cell consumed; carry it when available instead of failing the run.
    let identity = final_state_identity(&traj, &p, ino.moi, ino.cells).ok();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "estimates": report,
        "identity": identity,
    });
    let json_path = ctx.path("estimates.json");
    io::write_atomic(&json_path, to_pretty(&doc).as_bytes()).map_err(runtime)?;
    Ok(json!({
        "command": "estimate",
        "alpha_hat": report.alpha_hat,
        "iota_hat": report.iota_hat,
        "efficiency": report.efficiency,
        "approximate": report.approximate,
        "outputs": [json_path],
    })
    .to_string())
}

pub fn sensitivity(ctx: &Context) -> Result<String, CliError> {
    let block = ctx.cfg.sensitivity.clone().expect("validated");
    let p = ctx.model();
    let state0 = ctx.inoculum()?.initial_state();
    let integ = ctx.integrator()?;

    let mut csv = Vec::new();
    let samples = match (block.subject, &block.times) {
        (Subject::Param(name), Some(ts)) => {
            let traj = variational_wrt_param_at(&state0, &p, name, &integ, ts).map_err(runtime)?;
            write_param_csv(&traj, &mut csv).map_err(runtime)?;
            traj.samples.len()
        }
        (Subject::Param(name), None) => {
            let traj = variational_wrt_param(&state0, &p, name, &integ).map_err(runtime)?;
            write_param_csv(&traj, &mut csv).map_err(runtime)?;
            traj.samples.len()
        }
        (Subject::IotaOverAlpha, Some(_)) => {
            return Err(CliError::Config(
                "explicit times are not supported for the iota_over_alpha subject".into(),
            ));
        }
        (Subject::IotaOverAlpha, None) => {
            let traj = ratio_sensitivity(&state0, &p, &integ).map_err(runtime)?;
            write_param_csv(&traj, &mut csv).map_err(runtime)?;
            traj.samples.len()
        }
        (Subject::InitialConditions, Some(ts)) => {
            let traj = variational_wrt_ic_at(&state0, &p, &integ, ts).map_err(runtime)?;
            write_ic_csv(&traj, &mut csv).map_err(runtime)?;
            traj.samples.len()
        }
        (Subject::InitialConditions, None) => {
            let traj = variational_wrt_ic(&state0, &p, &integ).map_err(runtime)?;
            write_ic_csv(&traj, &mut csv).map_err(runtime)?;
            traj.samples.len()
        }
    };
    let csv_path = ctx.path("sensitivity.csv");
    io::write_atomic(&csv_path, &csv).map_err(runtime)?;

    let mut outputs = vec![csv_path];
    let mut fd_passes = None;
    if !block.fd_steps.is_empty() {
        let subjects: Vec<FdSubject> = match block.subject {
            Subject::Param(name) => vec![FdSubject::Param(name)],
            Subject::InitialConditions => (0..6).map(FdSubject::InitialCoordinate).collect(),
            Subject::IotaOverAlpha => {
                return Err(CliError::Config(
                    "no finite-difference scheme for the iota_over_alpha subject; check iota instead".into(),
                ));
            }
        };
        let reports = subjects
            .into_iter()
            .map(|s| hvdvg::fd_check(s, &state0, &p, &integ, &block.fd_steps))
            .collect::<Result<Vec<FdReport>, _>>()
            .map_err(runtime)?;
        fd_passes = Some(reports.iter().all(|r| r.passes));
        let doc = json!({"schema_version": SCHEMA_VERSION, "reports": reports});
        let fd_path = ctx.path("fd.json");
        io::write_atomic(&fd_path, to_pretty(&doc).as_bytes()).map_err(runtime)?;
        outputs.push(fd_path);
    }

    Ok(json!({
        "command": "sensitivity",
        "subject": block.subject,
        "samples": samples,
        "fd_passes": fd_passes,
        "outputs": outputs,
    })
    .to_string())
}

pub fn spectrum(ctx: &Context) -> Result<String, CliError> {
    let block = ctx.cfg.spectrum.clone().expect("validated");
    let p = ctx.model();
    let state = State::from_slice(&block.state);
    // A state off every equilibrium plane is a bad input, not a failed run.
    let spec = spectrum_at(&p, &state, block.threshold).map_err(config)?;
    let attracting = spec.max_transverse() < -p.gamma();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "spectrum": spec,
        "attracting": attracting,
        "stability_case": stability_case(&p),
        "ratio_threshold": attracting_ratio_threshold(&p),
    });
    let json_path = ctx.path("spectrum.json");
    io::write_atomic(&json_path, to_pretty(&doc).as_bytes()).map_err(runtime)?;
    Ok(json!({
        "command": "spectrum",
        "plane": spec.plane.as_str(),
        "eigenvalues": spec.eigenvalues,
        "attracting": attracting,
        "outputs": [json_path],
    })
    .to_string())
}

pub fn fit(
    ctx: &Context,
    data: &Path,
    seed: Option<u64>,
    batches: Option<usize>,
) -> Result<String, CliError> {
    let block = ctx.cfg.fit.clone().expect("validated");
    let mut fit_cfg = block.config;
    if let Some(s) = seed {
        fit_cfg.rng_seed = s;
    }
    if let Some(b) = batches {
        fit_cfg.batches = b;
    }
    let points = io::load_points(data).map_err(CliError::Config)?;
    let n_points = points.len();
    let dataset = Dataset::new(points, block.moi_label, block.scale, block.cells).map_err(config)?;

    let result = if fit_cfg.batches >= 2 {
        batch_fit(&dataset, &fit_cfg)
    } else {
        ga_fit(&dataset, &fit_cfg)
    }
    .map_err(|e| match e {
        FitError::Integrate(ref err) => CliError::Runtime(err.to_string()),
        other => CliError::Config(other.to_string()),
    })?;

    let refit_cost = fit_cost(&result.best, &dataset, &fit_cfg.penalty, &fit_cfg.integrator);
    debug_assert_eq!(refit_cost.to_bits(), result.cost.to_bits());
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "config": fit_cfg,
        "dataset": {
            "source": data,
            "n_points": n_points,
            "moi_label": block.moi_label,
            "scale": block.scale,
            "C0": block.cells,
        },
        "result": result,
    });
    let json_path = ctx.path("fit.json");
    io::write_atomic(&json_path, to_pretty(&doc).as_bytes()).map_err(runtime)?;
    Ok(json!({
        "command": "fit",
        "cost": result.cost,
        "best": result.best,
        "generations": result.history.len(),
        "outputs": [json_path],
    })
    .to_string())
}

fn to_pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}
