//! Grid scans: phase diagrams over kinetic parameters, basin-of-attraction
//! maps over inocula, and terminal particle clouds.
//!
//! A scan is an embarrassingly parallel map over grid nodes; results are
//! gathered in row-major order (y slowest), so output bytes never depend on
//! the worker count. Nodes sitting on a transcritical boundary are flagged
//! `DEGENERATE` and skipped rather than classified, and a node whose setup
//! or integration fails carries an `ERROR` marker without aborting the scan.

use crate::equilibria::{stability_case, PlaneClass, StabilityCase};
use crate::integrator::{classify_omega_limit, integrate, IntegratorConfig};
use crate::model::{InoculumSpec, ModelParams, ParamError, State};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io;
use std::time::{Duration, Instant};

/// Scannable quantities. `V0` and `D0` override the inoculum-built initial
/// particle counts directly (basin maps); the rest rebuild parameters or the
/// inoculum. `iota_over_alpha` keeps `alpha` fixed and sets
/// `iota = ratio * alpha`: the flow depends on the two rates only through
/// their ratio and a time rescale, so terminal classes are unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisName {
    #[serde(rename = "qV0")]
    QV0,
    #[serde(rename = "B")]
    BurstSize,
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "V0")]
    V0,
    #[serde(rename = "D0")]
    D0,
    #[serde(rename = "iota_over_alpha")]
    IotaOverAlpha,
    #[serde(rename = "m")]
    Moi,
}

impl AxisName {
    pub fn as_str(&self) -> &'static str {
        match self {
            AxisName::QV0 => "qV0",
            AxisName::BurstSize => "B",
            AxisName::Delta => "delta",
            AxisName::V0 => "V0",
            AxisName::D0 => "D0",
            AxisName::IotaOverAlpha => "iota_over_alpha",
            AxisName::Moi => "m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub name: AxisName,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
    pub scale: AxisScale,
}

impl AxisSpec {
    /// Grid coordinate `i` of `steps`; a single-step axis sits at `min`.
    fn value(&self, i: usize) -> f64 {
        if self.steps == 1 {
            return self.min;
        }
        let f = i as f64 / (self.steps - 1) as f64;
        match self.scale {
            AxisScale::Linear => self.min + (self.max - self.min) * f,
            AxisScale::Log => self.min * (self.max / self.min).powf(f),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.value(i)).collect()
    }
}

/// A rectangular scan: two axes plus the parameters and inoculum shared by
/// every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_axis: AxisSpec,
    pub y_axis: AxisSpec,
    pub params: ModelParams,
    pub inoculum: InoculumSpec,
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("axis {0} needs at least one step")]
    NoSteps(&'static str),
    #[error("axis {0} range is empty, reversed or not finite")]
    EmptyRange(&'static str),
    #[error("axis {0} uses a log scale over a non-positive range")]
    LogRange(&'static str),
    #[error("both axes scan {0}")]
    DuplicateAxes(&'static str),
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        for axis in [&self.x_axis, &self.y_axis] {
            let name = axis.name.as_str();
            if axis.steps == 0 {
                return Err(GridError::NoSteps(name));
            }
            if !axis.min.is_finite() || !axis.max.is_finite() || axis.min >= axis.max {
                return Err(GridError::EmptyRange(name));
            }
            if axis.scale == AxisScale::Log && axis.min <= 0.0 {
                return Err(GridError::LogRange(name));
            }
        }
        if self.x_axis.name == self.y_axis.name {
            return Err(GridError::DuplicateAxes(self.x_axis.name.as_str()));
        }
        Ok(())
    }
}

/// Terminal color class of one node. Extends the plane classes with the two
/// scan-only markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScanClass {
    #[serde(rename = "VD")]
    VD,
    #[serde(rename = "CDD")]
    CdD,
    #[serde(rename = "CCD")]
    CCd,
    #[serde(rename = "ORIGIN")]
    Origin,
    #[serde(rename = "UNDET")]
    Undetermined,
    #[serde(rename = "ERROR")]
    Error,
    #[serde(rename = "DEGENERATE")]
    Degenerate,
}

impl From<PlaneClass> for ScanClass {
    fn from(c: PlaneClass) -> Self {
        match c {
            PlaneClass::VD => ScanClass::VD,
            PlaneClass::CdD => ScanClass::CdD,
            PlaneClass::CCd => ScanClass::CCd,
            PlaneClass::Origin => ScanClass::Origin,
            PlaneClass::Undetermined => ScanClass::Undetermined,
        }
    }
}

impl ScanClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScanClass::VD => "VD",
            ScanClass::CdD => "CDD",
            ScanClass::CCd => "CCD",
            ScanClass::Origin => "ORIGIN",
            ScanClass::Undetermined => "UNDET",
            ScanClass::Error => "ERROR",
            ScanClass::Degenerate => "DEGENERATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanCell {
    pub x: f64,
    pub y: f64,
    pub class: ScanClass,
    /// Terminal free virions; NaN for ERROR and DEGENERATE cells.
    #[serde(rename = "Vf")]
    pub vf: f64,
    /// Terminal free DVGs; NaN for ERROR and DEGENERATE cells.
    #[serde(rename = "Df")]
    pub df: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub spec: GridSpec,
    pub integrator: IntegratorConfig,
    /// Row-major: `cells[j * x_steps + i]` holds node `(x_i, y_j)`.
    pub cells: Vec<ScanCell>,
    /// Wall time; excluded from every serialized form so output stays
    /// machine-independent.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ScanResult {
    /// `x,y,class,Vf,Df` with full-precision floats (NaN spelled `NaN`).
    pub fn write_csv<W: io::Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "x,y,class,Vf,Df")?;
        for c in &self.cells {
            writeln!(
                w,
                "{:.16e},{:.16e},{},{:.16e},{:.16e}",
                c.x,
                c.y,
                c.class.as_str(),
                c.vf,
                c.df
            )?;
        }
        Ok(())
    }

    /// JSON sidecar documenting exactly what produced the CSV.
    pub fn sidecar_json(&self) -> String {
        serde_json::json!({ "grid": self.spec, "integrator": self.integrator }).to_string()
    }
}

/// Parameters and initial state for one node: axis values override the
/// shared spec, and overridden particle counts are validated through the
/// same rules as an inoculum.
fn node_setup(spec: &GridSpec, x: f64, y: f64) -> Result<(ModelParams, State), ParamError> {
    let pf = &spec.params;
    let (mut b, mut delta, mut iota) = (pf.burst_size(), pf.delta(), pf.iota());
    let (mut m, mut q) = (spec.inoculum.moi, spec.inoculum.hv_fraction);
    let c0 = spec.inoculum.cells;
    let (mut v_over, mut d_over) = (None, None);
    for (name, val) in [(spec.x_axis.name, x), (spec.y_axis.name, y)] {
        match name {
            AxisName::QV0 => q = val,
            AxisName::BurstSize => b = val,
            AxisName::Delta => delta = val,
            AxisName::V0 => v_over = Some(val),
            AxisName::D0 => d_over = Some(val),
            AxisName::IotaOverAlpha => iota = val * pf.alpha(),
            AxisName::Moi => m = val,
        }
    }
    let p = ModelParams::new(b, pf.beta(), delta, iota, pf.alpha())?.with_decay(pf.gamma())?;
    let mut state = InoculumSpec::new(m, q, c0)?.initial_state();
    if v_over.is_some() || d_over.is_some() {
        let v = v_over.unwrap_or(state.virions);
        let d = d_over.unwrap_or(state.dvgs);
        let total = v + d;
        let q_eff = if total > 0.0 { v / total } else { 1.0 };
        InoculumSpec::new(total / c0, q_eff, c0)?;
        state.virions = v;
        state.dvgs = d;
    }
    Ok((p, state))
}

fn error_cell(x: f64, y: f64, class: ScanClass) -> ScanCell {
    ScanCell { x, y, class, vf: f64::NAN, df: f64::NAN }
}

fn eval_node(spec: &GridSpec, cfg: &IntegratorConfig, x: f64, y: f64) -> ScanCell {
    let (p, state) = match node_setup(spec, x, y) {
        Ok(v) => v,
        Err(_) => return error_cell(x, y, ScanClass::Error),
    };
    if stability_case(&p) == StabilityCase::Degenerate {
        return error_cell(x, y, ScanClass::Degenerate);
    }
    match integrate(&p, &state, cfg) {
        Ok(traj) => ScanCell {
            x,
            y,
            class: classify_omega_limit(&traj, cfg.extinction_threshold).into(),
            vf: traj.terminal.virions,
            df: traj.terminal.dvgs,
        },
        Err(_) => error_cell(x, y, ScanClass::Error),
    }
}

/// Integrates and classifies every grid node. Deterministic for a fixed
/// spec and config regardless of thread count.
pub fn scan_grid(spec: &GridSpec, cfg: &IntegratorConfig) -> Result<ScanResult, GridError> {
    spec.validate()?;
    let started = Instant::now();
    let xs = spec.x_axis.values();
    let ys = spec.y_axis.values();
    let cells = (0..xs.len() * ys.len())
        .into_par_iter()
        .map(|idx| eval_node(spec, cfg, xs[idx % xs.len()], ys[idx / xs.len()]))
        .collect();
    Ok(ScanResult { spec: *spec, integrator: *cfg, cells, elapsed: started.elapsed() })
}

/// One terminal particle tally. `m` and `qV0` are the node's effective
/// inoculum (after any axis overrides), so clouds can be scatter-plotted
/// against either.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloudPoint {
    pub m: f64,
    #[serde(rename = "qV0")]
    pub qv0: f64,
    #[serde(rename = "Vf")]
    pub vf: f64,
    #[serde(rename = "Df")]
    pub df: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloudReport {
    /// Row-major like scan cells; failed nodes keep their slot with NaN
    /// tallies.
    pub points: Vec<CloudPoint>,
    /// Nodes whose parameters are not strictly supercritical. Terminal
    /// particle ledgers carry their usual meaning only under full infection,
    /// so a nonzero count is a warning sign for the whole cloud.
    pub off_regime_nodes: usize,
}

/// Terminal `(V, D)` for every node of the grid.
pub fn end_state_cloud(spec: &GridSpec, cfg: &IntegratorConfig) -> Result<CloudReport, GridError> {
    spec.validate()?;
    let xs = spec.x_axis.values();
    let ys = spec.y_axis.values();
    let evals: Vec<(CloudPoint, bool)> = (0..xs.len() * ys.len())
        .into_par_iter()
        .map(|idx| {
            let (x, y) = (xs[idx % xs.len()], ys[idx / xs.len()]);
            let (p, state) = match node_setup(spec, x, y) {
                Ok(v) => v,
                Err(_) => {
                    return (CloudPoint { m: f64::NAN, qv0: f64::NAN, vf: f64::NAN, df: f64::NAN }, true)
                }
            };
            let total = state.virions + state.dvgs;
            let m = total / spec.inoculum.cells;
            let qv0 = if total > 0.0 { state.virions / total } else { f64::NAN };
            let off = stability_case(&p) != StabilityCase::FullInfection;
            match integrate(&p, &state, cfg) {
                Ok(traj) => {
                    (CloudPoint { m, qv0, vf: traj.terminal.virions, df: traj.terminal.dvgs }, off)
                }
                Err(_) => (CloudPoint { m, qv0, vf: f64::NAN, df: f64::NAN }, off),
            }
        })
        .collect();
    let off_regime_nodes = evals.iter().filter(|(_, off)| *off).count();
    Ok(CloudReport { points: evals.into_iter().map(|(pt, _)| pt).collect(), off_regime_nodes })
}
