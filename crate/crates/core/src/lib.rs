//! Simulation and analysis toolkit for a cell-culture infection model with a
//! helper virus (HV) and defective viral genomes (DVGs).
//!
//! Six compartments are tracked: uninfected cells, three infected cell classes
//! (HV only, DVG only, coinfected) and the two free particle pools. The crate
//! provides the vector field and its Jacobian ([`model`]), a high-order
//! adaptive integrator with extinction handling ([`integrator`]), closed-form
//! equilibrium spectra ([`equilibria`]), deterministic parallel parameter
//! scans ([`scans`]), conservation-based rate estimators ([`estimates`]),
//! variational sensitivity systems ([`sensitivity`]) and a genetic-algorithm
//! fitter for titer time series ([`fitting`]).

pub mod equilibria;
pub mod estimates;
pub mod fitting;
pub mod integrator;
pub mod model;
pub mod scans;
pub mod sensitivity;

pub use equilibria::{
    attracting_ratio_threshold, is_attracting, spectrum_at, spectrum_ccd, spectrum_cdd,
    spectrum_origin, spectrum_vd, stability_case, PlaneClass, PlaneError, Spectrum, StabilityCase,
    DEGENERACY_WINDOW,
};
pub use estimates::{analytic_high_moi, estimate_rates, final_state_identity, EstimateError, EstimateReport, FinalStateIdentity};
pub use fitting::{
    batch_fit, fit_cost, fit_integrator_defaults, ga_fit, BatchStats, Candidate, Dataset,
    DatasetError, FitConfig, FitError, FitResult, GenStat, GeneRange, Penalty, Ranges, GENE_NAMES,
};
pub use integrator::{
    classify_omega_limit, integrate, integrate_at_times, ExtinctionTimes, IntegratorConfig,
    StopReason, Trajectory,
};
pub use model::{jacobian, vector_field, InoculumSpec, ModelParams, State};
pub use scans::{
    end_state_cloud, scan_grid, AxisName, AxisScale, AxisSpec, CloudPoint, CloudReport, GridError,
    GridSpec, ScanCell, ScanClass, ScanResult,
};
pub use sensitivity::{
    fd_check, ratio_sensitivity, variational_wrt_ic, variational_wrt_ic_at, variational_wrt_param,
    variational_wrt_param_at, FdReport, FdSubject, IcSensitivity, ParamName, ParamSensitivity,
    SensitivityTrajectory, Subject,
};
