//! Model parameters, state vector and vector field.
//!
//! The state is scaled so that a cell count of 1 means "the initial monolayer"
//! unless the caller deliberately works in raw particle counts (the fitter
//! does). All rates are per hour.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index order used everywhere a state is flattened to a slice:
/// `[C, Cv, Cd, Cdv, V, D]`.
pub const STATE_DIM: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("burst size must be finite and > 0, got {0}")]
    BurstSize(f64),
    #[error("DVG fraction beta must lie in [0, 1], got {0}")]
    Beta(f64),
    #[error("replicative advantage delta must be finite and >= 1, got {0}")]
    Delta(f64),
    #[error("infection rate iota must be finite and > 0, got {0}")]
    Iota(f64),
    #[error("lysis rate alpha must be finite and > 0, got {0}")]
    Alpha(f64),
    #[error("degradation rate gamma must be finite and >= 0, got {0}")]
    Gamma(f64),
    #[error("MOI m must be finite and >= 0, got {0}")]
    Moi(f64),
    #[error("HV inoculum fraction qV0 must lie in [0, 1], got {0}")]
    HvFraction(f64),
    #[error("initial cell count C0 must be finite and > 0, got {0}")]
    Cells(f64),
}

/// Kinetic parameters. The two derived quantities `eta` (per-lysis HV yield)
/// and `kappa` (coinfection burst penalty) are computed once at construction
/// and are never accepted as independent inputs, so the identities
/// `eta*(1+beta) = B` and `eta*(1+beta+delta)/kappa = B` hold exactly as
/// floating point allows for the lifetime of the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    burst_size: f64,
    beta: f64,
    delta: f64,
    iota: f64,
    alpha: f64,
    gamma: f64,
    eta: f64,
    kappa: f64,
}

/// Wire form of [`ModelParams`]: the validated struct serializes through this.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(rename = "B")]
    burst_size: f64,
    beta: f64,
    delta: f64,
    iota: f64,
    alpha: f64,
    #[serde(default)]
    gamma: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = ParamError;
    fn try_from(r: RawParams) -> Result<Self, ParamError> {
        ModelParams::new(r.burst_size, r.beta, r.delta, r.iota, r.alpha)?.with_decay(r.gamma)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> RawParams {
        RawParams {
            burst_size: p.burst_size,
            beta: p.beta,
            delta: p.delta,
            iota: p.iota,
            alpha: p.alpha,
            gamma: p.gamma,
        }
    }
}

impl ModelParams {
    /// Validates the five kinetic parameters and derives `eta`, `kappa`.
    /// Degradation starts at 0; see [`ModelParams::with_decay`].
    ///
    /// `delta` is accepted down to exactly 1 (no replicative advantage)
    /// because fitted values sit on that bound; the strict-advantage regime
    /// discussed alongside the equilibrium analysis needs `delta > 1`.
    pub fn new(burst_size: f64, beta: f64, delta: f64, iota: f64, alpha: f64) -> Result<Self, ParamError> {
        if !burst_size.is_finite() || burst_size <= 0.0 {
            return Err(ParamError::BurstSize(burst_size));
        }
        if !beta.is_finite() || !(0.0..=1.0).contains(&beta) {
            return Err(ParamError::Beta(beta));
        }
        if !delta.is_finite() || delta < 1.0 {
            return Err(ParamError::Delta(delta));
        }
        if !iota.is_finite() || iota <= 0.0 {
            return Err(ParamError::Iota(iota));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(ParamError::Alpha(alpha));
        }
        let eta = burst_size / (1.0 + beta);
        let kappa = 1.0 + delta / (1.0 + beta);
        Ok(ModelParams { burst_size, beta, delta, iota, alpha, gamma: 0.0, eta, kappa })
    }

    /// Returns a copy with uniform first-order degradation `gamma` applied to
    /// every compartment.
    pub fn with_decay(mut self, gamma: f64) -> Result<Self, ParamError> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(ParamError::Gamma(gamma));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn burst_size(&self) -> f64 {
        self.burst_size
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// HV particles released per lysed HV-only cell: `B / (1 + beta)`.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Burst division factor of coinfected cells: `1 + delta / (1 + beta)`.
    /// Always > 1, so coinfected cells release fewer HV than HV-only cells.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Population state. Units are whatever the caller picked for the initial
/// condition; the vector field is polynomial so only ratios and `iota`
/// rescale with the choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Uninfected cells, `C`.
    pub cells: f64,
    /// Cells infected by HV only, `C_V`.
    pub cells_v: f64,
    /// Cells infected by DVGs only, `C_D`.
    pub cells_d: f64,
    /// Coinfected cells, `C_DV`.
    pub cells_dv: f64,
    /// Free helper virus, `V`.
    pub virions: f64,
    /// Free defective particles, `D`.
    pub dvgs: f64,
}

impl State {
    pub const ZERO: State = State { cells: 0.0, cells_v: 0.0, cells_d: 0.0, cells_dv: 0.0, virions: 0.0, dvgs: 0.0 };

    pub fn new(cells: f64, cells_v: f64, cells_d: f64, cells_dv: f64, virions: f64, dvgs: f64) -> State {
        State { cells, cells_v, cells_d, cells_dv, virions, dvgs }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.cells, self.cells_v, self.cells_d, self.cells_dv, self.virions, self.dvgs]
    }

    pub fn from_slice(y: &[f64]) -> State {
        State { cells: y[0], cells_v: y[1], cells_d: y[2], cells_dv: y[3], virions: y[4], dvgs: y[5] }
    }

    /// Sum of the four cell compartments, `C_T`.
    pub fn total_cells(&self) -> f64 {
        self.cells + self.cells_v + self.cells_d + self.cells_dv
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Inoculation protocol: `m` particles per cell, of which a fraction `qV0`
/// are HV and the rest DVGs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InoculumSpec {
    #[serde(rename = "m")]
    pub moi: f64,
    #[serde(rename = "qV0")]
    pub hv_fraction: f64,
    #[serde(rename = "C0", default = "default_cells")]
    pub cells: f64,
}

fn default_cells() -> f64 {
    1.0
}

impl InoculumSpec {
    pub fn new(moi: f64, hv_fraction: f64, cells: f64) -> Result<Self, ParamError> {
        if !moi.is_finite() || moi < 0.0 {
            return Err(ParamError::Moi(moi));
        }
        if !hv_fraction.is_finite() || !(0.0..=1.0).contains(&hv_fraction) {
            return Err(ParamError::HvFraction(hv_fraction));
        }
        if !cells.is_finite() || cells <= 0.0 {
            return Err(ParamError::Cells(cells));
        }
        Ok(InoculumSpec { moi, hv_fraction, cells })
    }

    /// `(C0, 0, 0, 0, m*qV0*C0, m*(1-qV0)*C0)`.
    pub fn initial_state(&self) -> State {
        State {
            cells: self.cells,
            cells_v: 0.0,
            cells_d: 0.0,
            cells_dv: 0.0,
            virions: self.moi * self.hv_fraction * self.cells,
            dvgs: self.moi * (1.0 - self.hv_fraction) * self.cells,
        }
    }
}

/// Time derivative of the six compartments.
///
/// Infection consumes one particle per event, lysis of an HV-carrying cell
/// releases `eta` HV plus `beta*eta` DVGs (divided by `kappa` for coinfected
/// cells, which additionally release `delta*eta/kappa` DVGs), and every
/// compartment decays at `gamma`.
pub fn vector_field(p: &ModelParams, s: &State) -> State {
    let ModelParams { beta, delta, iota, alpha, gamma, eta, kappa, .. } = *p;
    let State { cells, cells_v, cells_d, cells_dv, virions, dvgs } = *s;

    let producers = cells_v + cells_dv / kappa;

    State {
        cells: -iota * cells * (virions + dvgs) - gamma * cells,
        cells_v: iota * cells * virions - cells_v * (iota * dvgs + alpha) - gamma * cells_v,
        cells_d: iota * (cells * dvgs - cells_d * virions) - gamma * cells_d,
        cells_dv: iota * (cells_d * virions + cells_v * dvgs) - alpha * cells_dv - gamma * cells_dv,
        virions: alpha * eta * producers - iota * virions * (cells + cells_d) - gamma * virions,
        dvgs: alpha * beta * eta * producers + alpha * delta * eta * cells_dv / kappa
            - iota * dvgs * (cells + cells_v)
            - gamma * dvgs,
    }
}

/// Jacobian of [`vector_field`] at `s`, row-major: `J[i][j] = d f_i / d x_j`
/// in the `[C, Cv, Cd, Cdv, V, D]` order.
pub fn jacobian(p: &ModelParams, s: &State) -> [[f64; STATE_DIM]; STATE_DIM] {
    let ModelParams { beta, delta, iota, alpha, gamma, eta, kappa, .. } = *p;
    let State { cells, cells_v, cells_d, cells_dv: _, virions, dvgs } = *s;

    [
        [-iota * (virions + dvgs) - gamma, 0.0, 0.0, 0.0, -iota * cells, -iota * cells],
        [iota * virions, -(iota * dvgs + alpha) - gamma, 0.0, 0.0, iota * cells, -iota * cells_v],
        [iota * dvgs, 0.0, -iota * virions - gamma, 0.0, -iota * cells_d, iota * cells],
        [0.0, iota * dvgs, iota * virions, -alpha - gamma, iota * cells_d, iota * cells_v],
        [
            -iota * virions,
            alpha * eta,
            -iota * virions,
            alpha * eta / kappa,
            -iota * (cells + cells_d) - gamma,
            0.0,
        ],
        [
            -iota * dvgs,
            alpha * beta * eta - iota * dvgs,
            0.0,
            alpha * eta * (beta + delta) / kappa,
            0.0,
            -iota * (cells + cells_v) - gamma,
        ],
    ]
}
