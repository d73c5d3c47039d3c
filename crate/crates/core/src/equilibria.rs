//! Equilibrium planes of the lysis-only model and their closed-form spectra.
//!
//! Without decay the flow has three families of equilibria, each a plane of
//! fixed points: uninfected plus DVG-carrying cells (`C`-`Cd`), DVG-carrying
//! cells plus free DVGs (`Cd`-`D`), and free particles only (`V`-`D`). The
//! Jacobian at any such point has a closed-form spectrum, so transversal
//! stability reduces to explicit inequalities in the parameters and the
//! point's coordinates. With decay `gamma > 0` the planes are no longer
//! invariant, but the Jacobian merely shifts by `-gamma` on the diagonal, so
//! every formula below stays valid with all eigenvalues displaced by
//! `-gamma`.

use crate::model::{ModelParams, State};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute half-width of the window around the transcritical boundaries
/// `B = 1 + beta` and `B = 1 + beta + delta` treated as degenerate.
pub const DEGENERACY_WINDOW: f64 = 1e-12;

/// The equilibrium-plane families, plus the origin where all three meet.
/// Doubles as the omega-limit label of a finished run, where `Undetermined`
/// covers runs that never certified an equilibrium. Serialized under the
/// same names [`PlaneClass::as_str`] prints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlaneClass {
    /// Full infection: only free particles persist.
    #[serde(rename = "VD")]
    VD,
    /// Self-curing with DVG reservoir: DVG-carrying cells plus free DVGs.
    #[serde(rename = "CDD")]
    CdD,
    /// Self-curing: uninfected plus DVG-carrying cells.
    #[serde(rename = "CCD")]
    CCd,
    #[serde(rename = "ORIGIN")]
    Origin,
    #[serde(rename = "UNDET")]
    Undetermined,
}

impl PlaneClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlaneClass::VD => "VD",
            PlaneClass::CdD => "CDD",
            PlaneClass::CCd => "CCD",
            PlaneClass::Origin => "ORIGIN",
            PlaneClass::Undetermined => "UNDET",
        }
    }
}

/// A state handed to [`spectrum_at`] or [`is_attracting`] sits on none of
/// the equilibrium planes (after snapping coordinates within `threshold` of
/// zero), so no closed-form spectrum applies.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("state {state:?} is not within {threshold:e} of an equilibrium plane")]
pub struct PlaneError {
    pub state: State,
    pub threshold: f64,
}

/// Eigenvalues of the 6x6 Jacobian at an equilibrium point. All closed
/// forms are real: the discriminants are sums of squares and nonnegative
/// terms. Layout: tangent directions (along the local family of equilibria,
/// all sitting at exactly `-gamma`) come first, transverse directions after;
/// [`Spectrum::transverse`] slices off the latter. Per-constructor order is
/// documented on each constructor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spectrum {
    pub plane: PlaneClass,
    pub eigenvalues: [f64; 6],
}

impl Spectrum {
    /// Number of leading eigenvalues tangent to the equilibrium family: two
    /// on each plane, four at the origin (the plane tangent spaces jointly
    /// span `C`, `Cd`, `V`, `D` there).
    pub fn tangent_len(&self) -> usize {
        match self.plane {
            PlaneClass::Origin => 4,
            _ => 2,
        }
    }

    /// The eigenvalues transverse to the plane of equilibria.
    pub fn transverse(&self) -> &[f64] {
        &self.eigenvalues[self.tangent_len()..]
    }

    /// Largest transverse eigenvalue; the point attracts nearby transverse
    /// perturbations iff this is strictly below `-gamma`.
    pub fn max_transverse(&self) -> f64 {
        self.transverse().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sorted_descending(&self) -> [f64; 6] {
        let mut v = self.eigenvalues;
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

/// Spectrum at `(C, 0, Cd, 0, 0, 0)`.
///
/// Order: `[-g, -g, -a-g, -iC-g, e+ - g, e- - g]` with `g = gamma` and
/// `e+- = -(i(C+Cd)+a)/2 +- sqrt((i(C+Cd)-a)^2 + 4a i eta (C + Cd/kappa))/2`.
pub fn spectrum_ccd(p: &ModelParams, cells: f64, cells_d: f64) -> Spectrum {
    let (i, a, g) = (p.iota(), p.alpha(), p.gamma());
    let sum = cells + cells_d;
    let disc = (i * sum - a).powi(2) + 4.0 * a * i * p.eta() * (cells + cells_d / p.kappa());
    let root = disc.sqrt();
    let mid = -(i * sum + a) / 2.0;
    Spectrum {
        plane: PlaneClass::CCd,
        eigenvalues: [-g, -g, -a - g, -i * cells - g, mid + root / 2.0 - g, mid - root / 2.0 - g],
    }
}

/// Spectrum at `(0, 0, Cd, 0, 0, D)`.
///
/// Order: `[-g, -g, -iD-g, -(iD+a)-g, l+ - g, l- - g]`; the `l+-` pair is
/// [`spectrum_ccd`]'s `e+-` evaluated at `C = 0`.
pub fn spectrum_cdd(p: &ModelParams, cells_d: f64, dvgs: f64) -> Spectrum {
    let (i, a, g) = (p.iota(), p.alpha(), p.gamma());
    let ccd = spectrum_ccd(p, 0.0, cells_d);
    Spectrum {
        plane: PlaneClass::CdD,
        eigenvalues: [-g, -g, -i * dvgs - g, -(i * dvgs + a) - g, ccd.eigenvalues[4], ccd.eigenvalues[5]],
    }
}

/// Spectrum at `(0, 0, 0, 0, V, D)`.
///
/// Order: `[-g, -g, -iV-g, -a-g, -i(V+D)-g, -(iD+a)-g]`. Every transverse
/// eigenvalue is nonpositive, so this plane attracts wherever the flow
/// reaches its interior; the `V = 0` edge is marginal.
pub fn spectrum_vd(p: &ModelParams, virions: f64, dvgs: f64) -> Spectrum {
    let (i, a, g) = (p.iota(), p.alpha(), p.gamma());
    Spectrum {
        plane: PlaneClass::VD,
        eigenvalues: [
            -g,
            -g,
            -i * virions - g,
            -a - g,
            -i * (virions + dvgs) - g,
            -(i * dvgs + a) - g,
        ],
    }
}

/// Spectrum at the origin: four tangent zeros (shifted to `-gamma`) and a
/// double `-alpha - gamma`. Same multiset as `spectrum_ccd(p, 0, 0)`.
pub fn spectrum_origin(p: &ModelParams) -> Spectrum {
    let (a, g) = (p.alpha(), p.gamma());
    Spectrum { plane: PlaneClass::Origin, eigenvalues: [-g, -g, -g, -g, -a - g, -a - g] }
}

/// Dispatches on which plane `state` lies on, snapping every coordinate with
/// `|x| <= threshold` to exactly zero first (so `threshold = 0` demands exact
/// plane membership). The origin is matched first, then `VD`, `CdD`, `CCd`,
/// the same precedence the omega-limit classifier uses for ambiguous axis
/// points. States near none of the planes are an error, not a spectrum.
pub fn spectrum_at(p: &ModelParams, state: &State, threshold: f64) -> Result<Spectrum, PlaneError> {
    let z = |x: f64| if x.abs() <= threshold { 0.0 } else { x };
    if z(state.cells_v) != 0.0 || z(state.cells_dv) != 0.0 {
        return Err(PlaneError { state: *state, threshold });
    }
    let (c, cd, v, d) = (z(state.cells), z(state.cells_d), z(state.virions), z(state.dvgs));
    Ok(match (c == 0.0, cd == 0.0, v == 0.0, d == 0.0) {
        (true, true, true, true) => spectrum_origin(p),
        (true, true, _, _) => spectrum_vd(p, v, d),
        (true, _, true, _) => spectrum_cdd(p, cd, d),
        (_, _, true, true) => spectrum_ccd(p, c, cd),
        _ => return Err(PlaneError { state: *state, threshold }),
    })
}

/// Transversal attraction test at a plane point: strict negativity of every
/// transverse eigenvalue, decay included. Marginal points report `false`;
/// that covers genuine threshold points and also edges where a transverse
/// direction runs into an adjacent equilibrium family (the `C = 0` edge of
/// the `C`-`Cd` plane, the `V = 0` edge of the `V`-`D` plane).
pub fn is_attracting(
    p: &ModelParams,
    state: &State,
    threshold: f64,
) -> Result<(bool, Spectrum), PlaneError> {
    let s = spectrum_at(p, state, threshold)?;
    Ok((s.max_transverse() < -p.gamma(), s))
}

/// Where the fate of an infection can land, as a function of the burst size
/// relative to the DVG production load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StabilityCase {
    /// `B > 1 + beta + delta`: every `C`-`Cd` point repels, infections run
    /// to completion.
    FullInfection,
    /// `1 + beta < B < 1 + beta + delta`: a `C`-`Cd` point attracts iff
    /// `C/Cd` is below `threshold`, so cultures can self-cure when enough
    /// DVG-carrying cells accumulate.
    RatioDependent { threshold: f64 },
    /// `B < 1 + beta`: the virus is subcritical and every `C`-`Cd` point
    /// attracts.
    SelfCuring,
    /// `B` within [`DEGENERACY_WINDOW`] of a transcritical boundary; the
    /// linear analysis is inconclusive there.
    Degenerate,
}

/// Classifies the parameters by the burst-size thresholds. Decay plays no
/// role in the case boundaries (it shifts all eigenvalues equally).
pub fn stability_case(p: &ModelParams) -> StabilityCase {
    let b = p.burst_size();
    let lo = 1.0 + p.beta();
    let hi = 1.0 + p.beta() + p.delta();
    if (b - lo).abs() < DEGENERACY_WINDOW || (b - hi).abs() < DEGENERACY_WINDOW {
        StabilityCase::Degenerate
    } else if b > hi {
        StabilityCase::FullInfection
    } else if b < lo {
        StabilityCase::SelfCuring
    } else {
        StabilityCase::RatioDependent { threshold: ratio_threshold(p) }
    }
}

fn ratio_threshold(p: &ModelParams) -> f64 {
    let b = p.burst_size();
    (1.0 - b / (1.0 + p.beta() + p.delta())) / (b / (1.0 + p.beta()) - 1.0)
}

/// The critical ratio `r*` such that the `e+-` pair at `(C, Cd)` is stable
/// iff `C/Cd < r*`. Supercritical parameters give `0` (no mixed point is
/// stable), subcritical ones `+inf` (all are); the degenerate boundaries
/// take their continuous limits, `0` at `B = 1+beta+delta` and `+inf` at
/// `B = 1+beta`.
pub fn attracting_ratio_threshold(p: &ModelParams) -> f64 {
    match stability_case(p) {
        StabilityCase::FullInfection => 0.0,
        StabilityCase::SelfCuring => f64::INFINITY,
        StabilityCase::RatioDependent { threshold } => threshold,
        StabilityCase::Degenerate => {
            if (p.burst_size() - (1.0 + p.beta() + p.delta())).abs() < DEGENERACY_WINDOW {
                0.0
            } else {
                f64::INFINITY
            }
        }
    }
}
