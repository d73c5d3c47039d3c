//! Lysis bookkeeping over finished runs: rate recovery, final-particle
//! identities and the high-MOI burst-ledger estimates.
//!
//! Everything here is pure post-processing over immutable trajectories and
//! the quadrature accumulators the integrator carries along (`int_cv`,
//! `int_cdv`, `int_contact`), never trapezoid sums over the output grid.

use crate::equilibria::{stability_case, StabilityCase};
use crate::integrator::Trajectory;
use crate::model::ModelParams;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EstimateError {
    /// The closed ledgers are derived for decay-free runs; `allow_decay`
    /// opts into the same formulas as approximations.
    #[error("estimators assume no degradation, got gamma = {0}; pass allow_decay for an approximate report")]
    DecayNotSupported(f64),
    /// A compartment whose extinction the bookkeeping needs never emptied.
    #[error("the {0} compartment never went extinct, so the lysis ledger is not closed")]
    NotExtinct(&'static str),
    /// Identities requiring an unconditionally repelling cell plane were
    /// asked of parameters outside that regime.
    #[error("final-state identities need a supercritical burst size, got the {0} regime")]
    WrongCase(&'static str),
    /// The requested burst-ledger estimate applies to a different inoculum.
    #[error("high-MOI case {case} requires {requirement}")]
    OutsideCase { case: u8, requirement: &'static str },
}

fn case_name(c: StabilityCase) -> &'static str {
    match c {
        StabilityCase::FullInfection => "supercritical",
        StabilityCase::RatioDependent { .. } => "ratio-dependent",
        StabilityCase::SelfCuring => "subcritical",
        StabilityCase::Degenerate => "degenerate",
    }
}

fn require_supercritical(p: &ModelParams) -> Result<(), EstimateError> {
    match stability_case(p) {
        StabilityCase::FullInfection => Ok(()),
        other => Err(EstimateError::WrongCase(case_name(other))),
    }
}

/// Rates and particle bookkeeping recovered from one finished run.
///
/// The recovery formulas are exact integral identities when every cell
/// eventually lyses (decay-free full infection); on runs where cells
/// survive, or under decay with `allow_decay`, the same expressions are
/// reported as approximations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateReport {
    /// Lysis rate estimate: initial cells over the total infected-cell
    /// exposure, `C0 / integral(Cv + Cdv)`.
    pub alpha_hat: f64,
    /// Infection rate estimate: initial cells over the contact integral,
    /// `C0 / integral(C * (V + D))`.
    pub iota_hat: f64,
    /// `iota_hat / alpha_hat`, i.e. the exposure integral over the contact
    /// integral: how much of the culture's particle exposure turned into
    /// DVG-producing cell time.
    pub efficiency: f64,
    /// Cumulative HV-only lysis events, `alpha * integral(Cv)`.
    pub iv: f64,
    /// Cumulative coinfected lysis events, `alpha * integral(Cdv)`.
    pub idv: f64,
    /// `|V_f + D_f - ((m - 2 + B) C0 + iv)|`: gap in the particle ledger
    /// that couples final free particles to HV-only lysis events.
    pub vf_df_identity_residual: f64,
    /// `((B + m - 2) C0, (B + m - 1) C0)`: the interval the final particle
    /// total must fall in when every cell lyses.
    pub bounds: (f64, f64),
    /// `(V_f + D_f) / C0`: the multiplicity a fresh culture of `C0` cells
    /// would see if inoculated with this run's final particles.
    pub expected_next_passage_moi: f64,
    /// True when decay was present and the decay-free formulas were applied
    /// anyway; every field is then approximate.
    pub approximate: bool,
}

/// Recovers `alpha` and `iota` from a run's quadrature accumulators and
/// closes the particle ledger around them.
///
/// Requires the coinfected compartment to have emptied (its extinction time
/// is the point past which both exposure integrands vanish, so the
/// accumulators are closed). The initial MOI `m` is read off
/// `traj.initial`. Decay-carrying runs are refused unless `allow_decay`
/// marks the report approximate.
pub fn estimate_rates(
    traj: &Trajectory,
    p: &ModelParams,
    c0: f64,
    allow_decay: bool,
) -> Result<EstimateReport, EstimateError> {
    if p.gamma() != 0.0 && !allow_decay {
        return Err(EstimateError::DecayNotSupported(p.gamma()));
    }
    if traj.extinction.cells_dv.is_none() {
        return Err(EstimateError::NotExtinct("Cdv"));
    }
    let m = (traj.initial.virions + traj.initial.dvgs) / c0;
    let vf_df = traj.terminal.virions + traj.terminal.dvgs;
    let b = p.burst_size();
    Ok(EstimateReport {
        alpha_hat: c0 / (traj.int_cv + traj.int_cdv),
        iota_hat: c0 / traj.int_contact,
        efficiency: (traj.int_cv + traj.int_cdv) / traj.int_contact,
        iv: traj.iv,
        idv: traj.idv,
        vf_df_identity_residual: (vf_df - ((m - 2.0 + b) * c0 + traj.iv)).abs(),
        bounds: ((b + m - 2.0) * c0, (b + m - 1.0) * c0),
        expected_next_passage_moi: vf_df / c0,
        approximate: p.gamma() != 0.0,
    })
}

/// The two equivalent closures of the particle ledger for a run that
/// consumed every cell, plus the bracketing interval they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalStateIdentity {
    /// Final free particles, `V_f + D_f`.
    pub vf_df: f64,
    /// `|V_f + D_f - ((m - 2 + B) C0 + I_V)|`.
    pub residual_iv: f64,
    /// `|V_f + D_f - ((m - 1 + B) C0 - I_DV)|`. Same ledger closed through
    /// the coinfected lysis count; with `I_V + I_DV = C0` the two forms are
    /// algebraically identical, so both residuals vanish together.
    pub residual_idv: f64,
    /// `((B + m - 2) C0, (B + m - 1) C0)`.
    pub bounds: (f64, f64),
    /// Whether `vf_df` lies inside `bounds` (inclusive).
    pub within_bounds: bool,
}

/// Closes the particle ledger of a decay-free, supercritical run whose cell
/// compartments all emptied: each initial cell lysed through `Cv` (absorbing
/// one particle, releasing `B`) or through `Cdv` (absorbing two), which
/// pins `V_f + D_f` to the initial particle pool plus net burst yield.
pub fn final_state_identity(
    traj: &Trajectory,
    p: &ModelParams,
    m: f64,
    c0: f64,
) -> Result<FinalStateIdentity, EstimateError> {
    if p.gamma() != 0.0 {
        return Err(EstimateError::DecayNotSupported(p.gamma()));
    }
    require_supercritical(p)?;
    let t = &traj.terminal;
    for (alive, name) in [
        (t.cells, "C"),
        (t.cells_v, "Cv"),
        (t.cells_d, "Cd"),
        (t.cells_dv, "Cdv"),
    ] {
        if alive != 0.0 {
            return Err(EstimateError::NotExtinct(name));
        }
    }
    let vf_df = t.virions + t.dvgs;
    let b = p.burst_size();
    let bounds = ((b + m - 2.0) * c0, (b + m - 1.0) * c0);
    Ok(FinalStateIdentity {
        vf_df,
        residual_iv: (vf_df - ((m - 2.0 + b) * c0 + traj.iv)).abs(),
        residual_idv: (vf_df - ((m - 1.0 + b) * c0 - traj.idv)).abs(),
        bounds,
        within_bounds: bounds.0 <= vf_df && vf_df <= bounds.1,
    })
}

/// Burst-ledger estimate of the final particle counts when infection far
/// outruns lysis, so every cell absorbs its particles before any burst
/// feeds back (supercritical parameters only).
///
/// Case 1 (`V0 > C0`, `D0 = 0`): every cell becomes HV-infected, giving
/// `V_f = (eta + m - 1) C0` and `D_f = beta eta C0` with `m = V0/C0`.
/// Case 2 (`V0 > C0 > D0 > 0`): `D0` cells take a DVG first and then a
/// virion, splitting the yield into plain and DVG-loaded bursts:
/// `V_f = eta (C0 - D0) + (eta/kappa) D0 + (V0 - C0)` and
/// `D_f = beta eta (C0 - D0) + (eta/kappa)(beta + delta) D0`.
/// The sums collapse to `(B + m - 1) C0` and `V0 + (B - 1) C0`.
pub fn analytic_high_moi(
    p: &ModelParams,
    v0: f64,
    d0: f64,
    c0: f64,
) -> Result<(f64, f64), EstimateError> {
    let case = if d0 == 0.0 { 1 } else { 2 };
    if p.burst_size() <= 1.0 + p.beta() + p.delta() {
        return Err(EstimateError::OutsideCase {
            case,
            requirement: "a supercritical burst size B > 1 + beta + delta",
        });
    }
    let (eta, kappa, beta) = (p.eta(), p.kappa(), p.beta());
    if case == 1 {
        if v0 <= c0 {
            return Err(EstimateError::OutsideCase { case: 1, requirement: "V0 > C0 (with D0 = 0)" });
        }
        let m = v0 / c0;
        Ok(((eta + m - 1.0) * c0, beta * eta * c0))
    } else {
        if !(v0 > c0 && c0 > d0 && d0 > 0.0) {
            return Err(EstimateError::OutsideCase { case: 2, requirement: "V0 > C0 > D0 > 0" });
        }
        let vf = eta * (c0 - d0) + (eta / kappa) * d0 + (v0 - c0);
        let df = beta * eta * (c0 - d0) + (eta / kappa) * (beta + p.delta()) * d0;
        Ok((vf, df))
    }
}
