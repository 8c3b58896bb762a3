//! Approximation-error correction for exponential-integrator solvers.
//!
//! The current noise prediction is extrapolated away from a prediction made at
//! a larger time `τ`, where the predictor is more reliable:
//!
//! ```text
//! ε_new(x_t, t) = (1 + c) ε(x_t, t) − c ε(x_τ, τ)
//! ```
//!
//! With `τ = T` the anchor prediction is the initial latent `x_T` itself, so
//! the correction costs no extra evaluations.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::oracle::{data_to_noise, noise_to_data};
use crate::schedule::NoiseSchedule;
use crate::solver::SolverConfig;

/// How the mixing coefficient `c` varies along the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixSchedule {
    /// `c(t) = start·(1 − t/T) + end·(t/T)`: `start` at `t = 0`, `end` at `t = T`.
    Linear { start: f64, end: f64 },
    Constant(f64),
    /// `c = 1 / (e^h − 1)` from the current step size.
    Derived,
}

impl Default for MixSchedule {
    fn default() -> Self {
        MixSchedule::Linear { start: 0.5, end: 0.0 }
    }
}

/// Where the anchor prediction is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau {
    /// A fixed time; `Time(1.0)` is the terminal time `T`.
    Time(f64),
    /// The anchor is the current prediction, which makes the correction vanish.
    Current,
}

impl Default for Tau {
    fn default() -> Self {
        Tau::Time(NoiseSchedule::T_MAX)
    }
}

/// Source of the anchor noise `ε(x_τ, τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorSource {
    /// Use the initial latent `x_T`. Only valid for `τ = T`.
    #[default]
    InitialNoise,
    /// Use the oracle's prediction at the last grid time not below `τ`.
    /// That evaluation is part of the trajectory anyway, so no NFE is added.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualFastConfig {
    pub mix: MixSchedule,
    pub tau: Tau,
    pub anchor_source: AnchorSource,
    /// Also correct the predictions inside the second-order difference of the
    /// 2M solvers. Off by default: only the first-order term is corrected.
    pub correct_difference: bool,
}

impl DualFastConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mix {
            MixSchedule::Linear { start, end } => {
                if !(start.is_finite() && end.is_finite() && start >= 0.0 && end >= 0.0) {
                    return Err(Error::Config("linear mixing endpoints must be finite and non-negative"));
                }
            }
            MixSchedule::Constant(c) => {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::Config("constant mixing coefficient must be finite and non-negative"));
                }
            }
            MixSchedule::Derived => {}
        }
        match self.tau {
            Tau::Time(tau) if !(tau > 0.0 && tau <= NoiseSchedule::T_MAX) => {
                Err(Error::Config("anchor time must lie in (0, T]"))
            }
            Tau::Time(tau) if tau < NoiseSchedule::T_MAX && self.anchor_source == AnchorSource::InitialNoise => {
                Err(Error::Config("the initial-noise anchor requires tau = T"))
            }
            Tau::Current if self.anchor_source == AnchorSource::InitialNoise => {
                Err(Error::Config("the initial-noise anchor requires tau = T"))
            }
            _ => Ok(()),
        }
    }
}

/// Mixing coefficient at evaluation time `t` for a step of log-SNR size `h`.
pub fn mixing_coefficient(config: &DualFastConfig, t: f64, h: f64) -> Result<f64> {
    match config.mix {
        MixSchedule::Linear { start, end } => {
            let frac = t / NoiseSchedule::T_MAX;
            Ok(start * (1.0 - frac) + end * frac)
        }
        MixSchedule::Constant(c) => Ok(c),
        MixSchedule::Derived => derived_coefficient(h),
    }
}

/// `c = 1 / (e^h − 1)`.
pub fn derived_coefficient(h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain { what: "step size", value: h });
    }
    Ok(1.0 / libm::expm1(h))
}

/// `(1 + c) ε_t − c ε_anchor`.
pub fn corrected_noise(eps_t: &[f64], eps_anchor: &[f64], c: f64) -> Result<Vec<f64>> {
    if eps_t.len() != eps_anchor.len() {
        return Err(Error::Argument("prediction and anchor dimensions differ"));
    }
    Ok(eps_t.iter().zip(eps_anchor).map(|(e, a)| (1.0 + c) * e - c * a).collect())
}

/// First-order `D` with the derived coefficient. Feeding it to the noise-mode
/// unified update gives `α_t x_θ(x_s, s) + σ_t ε_anchor`.
pub fn dualfast_ddim_d(eps_t: &[f64], eps_anchor: &[f64], h: f64) -> Result<Vec<f64>> {
    corrected_noise(eps_t, eps_anchor, derived_coefficient(h)?)
}

/// Corrected 2M noise-mode `D`; the difference term keeps raw predictions.
pub fn dualfast_dpm_solver_d(eps_t: &[f64], eps_prev: &[f64], eps_anchor: &[f64], c: f64, a1: f64) -> Result<Vec<f64>> {
    if eps_prev.len() != eps_t.len() {
        return Err(Error::Argument("history prediction dimension differs"));
    }
    let first = corrected_noise(eps_t, eps_anchor, c)?;
    Ok(first.iter().zip(eps_t.iter().zip(eps_prev)).map(|(f, (e, p))| f + a1 * (e - p)).collect())
}

/// Corrected 2M data-mode `D`.
///
/// The first-order data prediction is converted to noise, corrected, and
/// converted back; the difference term is left as is.
#[allow(clippy::too_many_arguments)]
pub fn dualfast_dpmpp_d(
    x_pred_t: &[f64],
    x_pred_prev: &[f64],
    eps_anchor: &[f64],
    c: f64,
    a2: f64,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    if x_pred_prev.len() != x_pred_t.len() {
        return Err(Error::Argument("history prediction dimension differs"));
    }
    let first = corrected_data(schedule, x_t, t, x_pred_t, eps_anchor, c)?;
    Ok(first.iter().zip(x_pred_t.iter().zip(x_pred_prev)).map(|(f, (d, p))| f + a2 * (d - p)).collect())
}

/// Correct a data prediction through its noise-space equivalent.
pub fn corrected_data(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: f64,
    x_pred: &[f64],
    eps_anchor: &[f64],
    c: f64,
) -> Result<Vec<f64>> {
    let eps = data_to_noise(schedule, x_t, t, x_pred)?;
    let eps_new = corrected_noise(&eps, eps_anchor, c)?;
    noise_to_data(schedule, x_t, t, &eps_new)
}

/// Corrector `D` with the new-point bracket corrected.
///
/// `eps_s` is the prediction at the step's start, `history` pairs each older
/// prediction with its coefficient `rho_j / r_j`, and `new_coeff` multiplies the
/// bracket `(1 + c) ε_new − c ε_anchor − ε_s`.
pub fn dualfast_unipc_corrector_d(
    eps_s: &[f64],
    history: &[(&[f64], f64)],
    eps_new: &[f64],
    new_coeff: f64,
    eps_anchor: &[f64],
    c: f64,
) -> Result<Vec<f64>> {
    let corrected = corrected_noise(eps_new, eps_anchor, c)?;
    crate::solver::unipc_combine(eps_s, history, Some((&corrected, new_coeff)))
}

/// Attach the correction to a base solver configuration.
pub fn attach(config: SolverConfig, dual: DualFastConfig) -> Result<SolverConfig> {
    config.validate()?;
    dual.validate()?;
    if dual.correct_difference && !config.family.is_two_step() {
        return Err(Error::Config("difference correction applies only to the 2M solvers"));
    }
    Ok(SolverConfig { dualfast: Some(dual), ..config })
}
