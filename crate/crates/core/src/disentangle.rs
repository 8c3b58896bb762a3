//! Per-period separation of approximation and discretization error.
//!
//! The time axis is cut into equal-width periods. For each period `[s, t]` a
//! batch of exact samples `x_s` is drawn through the forward kernel and pushed
//! to `t` three ways, all from the same `x_s`:
//!
//! 1. `reference_nfe` steps with the exact oracle,
//! 2. `fine_nfe` steps with the approximate oracle,
//! 3. `coarse_nfe` steps with the approximate oracle.
//!
//! The gap between 1 and 2 measures approximation error and the gap between
//! 2 and 3 measures discretization error. Both are reported as per-dimension
//! mean squared distances.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::paired_mse;
use crate::mixture::{forward_perturb, GaussianMixture};
use crate::oracle::NoiseOracle;
use crate::rng::{self, Purpose};
use crate::schedule::{GridScheme, NoiseSchedule};
use crate::solver::{sample_endpoint, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisentangleConfig {
    pub periods: usize,
    pub fine_nfe: usize,
    pub coarse_nfe: usize,
    pub reference_nfe: usize,
    pub batch: usize,
    /// Solver used for all three transitions.
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        Self {
            periods: 9,
            fine_nfe: 111,
            coarse_nfe: 1,
            reference_nfe: 1110,
            batch: 256,
            solver: SolverConfig::unipc(3, true),
            seed: 0,
        }
    }
}

impl DisentangleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.periods == 0 {
            return Err(Error::Argument("at least one period is required"));
        }
        if self.coarse_nfe == 0 || self.fine_nfe < self.coarse_nfe {
            return Err(Error::Argument("need fine_nfe >= coarse_nfe >= 1"));
        }
        if self.reference_nfe == 0 || self.batch == 0 {
            return Err(Error::Argument("reference_nfe and batch must be positive"));
        }
        if self.solver.dualfast.is_some() {
            return Err(Error::Config("transitions use the base solver"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodRecord {
    pub index: usize,
    pub s: f64,
    pub t: f64,
    pub approx_mse: f64,
    pub disc_mse: f64,
}

/// Error curve ordered by period index (index 0 is the noisiest period).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorCurve {
    pub records: Vec<PeriodRecord>,
}

/// Period `index` as `(s, t)` with `s > t`; period 0 starts at `T`.
pub fn period_bounds(schedule: &NoiseSchedule, periods: usize, index: usize) -> Result<(f64, f64)> {
    if index >= periods {
        return Err(Error::Argument("period index out of range"));
    }
    let (top, bottom) = (NoiseSchedule::T_MAX, schedule.t_min());
    let width = (top - bottom) / periods as f64;
    let s = if index == 0 { top } else { top - index as f64 * width };
    let t = if index + 1 == periods { bottom } else { top - (index + 1) as f64 * width };
    Ok((s, t))
}

/// Compute one period of the curve.
pub fn run_period<E, A>(
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
    exact: &E,
    approx: &A,
    config: &DisentangleConfig,
    index: usize,
) -> Result<PeriodRecord>
where
    E: NoiseOracle + ?Sized,
    A: NoiseOracle + ?Sized,
{
    config.validate()?;
    let (s, t) = period_bounds(schedule, config.periods, index)?;
    let grid = |n| schedule.grid_between(s, t, n, GridScheme::UniformLogSnr);
    let (ref_grid, fine_grid, coarse_grid) = (grid(config.reference_nfe)?, grid(config.fine_nfe)?, grid(config.coarse_nfe)?);
    let mut exact_end = Vec::with_capacity(config.batch);
    let mut fine_end = Vec::with_capacity(config.batch);
    let mut coarse_end = Vec::with_capacity(config.batch);
    let base = (index as u64) << 32;
    for k in 0..config.batch as u64 {
        let x0 = mixture.draw(&mut rng::stream(config.seed, Purpose::Data, base | k));
        let x_s = forward_perturb(schedule, &x0, s, &mut rng::stream(config.seed, Purpose::ForwardNoise, base | k))?;
        exact_end.push(sample_endpoint(schedule, exact, &config.solver, &ref_grid, x_s.clone())?.0);
        let fine = sample_endpoint(schedule, approx, &config.solver, &fine_grid, x_s.clone())?.0;
        let coarse = sample_endpoint(schedule, approx, &config.solver, &coarse_grid, x_s)?.0;
        fine_end.push(fine);
        coarse_end.push(coarse);
    }
    let approx_mse = paired_mse(&exact_end, &fine_end)?;
    let disc_mse = paired_mse(&fine_end, &coarse_end)?;
    if !(approx_mse.is_finite() && disc_mse.is_finite()) {
        return Err(Error::NonFinite { what: "period MSE", step: Some(index) });
    }
    Ok(PeriodRecord { index, s, t, approx_mse, disc_mse })
}

/// Compute every period in order.
pub fn run_disentangle<E, A>(
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
    exact: &E,
    approx: &A,
    config: &DisentangleConfig,
) -> Result<ErrorCurve>
where
    E: NoiseOracle + ?Sized,
    A: NoiseOracle + ?Sized,
{
    let records = (0..config.periods)
        .map(|i| run_period(schedule, mixture, exact, approx, config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorCurve { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periods_partition_the_time_axis() {
        let s = NoiseSchedule::default();
        let mut prev_t = 1.0;
        for i in 0..9 {
            let (a, b) = period_bounds(&s, 9, i).unwrap();
            assert_eq!(a, prev_t);
            assert!(a > b);
            prev_t = b;
        }
        assert_eq!(prev_t, s.t_min());
        assert!(period_bounds(&s, 9, 9).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = DisentangleConfig::default();
        assert!(c.validate().is_ok());
        c.fine_nfe = 0;
        assert!(c.validate().is_err());
        let c = DisentangleConfig { periods: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
