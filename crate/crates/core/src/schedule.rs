//! Continuous variance-preserving noise schedule and time grids.
//!
//! Time runs over `[t_min, 1]` with a linear rate `β(t) = β_min + t (β_max − β_min)`,
//! so that `log α_t = −¼ t² (β_max − β_min) − ½ t β_min` and `σ_t = √(1 − α_t²)`.
//! Solvers integrate in the log-SNR variable `λ_t = log(α_t / σ_t)`.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Linear-β variance-preserving schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    t_min: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { beta_min: 0.1, beta_max: 20.0, t_min: 1e-3 }
    }
}

impl NoiseSchedule {
    /// Terminal time `T`.
    pub const T_MAX: f64 = 1.0;

    pub fn new(beta_min: f64, beta_max: f64, t_min: f64) -> Result<Self> {
        if !(beta_min.is_finite() && beta_min >= 0.0) {
            return Err(Error::Domain { what: "beta_min", value: beta_min });
        }
        if !(beta_max.is_finite() && beta_max >= beta_min && beta_max > 0.0) {
            return Err(Error::Domain { what: "beta_max", value: beta_max });
        }
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(Error::Domain { what: "t_min", value: t_min });
        }
        Ok(Self { beta_min, beta_max, t_min })
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        Self::T_MAX
    }

    fn check_unit(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain { what: "time", value: t })
        }
    }

    /// `β(t)`, the instantaneous noise rate.
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `log α_t` in closed form. Unchecked.
    pub fn log_alpha(&self, t: f64) -> f64 {
        -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min
    }

    /// `(α_t, σ_t)` for `t ∈ [0, 1]`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        Self::check_unit(t)?;
        let la = self.log_alpha(t);
        // σ² = 1 − α² evaluated without cancellation near t = 0
        let sigma2 = -libm::expm1(2.0 * la);
        Ok((libm::exp(la), libm::sqrt(sigma2)))
    }

    /// Log-SNR `λ_t = log(α_t / σ_t)` for `t ∈ (0, 1]`.
    pub fn lambda_of(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain { what: "time", value: t });
        }
        let la = self.log_alpha(t);
        let log_sigma2 = libm::log(-libm::expm1(2.0 * la));
        Ok(la - 0.5 * log_sigma2)
    }

    /// Inverse of [`lambda_of`](Self::lambda_of) on `[t_min, 1]`, by bisection.
    pub fn t_of_lambda(&self, v: f64) -> Result<f64> {
        let lam_hi = self.lambda_of(self.t_min)?;
        let lam_lo = self.lambda_of(Self::T_MAX)?;
        if !(v >= lam_lo && v <= lam_hi) {
            return Err(Error::Domain { what: "log-SNR", value: v });
        }
        if v == lam_hi {
            return Ok(self.t_min);
        }
        if v == lam_lo {
            return Ok(Self::T_MAX);
        }
        // λ is decreasing: λ(lo) > v > λ(hi)
        let (mut lo, mut hi) = (self.t_min, Self::T_MAX);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.lambda_of(mid)? > v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (l_lo, l_hi) = (self.lambda_of(lo)?, self.lambda_of(hi)?);
        Ok(if (l_lo - v).abs() <= (l_hi - v).abs() { lo } else { hi })
    }

    /// Step size `h = λ_t − λ_s` for a step from `s` down to `t`.
    pub fn step_size(&self, s: f64, t: f64) -> Result<f64> {
        if s < t {
            return Err(Error::Order { s, t });
        }
        if s == t {
            return Ok(0.0);
        }
        Ok(self.lambda_of(t)? - self.lambda_of(s)?)
    }

    /// Drift `f(t) = d log α / dt` and squared diffusion `g²(t) = dσ²/dt − 2 f σ²`.
    pub fn drift_diffusion(&self, t: f64) -> Result<(f64, f64)> {
        Self::check_unit(t)?;
        let f = -0.5 * self.beta(t);
        // dσ²/dt = −2 α² f, hence g² = −2 f (α² + σ²) = β(t)
        Ok((f, -2.0 * f))
    }

    /// Build a grid of `n` steps from `T` down to `t_min`.
    pub fn make_grid(&self, n: usize, scheme: GridScheme) -> Result<TimeGrid> {
        self.grid_between(Self::T_MAX, self.t_min, n, scheme)
    }

    /// Build a grid of `n` steps from `start` down to `end`, both inside `[t_min, 1]`.
    pub fn grid_between(&self, start: f64, end: f64, n: usize, scheme: GridScheme) -> Result<TimeGrid> {
        if n == 0 {
            return Err(Error::Argument("grid needs at least one step"));
        }
        for v in [start, end] {
            if !(v >= self.t_min && v <= Self::T_MAX) {
                return Err(Error::Domain { what: "grid endpoint", value: v });
            }
        }
        if start <= end {
            return Err(Error::Order { s: start, t: end });
        }
        let mut steps = Vec::with_capacity(n + 1);
        steps.push(start);
        match scheme {
            GridScheme::UniformTime => {
                let dt = (start - end) / n as f64;
                for i in 1..n {
                    steps.push(start - i as f64 * dt);
                }
            }
            GridScheme::UniformLogSnr => {
                let (l0, l1) = (self.lambda_of(start)?, self.lambda_of(end)?);
                let dl = (l1 - l0) / n as f64;
                for i in 1..n {
                    steps.push(self.t_of_lambda(l0 + i as f64 * dl)?);
                }
            }
        }
        steps.push(end);
        TimeGrid::new(steps, scheme)
    }
}

/// How grid nodes are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridScheme {
    UniformTime,
    #[default]
    UniformLogSnr,
}

/// Strictly decreasing sequence of solver times `t_0 > t_1 > … > t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    steps: Vec<f64>,
    scheme: GridScheme,
}

impl TimeGrid {
    pub fn new(steps: Vec<f64>, scheme: GridScheme) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::Argument("grid needs at least one step"));
        }
        if steps.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Argument("grid times must be strictly decreasing"));
        }
        Ok(Self { steps, scheme })
    }

    pub fn times(&self) -> &[f64] {
        &self.steps
    }

    /// Number of solver steps `N`.
    pub fn num_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn scheme(&self) -> GridScheme {
        self.scheme
    }

    pub fn start(&self) -> f64 {
        self.steps[0]
    }

    pub fn end(&self) -> f64 {
        self.steps[self.steps.len() - 1]
    }
}
