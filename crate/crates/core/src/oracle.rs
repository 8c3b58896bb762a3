//! Noise-prediction oracles standing in for a trained network.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Smallest α or σ accepted as a divisor in prediction conversions.
pub const SINGULAR_EPS: f64 = 1e-15;

/// An evaluable noise predictor `ε(x, t)`.
pub trait NoiseOracle {
    fn dim(&self) -> usize;

    /// Write the noise prediction at `(x, t)` into `out`.
    fn predict_noise(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.predict_noise(x, t, &mut out)?;
        Ok(out)
    }
}

impl<O: NoiseOracle + ?Sized> NoiseOracle for &O {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict_noise(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).predict_noise(x, t, out)
    }
}

/// Exact score of a Gaussian mixture, `ε*(x, t) = −σ_t ∇ log q_t(x)`.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    mixture: GaussianMixture,
    schedule: NoiseSchedule,
}

impl ExactOracle {
    pub fn new(mixture: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self { mixture, schedule }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl NoiseOracle for ExactOracle {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn predict_noise(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let (a, s) = self.schedule.alpha_sigma(t)?;
        self.mixture.noise_at(x, a, s, out)
    }
}

/// Exact oracle with an error that shrinks linearly to zero at `t = 1`:
/// `ε̂ = (1 + b₀(1 − t)) ε* + a₀(1 − t) u` for a fixed unit vector `u`.
#[derive(Debug, Clone)]
pub struct PerturbedOracle {
    exact: ExactOracle,
    bias_scale: f64,
    drift_scale: f64,
    direction_seed: u64,
    direction: Vec<f64>,
}

impl PerturbedOracle {
    pub const DEFAULT_BIAS: f64 = 0.15;
    pub const DEFAULT_DRIFT: f64 = 0.05;

    pub fn new(exact: ExactOracle, bias_scale: f64, drift_scale: f64, direction_seed: u64) -> Result<Self> {
        if !(bias_scale.is_finite() && drift_scale.is_finite()) {
            return Err(Error::NonFinite { what: "perturbation scale", step: None });
        }
        let direction = rng::unit_direction(direction_seed, exact.dim());
        Ok(Self { exact, bias_scale, drift_scale, direction_seed, direction })
    }

    pub fn with_defaults(exact: ExactOracle, direction_seed: u64) -> Self {
        Self::new(exact, Self::DEFAULT_BIAS, Self::DEFAULT_DRIFT, direction_seed).expect("finite defaults")
    }

    pub fn exact(&self) -> &ExactOracle {
        &self.exact
    }

    pub fn bias_scale(&self) -> f64 {
        self.bias_scale
    }

    pub fn drift_scale(&self) -> f64 {
        self.drift_scale
    }

    pub fn direction_seed(&self) -> u64 {
        self.direction_seed
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// Apply the perturbation at time `t` to an exact prediction in place.
    pub fn perturb(&self, t: f64, eps: &mut [f64]) {
        let decay = 1.0 - t;
        let gain = 1.0 + self.bias_scale * decay;
        let shift = self.drift_scale * decay;
        for (o, u) in eps.iter_mut().zip(&self.direction) {
            *o = gain * *o + shift * u;
        }
    }
}

impl NoiseOracle for PerturbedOracle {
    fn dim(&self) -> usize {
        self.exact.dim()
    }

    fn predict_noise(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.exact.predict_noise(x, t, out)?;
        self.perturb(t, out);
        Ok(())
    }
}

/// Wraps an oracle and counts every evaluation.
#[derive(Debug, Default)]
pub struct Counting<O> {
    inner: O,
    count: AtomicU64,
}

impl<O> Counting<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, count: AtomicU64::new(0) }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: NoiseOracle> NoiseOracle for Counting<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn predict_noise(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.predict_noise(x, t, out)
    }
}

/// Noise and data predictions from a single evaluation at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub noise_pred: Vec<f64>,
    pub data_pred: Vec<f64>,
    pub t: f64,
}

impl PredictionPair {
    pub fn from_noise(schedule: &NoiseSchedule, x: &[f64], t: f64, noise_pred: Vec<f64>) -> Result<Self> {
        let data_pred = noise_to_data(schedule, x, t, &noise_pred)?;
        Ok(Self { noise_pred, data_pred, t })
    }
}

/// `x_θ = (x − σ_t ε) / α_t`.
pub fn noise_to_data(schedule: &NoiseSchedule, x: &[f64], t: f64, noise_pred: &[f64]) -> Result<Vec<f64>> {
    let (a, s) = schedule.alpha_sigma(t)?;
    if a < SINGULAR_EPS {
        return Err(Error::Singular { what: "alpha", value: a });
    }
    check_len(x, noise_pred)?;
    Ok(x.iter().zip(noise_pred).map(|(x, e)| (x - s * e) / a).collect())
}

/// `ε = (x − α_t x_θ) / σ_t`.
pub fn data_to_noise(schedule: &NoiseSchedule, x: &[f64], t: f64, data_pred: &[f64]) -> Result<Vec<f64>> {
    let (a, s) = schedule.alpha_sigma(t)?;
    if s < SINGULAR_EPS {
        return Err(Error::Singular { what: "sigma", value: s });
    }
    check_len(x, data_pred)?;
    Ok(x.iter().zip(data_pred).map(|(x, d)| (x - a * d) / s).collect())
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument("vector lengths differ"));
    }
    Ok(())
}
