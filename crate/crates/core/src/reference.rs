//! Independent high-accuracy integrator for the exact probability flow.
//!
//! In the log-SNR variable the probability-flow ODE reads
//! `dx/dλ = σ² x − σ ε(x, λ)` with `α² = sigmoid(2λ)` and `σ² = sigmoid(−2λ)`.
//! Classical RK4 on that form shares no code with the exponential-integrator
//! solvers, which makes it a suitable error reference for them.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::schedule::NoiseSchedule;

fn alpha_sigma_of_lambda(v: f64) -> (f64, f64) {
    let a2 = 1.0 / (1.0 + libm::exp(-2.0 * v));
    let s2 = 1.0 / (1.0 + libm::exp(2.0 * v));
    (libm::sqrt(a2), libm::sqrt(s2))
}

fn rhs(mixture: &GaussianMixture, x: &[f64], v: f64, out: &mut [f64]) -> Result<()> {
    let (a, s) = alpha_sigma_of_lambda(v);
    mixture.noise_at(x, a, s, out)?;
    for (o, x) in out.iter_mut().zip(x) {
        *o = s * s * x - s * *o;
    }
    Ok(())
}

/// Integrate the exact flow from time `s` down to time `t` with `steps`
/// uniform RK4 steps in log-SNR.
pub fn exact_flow(
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
    x_s: &[f64],
    s: f64,
    t: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Argument("reference integration needs at least one step"));
    }
    let (l0, l1) = (schedule.lambda_of(s)?, schedule.lambda_of(t)?);
    if l1 < l0 {
        return Err(Error::Order { s, t });
    }
    let d = x_s.len();
    let h = (l1 - l0) / steps as f64;
    let mut x = x_s.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (alloc::vec![0.0; d], alloc::vec![0.0; d], alloc::vec![0.0; d], alloc::vec![0.0; d]);
    let mut tmp = alloc::vec![0.0; d];
    for i in 0..steps {
        let v = l0 + i as f64 * h;
        rhs(mixture, &x, v, &mut k1)?;
        for k in 0..d {
            tmp[k] = x[k] + 0.5 * h * k1[k];
        }
        rhs(mixture, &tmp, v + 0.5 * h, &mut k2)?;
        for k in 0..d {
            tmp[k] = x[k] + 0.5 * h * k2[k];
        }
        rhs(mixture, &tmp, v + 0.5 * h, &mut k3)?;
        for k in 0..d {
            tmp[k] = x[k] + h * k3[k];
        }
        rhs(mixture, &tmp, v + h, &mut k4)?;
        for k in 0..d {
            x[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "reference state", step: Some(i) });
        }
    }
    Ok(x)
}
