//! Paired error metrics and convergence-order fits.
//!
//! Sums run in input order so that results are reproducible bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Mean over samples of `‖a_i − b_i‖² / dim`.
pub fn paired_mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Argument("paired batches must be non-empty and equally long"));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Argument("paired samples differ in dimension"));
        }
        let sq: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
        total += sq / x.len() as f64;
    }
    Ok(total / a.len() as f64)
}

/// Mean of `‖a_i − b_i‖` over samples.
pub fn mean_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Argument("paired batches must be non-empty and equally long"));
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| libm::sqrt(x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()))
        .sum();
    Ok(total / a.len() as f64)
}

pub fn sample_mean(xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = xs.first().ok_or(Error::Argument("empty sample"))?.len();
    let mut m = vec![0.0; d];
    for x in xs {
        for (acc, v) in m.iter_mut().zip(x) {
            *acc += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= xs.len() as f64);
    Ok(m)
}

/// Unbiased sample covariance, row-major.
pub fn sample_covariance(xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if xs.len() < 2 {
        return Err(Error::Argument("covariance needs at least two samples"));
    }
    let m = sample_mean(xs)?;
    let d = m.len();
    let mut c = vec![0.0; d * d];
    for x in xs {
        for r in 0..d {
            for k in 0..d {
                c[r * d + k] += (x[r] - m[r]) * (x[k] - m[k]);
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= (xs.len() - 1) as f64);
    Ok(c)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum())
}

/// Frobenius norm of `a − b`.
pub fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    euclidean(a, b)
}

/// Least-squares fit of `log(error)` against `log(1/N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_order(ns: &[usize], errors: &[f64]) -> Result<OrderFit> {
    if ns.len() != errors.len() {
        return Err(Error::Argument("step counts and errors differ in length"));
    }
    if ns.len() < 3 {
        return Err(Error::Argument("order fit needs at least three step counts"));
    }
    if errors.iter().any(|e| !(*e > 0.0 && e.is_finite())) || ns.contains(&0) {
        return Err(Error::Argument("order fit needs positive errors and step counts"));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| -libm::log(n as f64)).collect();
    let ys: Vec<f64> = errors.iter().map(|&e| libm::log(e)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(OrderFit { slope, intercept: my - slope * mx, r_squared })
}
