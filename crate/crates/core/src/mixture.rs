//! Gaussian-mixture data distributions with closed-form time marginals.
//!
//! Convolving a mixture with the forward kernel keeps it a mixture: component
//! `i` becomes `N(α_t μ_i, α_t² Σ_i + σ_t² I)`. Each covariance is stored in its
//! eigenbasis `Σ_i = Q Λ Qᵀ`, so the marginal precision at any `(α, σ)` is
//! `Q diag(1 / (α² Λ + σ²)) Qᵀ` without refactoring per call.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::schedule::NoiseSchedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `dim × dim` covariance.
    pub cov: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Eigen {
    /// Row-major eigenvector matrix; column `k` is the `k`-th eigenvector.
    vectors: Vec<f64>,
    values: Vec<f64>,
}

/// Finite mixture of full-covariance Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
    log_weights: Vec<f64>,
    eigen: Vec<Eigen>,
}

/// One component of the time-`t` marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(dim: usize, components: Vec<Component>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("mixture dimension must be at least 1"));
        }
        if components.is_empty() {
            return Err(Error::Argument("mixture needs at least one component"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Argument("mixture weights must sum to 1"));
        }
        let mut eigen = Vec::with_capacity(components.len());
        for c in &components {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::Argument("mixture weights must be positive"));
            }
            if c.mean.len() != dim || c.cov.len() != dim * dim {
                return Err(Error::Argument("component shape does not match dimension"));
            }
            if c.mean.iter().chain(&c.cov).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "mixture parameter", step: None });
            }
            let m = DMatrix::from_row_slice(dim, dim, &c.cov);
            let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
            if (&m - m.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
                return Err(Error::Argument("covariance must be symmetric"));
            }
            if m.clone().cholesky().is_none() {
                return Err(Error::Argument("covariance must be positive definite"));
            }
            let eig = SymmetricEigen::new(m);
            if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
                return Err(Error::Argument("covariance must be positive definite"));
            }
            let mut vectors = vec![0.0; dim * dim];
            for r in 0..dim {
                for k in 0..dim {
                    vectors[r * dim + k] = eig.eigenvectors[(r, k)];
                }
            }
            eigen.push(Eigen { vectors, values: eig.eigenvalues.iter().copied().collect() });
        }
        let log_weights = components.iter().map(|c| libm::log(c.weight)).collect();
        Ok(Self { dim, components, log_weights, eigen })
    }

    /// Isotropic components `(weight, mean, variance)`.
    pub fn isotropic(dim: usize, spec: &[(f64, Vec<f64>, f64)]) -> Result<Self> {
        let comps = spec
            .iter()
            .map(|(w, m, v)| {
                let mut cov = vec![0.0; dim * dim];
                for i in 0..dim {
                    cov[i * dim + i] = *v;
                }
                Component { weight: *w, mean: m.clone(), cov }
            })
            .collect();
        Self::new(dim, comps)
    }

    /// Standard normal `N(0, I)`.
    pub fn standard(dim: usize) -> Self {
        Self::isotropic(dim, &[(1.0, vec![0.0; dim], 1.0)]).expect("valid standard normal")
    }

    /// The default 2-D, three-component experiment mixture.
    pub fn reference() -> Self {
        Self::isotropic(
            2,
            &[
                (0.5, vec![-3.0, 0.0], 1.0),
                (0.3, vec![3.0, 1.0], 0.5),
                (0.2, vec![0.0, 4.0], 0.25),
            ],
        )
        .expect("valid reference mixture")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Mixture mean `Σ w_i μ_i`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (acc, v) in m.iter_mut().zip(&c.mean) {
                *acc += c.weight * v;
            }
        }
        m
    }

    /// Mixture covariance `Σ w_i (Σ_i + μ_i μ_iᵀ) − μ μᵀ`, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mu = self.mean();
        let mut c = vec![0.0; d * d];
        for comp in &self.components {
            for r in 0..d {
                for k in 0..d {
                    c[r * d + k] += comp.weight * (comp.cov[r * d + k] + comp.mean[r] * comp.mean[k]);
                }
            }
        }
        for r in 0..d {
            for k in 0..d {
                c[r * d + k] -= mu[r] * mu[k];
            }
        }
        c
    }

    /// Components of the time-`t` marginal `q_t`.
    pub fn marginal_params(&self, schedule: &NoiseSchedule, t: f64) -> Result<Vec<MarginalComponent>> {
        let (a, s) = schedule.alpha_sigma(t)?;
        let d = self.dim;
        Ok(self
            .components
            .iter()
            .map(|c| {
                let mut cov: Vec<f64> = c.cov.iter().map(|v| a * a * v).collect();
                for i in 0..d {
                    cov[i * d + i] += s * s;
                }
                MarginalComponent { weight: c.weight, mean: c.mean.iter().map(|m| a * m).collect(), cov }
            })
            .collect())
    }

    /// Per-component log joint `log w_i + log N(x; α μ_i, α² Σ_i + σ² I)`.
    /// Writes the precision-weighted residual `C_i⁻¹ (x − α μ_i)` into `residuals`.
    fn component_terms(&self, x: &[f64], alpha: f64, sigma: f64, log_terms: &mut [f64], residuals: &mut [f64]) {
        let d = self.dim;
        let s2 = sigma * sigma;
        let mut diff = vec![0.0; d];
        let mut proj = vec![0.0; d];
        for (i, comp) in self.components.iter().enumerate() {
            let eig = &self.eigen[i];
            for k in 0..d {
                diff[k] = x[k] - alpha * comp.mean[k];
            }
            let mut quad = 0.0;
            let mut logdet = 0.0;
            for k in 0..d {
                let z: f64 = (0..d).map(|r| eig.vectors[r * d + k] * diff[r]).sum();
                let var = alpha * alpha * eig.values[k] + s2;
                quad += z * z / var;
                logdet += libm::log(var);
                proj[k] = z / var;
            }
            let out = &mut residuals[i * d..(i + 1) * d];
            for r in 0..d {
                out[r] = (0..d).map(|k| eig.vectors[r * d + k] * proj[k]).sum();
            }
            log_terms[i] = self.log_weights[i] - 0.5 * (d as f64 * LN_2PI + logdet + quad);
        }
    }

    /// `log q(x)` for the marginal with signal scale `alpha` and noise scale `sigma`.
    pub fn log_density_at(&self, x: &[f64], alpha: f64, sigma: f64) -> f64 {
        let n = self.components.len();
        let mut terms = vec![0.0; n];
        let mut res = vec![0.0; n * self.dim];
        self.component_terms(x, alpha, sigma, &mut terms, &mut res);
        log_sum_exp(&terms)
    }

    pub fn log_density(&self, schedule: &NoiseSchedule, x: &[f64], t: f64) -> Result<f64> {
        let (a, s) = schedule.alpha_sigma(t)?;
        Ok(self.log_density_at(x, a, s))
    }

    /// Exact noise prediction `−σ ∇ log q(x)` at signal/noise scales `(alpha, sigma)`.
    pub fn noise_at(&self, x: &[f64], alpha: f64, sigma: f64, out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim || out.len() != self.dim {
            return Err(Error::Argument("vector length does not match mixture dimension"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "oracle input", step: None });
        }
        let n = self.components.len();
        let d = self.dim;
        let mut terms = vec![0.0; n];
        let mut res = vec![0.0; n * d];
        self.component_terms(x, alpha, sigma, &mut terms, &mut res);
        let lse = log_sum_exp(&terms);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let r = libm::exp(terms[i] - lse);
            for k in 0..d {
                out[k] += sigma * r * res[i * d + k];
            }
        }
        Ok(())
    }

    /// Exact noise prediction `ε*(x, t) = −σ_t ∇ log q_t(x)`.
    pub fn exact_noise(&self, schedule: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let (a, s) = schedule.alpha_sigma(t)?;
        let mut out = vec![0.0; self.dim];
        self.noise_at(x, a, s, &mut out)?;
        Ok(out)
    }

    /// Draw one sample of `x_0`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                idx = i;
                break;
            }
        }
        let z = rng::standard_normal(rng, d);
        let eig = &self.eigen[idx];
        let comp = &self.components[idx];
        (0..d)
            .map(|r| {
                comp.mean[r]
                    + (0..d).map(|k| eig.vectors[r * d + k] * libm::sqrt(eig.values[k]) * z[k]).sum::<f64>()
            })
            .collect()
    }

    /// `n` reproducible data samples; sample `i` uses its own stream.
    pub fn sample_data(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::Argument("sample count must be at least 1"));
        }
        Ok((0..n as u64).map(|i| self.draw(&mut rng::stream(seed, Purpose::Data, i))).collect())
    }
}

/// Forward kernel draw `x_t = α_t x_0 + σ_t ε`.
pub fn forward_perturb<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (a, s) = schedule.alpha_sigma(t)?;
    let eps = rng::standard_normal(rng, x0.len());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    extern crate std;
    use super::*;

    fn symmetric_pair() -> GaussianMixture {
        GaussianMixture::isotropic(1, &[(0.5, vec![2.0], 0.25), (0.5, vec![-2.0], 0.25)]).unwrap()
    }

    #[test]
    fn validation_rejects_bad_mixtures() {
        let bad_w = GaussianMixture::isotropic(1, &[(0.6, vec![0.0], 1.0), (0.6, vec![1.0], 1.0)]);
        assert!(bad_w.is_err());
        let not_pd = GaussianMixture::new(
            2,
            vec![Component { weight: 1.0, mean: vec![0.0, 0.0], cov: vec![1.0, 2.0, 2.0, 1.0] }],
        );
        assert!(not_pd.is_err());
        let asym = GaussianMixture::new(
            2,
            vec![Component { weight: 1.0, mean: vec![0.0, 0.0], cov: vec![1.0, 0.1, 0.0, 1.0] }],
        );
        assert!(asym.is_err());
        assert!(GaussianMixture::isotropic(0, &[]).is_err());
    }

    #[test]
    fn marginal_at_zero_is_the_data() {
        let s = NoiseSchedule::default();
        let m = GaussianMixture::reference();
        let marg = m.marginal_params(&s, 0.0).unwrap();
        for (mc, c) in marg.iter().zip(m.components()) {
            assert_eq!(mc.weight, c.weight);
            assert_eq!(mc.mean, c.mean);
            assert_eq!(mc.cov, c.cov);
        }
    }

    #[test]
    fn standard_normal_is_invariant_under_the_kernel() {
        let s = NoiseSchedule::default();
        let m = GaussianMixture::standard(3);
        for t in [0.1, 0.5, 0.9] {
            let marg = m.marginal_params(&s, t).unwrap();
            for i in 0..3 {
                for k in 0..3 {
                    let want = if i == k { 1.0 } else { 0.0 };
                    assert!((marg[0].cov[i * 3 + k] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_component_marginal_closed_form() {
        let s = NoiseSchedule::default();
        let m = symmetric_pair();
        // α = 0.6 ⇔ log α = ln 0.6
        let t = {
            let v = 0.5 * libm::log(0.36 / 0.64);
            s.t_of_lambda(v).unwrap()
        };
        let (a, sg) = s.alpha_sigma(t).unwrap();
        assert!((a - 0.6).abs() < 1e-10);
        let marg = m.marginal_params(&s, t).unwrap();
        assert!((marg[0].mean[0] - 1.2).abs() < 1e-10);
        assert!((marg[1].mean[0] + 1.2).abs() < 1e-10);
        assert!((marg[0].cov[0] - (0.36 * 0.25 + sg * sg)).abs() < 1e-10);

        // Monte-Carlo forward sampling moments
        let n = 100_000;
        let data = m.sample_data(n, 5).unwrap();
        let mut r = rng::stream(5, Purpose::ForwardNoise, 0);
        let xs: std::vec::Vec<f64> =
            data.iter().map(|x0| forward_perturb(&s, x0, t, &mut r).unwrap()[0]).collect();
        let second = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let want = 0.5 * (1.2f64 * 1.2 + marg[0].cov[0]) * 2.0;
        assert!(((second - want) / want).abs() < 0.01);
        let abs_first = xs.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        assert!(abs_first > 1.0);
    }

    #[test]
    fn unit_gaussian_noise_is_sigma_times_x() {
        let s = NoiseSchedule::default();
        let m = GaussianMixture::standard(2);
        for t in [0.01, 0.3, 1.0] {
            let x = [0.7, -1.3];
            let e = m.exact_noise(&s, &x, t).unwrap();
            let (_, sg) = s.alpha_sigma(t).unwrap();
            assert!((e[0] - sg * 0.7).abs() < 1e-14);
            assert!((e[1] + sg * 1.3).abs() < 1e-14);
        }
    }

    #[test]
    fn noise_vanishes_at_centered_modes() {
        let s = NoiseSchedule::default();
        let m = GaussianMixture::standard(2);
        assert_eq!(m.exact_noise(&s, &[0.0, 0.0], 0.5).unwrap(), vec![0.0, 0.0]);
        let e = symmetric_pair().exact_noise(&s, &[0.0], 0.2).unwrap();
        assert!(e[0].abs() < 1e-15);
    }

    #[test]
    fn well_separated_components_do_not_underflow() {
        let s = NoiseSchedule::default();
        let m = GaussianMixture::isotropic(1, &[(0.5, vec![-50.0], 1e-2), (0.5, vec![50.0], 1e-2)]).unwrap();
        let e = m.exact_noise(&s, &[1000.0], 1e-3).unwrap();
        assert!(e[0].is_finite());
        assert!(m.exact_noise(&s, &[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn forward_perturb_at_zero_is_identity() {
        let s = NoiseSchedule::default();
        let mut r = rng::stream(1, Purpose::ForwardNoise, 0);
        let x0 = [1.5, -2.0];
        assert_eq!(forward_perturb(&s, &x0, 0.0, &mut r).unwrap(), x0.to_vec());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = GaussianMixture::reference();
        assert_eq!(m.sample_data(10, 3).unwrap(), m.sample_data(10, 3).unwrap());
        assert!(m.sample_data(0, 3).is_err());
    }

    #[test]
    fn reference_mixture_moments() {
        let m = GaussianMixture::reference();
        let mu = m.mean();
        assert!((mu[0] - (-1.5 + 0.9)).abs() < 1e-14);
        assert!((mu[1] - (0.3 + 0.8)).abs() < 1e-14);
    }
}
