//! Experiments: paired comparisons, ablations, convergence and disentanglement.
//!
//! Batch elements run in parallel with rayon. Results are collected in input
//! order and reduced sequentially, so outputs do not depend on thread count.

use dualfast_core::disentangle::{run_period, ErrorCurve};
use dualfast_core::metrics::{fit_order, frobenius, mean_distance, paired_mse, sample_covariance, sample_mean, euclidean, OrderFit};
use dualfast_core::reference::exact_flow;
use dualfast_core::solver::sample_endpoint;
use dualfast_core::{attach, AnchorSource, Counting, Family, MixSchedule, NoiseOracle, NoiseSchedule, SolverConfig, Tau, TimeGrid};
use rayon::prelude::*;

use crate::cache::{batch_hash, initial_noise, Reference};
use crate::config::{parse_c_schedule, parse_tau, ExperimentConfig};
use crate::error::{HarnessError, Result};

/// Endpoints of every trajectory in `xs`, in order.
pub fn run_batch<O: NoiseOracle + Sync + ?Sized>(
    schedule: &NoiseSchedule,
    oracle: &O,
    config: &SolverConfig,
    grid: &TimeGrid,
    xs: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let out: dualfast_core::Result<Vec<_>> =
        xs.par_iter().map(|x| sample_endpoint(schedule, oracle, config, grid, x.clone()).map(|r| r.0)).collect();
    Ok(out?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub n: usize,
    pub mse_to_reference: f64,
    /// Distance between sample mean and mixture mean.
    pub mean_error: f64,
    /// Frobenius distance between sample and mixture covariance.
    pub cov_frobenius_error: f64,
    pub nfe: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub records: Vec<MetricRecord>,
}

impl MetricReport {
    pub fn mse_at(&self, n: usize) -> Option<f64> {
        self.records.iter().find(|r| r.n == n).map(|r| r.mse_to_reference)
    }
}

fn check_pairing(config: &ExperimentConfig, reference: &Reference, noise: &[Vec<f64>]) -> Result<()> {
    if reference.batch() != config.batch {
        return Err(HarnessError::Config(format!(
            "reference has batch {} but config asks for {}",
            reference.batch(),
            config.batch
        )));
    }
    if batch_hash(noise) != reference.noise_hash {
        return Err(HarnessError::Config("reference was built from different initial noise".into()));
    }
    Ok(())
}

/// Run every method at every N from the reference's initial noise.
pub fn compare(
    config: &ExperimentConfig,
    methods: &[SolverConfig],
    ns: &[usize],
    reference: &Reference,
) -> Result<Vec<MetricReport>> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(HarnessError::Config("need at least one positive step count".into()));
    }
    if methods.is_empty() {
        return Err(HarnessError::Config("no methods to compare".into()));
    }
    let schedule = config.schedule()?;
    let mixture = config.mixture()?;
    let oracle = config.oracle()?;
    let noise = initial_noise(config, mixture.dim());
    check_pairing(config, reference, &noise)?;
    let (true_mean, true_cov) = (mixture.mean(), mixture.covariance());
    let scheme = config.grid.scheme.into();
    let mut reports = Vec::with_capacity(methods.len());
    for method in methods {
        let mut records = Vec::with_capacity(ns.len());
        for &n in ns {
            let grid = schedule.make_grid(n, scheme)?;
            let counted = Counting::new(&oracle);
            let ends = run_batch(&schedule, &counted, method, &grid, &noise)?;
            let record = MetricRecord {
                n,
                mse_to_reference: paired_mse(&ends, &reference.endpoints)?,
                mean_error: euclidean(&sample_mean(&ends)?, &true_mean),
                cov_frobenius_error: if ends.len() > 1 { frobenius(&sample_covariance(&ends)?, &true_cov) } else { 0.0 },
                nfe: counted.count(),
            };
            let finite = [record.mse_to_reference, record.mean_error, record.cov_frobenius_error];
            if finite.iter().any(|v| !v.is_finite()) {
                return Err(HarnessError::Numeric(format!("non-finite metric for {} at N={n}", method.label())));
            }
            records.push(record);
        }
        reports.push(MetricReport { method: method.label(), records });
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    CSchedule,
    Tau,
    CoefficientMode,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Axis> {
        match s {
            "c-schedule" => Ok(Axis::CSchedule),
            "tau" => Ok(Axis::Tau),
            "coefficient-mode" => Ok(Axis::CoefficientMode),
            _ => Err(HarnessError::Config(format!("unknown ablation axis `{s}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Axis::CSchedule => "c-schedule",
            Axis::Tau => "tau",
            Axis::CoefficientMode => "coefficient-mode",
        }
    }

    pub fn default_values(&self) -> Vec<String> {
        let v: &[&str] = match self {
            Axis::CSchedule => &["linear", "constant:0", "constant:0.25", "constant:0.5"],
            Axis::Tau => &["T", "0.5", "current"],
            Axis::CoefficientMode => &["linear", "derived"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

/// The configured DualFast solver with one axis set to `value`.
pub fn ablation_method(config: &ExperimentConfig, axis: Axis, value: &str) -> Result<SolverConfig> {
    let mut dual = config.dualfast_config()?;
    match axis {
        Axis::CSchedule => dual.mix = parse_c_schedule(value)?,
        Axis::Tau => {
            dual.tau = parse_tau(value)?;
            dual.anchor_source = if dual.tau == Tau::Time(NoiseSchedule::T_MAX) {
                AnchorSource::InitialNoise
            } else {
                AnchorSource::Oracle
            };
        }
        Axis::CoefficientMode => {
            dual.mix = match value {
                "linear" => MixSchedule::default(),
                "derived" => MixSchedule::Derived,
                _ => return Err(HarnessError::Config(format!("coefficient mode must be linear or derived, got `{value}`"))),
            }
        }
    }
    dual.validate()?;
    Ok(attach(config.solver_config()?, dual)?)
}

/// One report per value of `axis`, each a full `compare` over `ns`.
pub fn ablate(
    config: &ExperimentConfig,
    axis: Axis,
    values: &[String],
    ns: &[usize],
    reference: &Reference,
) -> Result<Vec<(String, MetricReport)>> {
    if values.is_empty() {
        return Err(HarnessError::Config("ablation needs at least one value".into()));
    }
    let methods = values.iter().map(|v| ablation_method(config, axis, v)).collect::<Result<Vec<_>>>()?;
    let reports = compare(config, &methods, ns, reference)?;
    Ok(values.iter().cloned().zip(reports).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceResult {
    pub method: String,
    /// `(N, mean endpoint distance)` pairs.
    pub errors: Vec<(usize, f64)>,
    pub fit: OrderFit,
}

/// Error against the exact flow for each `N`, with a log-log order fit.
///
/// Always uses the exact oracle of the configured mixture. The reference
/// integrates the probability-flow ODE with RK4 in log-SNR.
pub fn convergence_study(config: &ExperimentConfig, methods: &[SolverConfig], ns: &[usize]) -> Result<Vec<ConvergenceResult>> {
    if ns.len() < 3 {
        return Err(HarnessError::Config("convergence study needs at least three step counts".into()));
    }
    let schedule = config.schedule()?;
    let oracle = config.exact_oracle()?;
    let mixture = oracle.mixture();
    let cs = &config.convergence;
    let noise = dualfast_core::rng::initial_noise_batch(config.seed, cs.batch, mixture.dim());
    let (start, end) = (NoiseSchedule::T_MAX, schedule.t_min());
    let truth: dualfast_core::Result<Vec<_>> =
        noise.par_iter().map(|x| exact_flow(&schedule, mixture, x, start, end, cs.reference_steps)).collect();
    let truth = truth?;
    let scheme = config.grid.scheme.into();
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let mut errors = Vec::with_capacity(ns.len());
        for &n in ns {
            let grid = schedule.make_grid(n, scheme)?;
            let ends = run_batch(&schedule, &oracle, method, &grid, &noise)?;
            errors.push((n, mean_distance(&ends, &truth)?));
        }
        let (xs, ys): (Vec<usize>, Vec<f64>) = errors.iter().copied().unzip();
        let fit = fit_order(&xs, &ys).map_err(|e| HarnessError::Numeric(format!("{}: {e}", method.label())))?;
        out.push(ConvergenceResult { method: method.label(), errors, fit });
    }
    Ok(out)
}

/// Default convergence line-up: each family at its nominal order.
pub fn convergence_methods() -> Vec<SolverConfig> {
    Family::ALL.iter().map(|&f| SolverConfig::for_family(f)).collect()
}

/// The per-period error curve, periods evaluated in parallel.
pub fn disentangle(config: &ExperimentConfig) -> Result<ErrorCurve> {
    let schedule = config.schedule()?;
    let mixture = config.mixture()?;
    let exact = config.exact_oracle()?;
    let approx = config.oracle()?;
    let dcfg = config.disentangle_config()?;
    let records: dualfast_core::Result<Vec<_>> = (0..dcfg.periods)
        .into_par_iter()
        .map(|i| run_period(&schedule, &mixture, &exact, &approx, &dcfg, i))
        .collect();
    Ok(ErrorCurve { records: records? })
}

/// Endpoints of the configured method at `n` steps from the config's noise.
pub fn sample(config: &ExperimentConfig, method: &SolverConfig, n: usize) -> Result<(Vec<Vec<f64>>, u64)> {
    let schedule = config.schedule()?;
    let oracle = config.oracle()?;
    let counted = Counting::new(&oracle);
    let grid = schedule.make_grid(n, config.grid.scheme.into())?;
    let noise = initial_noise(config, oracle.dim());
    let ends = run_batch(&schedule, &counted, method, &grid, &noise)?;
    Ok((ends, counted.count()))
}
