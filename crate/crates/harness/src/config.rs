//! Experiment configuration, loaded from TOML. Every field has a default.

use std::path::{Path, PathBuf};

use dualfast_core::disentangle::DisentangleConfig;
use dualfast_core::{
    AnchorSource, Component, DualFastConfig, ExactOracle, Family, GaussianMixture, GridScheme, MixSchedule,
    NoiseSchedule, PerturbedOracle, SolverConfig, Tau,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::oracle::AnyOracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub batch: usize,
    pub out: PathBuf,
    /// Defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub reference_nfe: usize,
    pub schedule: ScheduleSpec,
    pub mixture: MixtureSpec,
    pub oracle: OracleSpec,
    pub solver: SolverSpec,
    pub dualfast: DualFastSpec,
    pub grid: GridSpec,
    pub convergence: ConvergenceSpec,
    pub disentangle: DisentangleSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 1024,
            out: PathBuf::from("out"),
            cache_dir: None,
            reference_nfe: 1000,
            schedule: ScheduleSpec::default(),
            mixture: MixtureSpec::default(),
            oracle: OracleSpec::default(),
            solver: SolverSpec::default(),
            dualfast: DualFastSpec::default(),
            grid: GridSpec::default(),
            convergence: ConvergenceSpec::default(),
            disentangle: DisentangleSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_min: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { beta_min: 0.1, beta_max: 20.0, t_min: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Full covariance as nested rows.
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        let diag = |v: f64| vec![vec![v, 0.0], vec![0.0, v]];
        Self {
            components: vec![
                ComponentSpec { weight: 0.5, mean: vec![-3.0, 0.0], cov: diag(1.0) },
                ComponentSpec { weight: 0.3, mean: vec![3.0, 1.0], cov: diag(0.5) },
                ComponentSpec { weight: 0.2, mean: vec![0.0, 4.0], cov: diag(0.25) },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Exact,
    #[default]
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub kind: OracleKind,
    pub bias_scale: f64,
    pub drift_scale: f64,
    pub direction_seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self { kind: OracleKind::Perturbed, bias_scale: 0.15, drift_scale: 0.05, direction_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    /// `ddim`, `dpm-solver-2m`, `dpm-solver++-2m` or `unipc`.
    pub family: String,
    pub order: Option<usize>,
    pub corrector: Option<bool>,
    pub threshold: Option<f64>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { family: "ddim".into(), order: None, corrector: None, threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualFastSpec {
    pub enabled: bool,
    /// `linear`, `linear:<start>:<end>`, `constant:<c>` or `derived`.
    pub c_schedule: String,
    /// `T`, `current`, or a time in (0, 1].
    pub tau: String,
    /// `initial-noise` or `oracle`; chosen from `tau` when absent.
    pub anchor: Option<String>,
    pub correct_difference: bool,
}

impl Default for DualFastSpec {
    fn default() -> Self {
        Self { enabled: false, c_schedule: "linear".into(), tau: "T".into(), anchor: None, correct_difference: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    #[default]
    UniformLogsnr,
    UniformTime,
}

impl From<SchemeName> for GridScheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::UniformLogsnr => GridScheme::UniformLogSnr,
            SchemeName::UniformTime => GridScheme::UniformTime,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nfe: Vec<usize>,
    pub scheme: SchemeName,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nfe: vec![5, 6, 7, 8, 10], scheme: SchemeName::UniformLogsnr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub nfe: Vec<usize>,
    pub batch: usize,
    /// RK4 steps of the exact-flow reference.
    pub reference_steps: usize,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self { nfe: vec![10, 20, 40, 80], batch: 64, reference_steps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisentangleSpec {
    pub periods: usize,
    pub fine_nfe: usize,
    pub coarse_nfe: usize,
    pub reference_nfe: usize,
    pub batch: usize,
}

impl Default for DisentangleSpec {
    fn default() -> Self {
        let d = DisentangleConfig::default();
        Self {
            periods: d.periods,
            fine_nfe: d.fine_nfe,
            coarse_nfe: d.coarse_nfe,
            reference_nfe: d.reference_nfe,
            batch: d.batch,
        }
    }
}

pub fn parse_c_schedule(s: &str) -> Result<MixSchedule> {
    let bad = || HarnessError::Config(format!("unknown c schedule `{s}`"));
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.trim().split(':').collect();
    match parts.as_slice() {
        ["linear"] => Ok(MixSchedule::default()),
        ["linear", a, b] => Ok(MixSchedule::Linear { start: num(a)?, end: num(b)? }),
        ["constant", v] => Ok(MixSchedule::Constant(num(v)?)),
        ["derived"] => Ok(MixSchedule::Derived),
        _ => Err(bad()),
    }
}

pub fn parse_tau(s: &str) -> Result<Tau> {
    match s.trim() {
        "T" | "t" => Ok(Tau::Time(NoiseSchedule::T_MAX)),
        "current" => Ok(Tau::Current),
        v => v
            .parse::<f64>()
            .map(Tau::Time)
            .map_err(|_| HarnessError::Config(format!("tau must be `T`, `current` or a time, got `{v}`"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every nested spec by building it.
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(HarnessError::Config("batch must be positive".into()));
        }
        if self.reference_nfe == 0 {
            return Err(HarnessError::Config("reference_nfe must be positive".into()));
        }
        if self.grid.nfe.is_empty() || self.grid.nfe.contains(&0) {
            return Err(HarnessError::Config("grid.nfe must list positive step counts".into()));
        }
        self.oracle()?;
        self.solver_config()?;
        self.dualfast_config()?;
        self.disentangle_config()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        Ok(NoiseSchedule::new(s.beta_min, s.beta_max, s.t_min)?)
    }

    pub fn mixture(&self) -> Result<GaussianMixture> {
        let first = self.mixture.components.first().ok_or_else(|| HarnessError::Config("mixture has no components".into()))?;
        let dim = first.mean.len();
        let mut comps = Vec::with_capacity(self.mixture.components.len());
        for c in &self.mixture.components {
            if c.mean.len() != dim || c.cov.len() != dim || c.cov.iter().any(|r| r.len() != dim) {
                return Err(HarnessError::Config("mixture component shapes disagree".into()));
            }
            comps.push(Component { weight: c.weight, mean: c.mean.clone(), cov: c.cov.concat() });
        }
        Ok(GaussianMixture::new(dim, comps)?)
    }

    pub fn exact_oracle(&self) -> Result<ExactOracle> {
        Ok(ExactOracle::new(self.mixture()?, self.schedule()?))
    }

    pub fn oracle(&self) -> Result<AnyOracle> {
        let exact = self.exact_oracle()?;
        Ok(match self.oracle.kind {
            OracleKind::Exact => AnyOracle::Exact(exact),
            OracleKind::Perturbed => {
                let o = &self.oracle;
                AnyOracle::Perturbed(PerturbedOracle::new(exact, o.bias_scale, o.drift_scale, o.direction_seed)?)
            }
        })
    }

    pub fn family(&self) -> Result<Family> {
        Family::parse(&self.solver.family)
            .ok_or_else(|| HarnessError::Config(format!("unknown solver family `{}`", self.solver.family)))
    }

    /// The configured base solver, without DualFast.
    pub fn solver_config(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::for_family(self.family()?);
        if let Some(p) = self.solver.order {
            cfg.order = p;
        }
        if let Some(c) = self.solver.corrector {
            cfg.use_corrector = c;
        }
        cfg.threshold = self.solver.threshold;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dualfast_config(&self) -> Result<DualFastConfig> {
        let d = &self.dualfast;
        let tau = parse_tau(&d.tau)?;
        let anchor_source = match d.anchor.as_deref() {
            Some("initial-noise") => AnchorSource::InitialNoise,
            Some("oracle") => AnchorSource::Oracle,
            Some(other) => return Err(HarnessError::Config(format!("unknown anchor source `{other}`"))),
            None if tau == Tau::Time(NoiseSchedule::T_MAX) => AnchorSource::InitialNoise,
            None => AnchorSource::Oracle,
        };
        let cfg = DualFastConfig {
            mix: parse_c_schedule(&d.c_schedule)?,
            tau,
            anchor_source,
            correct_difference: d.correct_difference,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configured solver with DualFast attached when `dualfast` is true.
    pub fn method(&self, dualfast: bool) -> Result<SolverConfig> {
        let base = self.solver_config()?;
        if dualfast {
            Ok(dualfast_core::attach(base, self.dualfast_config()?)?)
        } else {
            Ok(base)
        }
    }

    pub fn disentangle_config(&self) -> Result<DisentangleConfig> {
        let d = &self.disentangle;
        let cfg = DisentangleConfig {
            periods: d.periods,
            fine_nfe: d.fine_nfe,
            coarse_nfe: d.coarse_nfe,
            reference_nfe: d.reference_nfe,
            batch: d.batch,
            seed: self.seed,
            ..DisentangleConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    /// SHA-256 of the canonical JSON form of the whole config.
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }
}

/// SHA-256 hex digest of a value's JSON form with keys sorted.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    // serde_json::Value keeps object keys in a BTreeMap, so this is canonical.
    let v = serde_json::to_value(value).expect("config serializes");
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.mixture().unwrap().mean(), GaussianMixture::reference().mean());
        assert_eq!(cfg.solver_config().unwrap(), SolverConfig::ddim());
    }

    #[test]
    fn nested_tables_parse() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 7
            batch = 16
            [oracle]
            kind = "exact"
            [solver]
            family = "unipc"
            order = 2
            [dualfast]
            enabled = true
            c_schedule = "constant:0.25"
            tau = "0.5"
            [[mixture.components]]
            weight = 1.0
            mean = [0.0]
            cov = [[2.0]]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(matches!(cfg.oracle().unwrap(), AnyOracle::Exact(_)));
        let m = cfg.method(true).unwrap();
        assert_eq!(m.order, 2);
        let d = m.dualfast.unwrap();
        assert_eq!(d.mix, MixSchedule::Constant(0.25));
        assert_eq!(d.anchor_source, AnchorSource::Oracle);
        assert_eq!(cfg.mixture().unwrap().dim(), 1);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "batch = 0",
            "[solver]\nfamily = \"euler\"",
            "[dualfast]\nc_schedule = \"cubic\"",
            "[dualfast]\ntau = \"0.5\"\nanchor = \"initial-noise\"",
            "unknown_key = 1",
            "[[mixture.components]]\nweight = 0.5\nmean = [0.0]\ncov = [[1.0]]",
        ] {
            let e = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }

    #[test]
    fn schedule_strings() {
        assert_eq!(parse_c_schedule("linear:0.4:0.1").unwrap(), MixSchedule::Linear { start: 0.4, end: 0.1 });
        assert_eq!(parse_c_schedule("derived").unwrap(), MixSchedule::Derived);
        assert!(parse_c_schedule("constant:x").is_err());
        assert_eq!(parse_tau("T").unwrap(), Tau::Time(1.0));
        assert_eq!(parse_tau("current").unwrap(), Tau::Current);
        assert!(parse_tau("later").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
