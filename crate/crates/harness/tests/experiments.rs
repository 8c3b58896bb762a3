use dualfast_core::{attach, DualFastConfig, Family, MixSchedule, SolverConfig};
use dualfast_harness::config::{OracleKind, OracleSpec};
use dualfast_harness::run::{self, Axis};
use dualfast_harness::{ExperimentConfig, HarnessError, ReferenceCache};

fn setup(batch: usize, exact: bool) -> (tempfile::TempDir, ExperimentConfig) {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig { out: tmp.path().to_path_buf(), batch, ..ExperimentConfig::default() };
    if exact {
        cfg.oracle = OracleSpec { kind: OracleKind::Exact, ..Default::default() };
    }
    (tmp, cfg)
}

#[test]
fn reference_solver_compared_with_itself_is_zero() {
    let (_tmp, cfg) = setup(64, false);
    let r = ReferenceCache::for_config(&cfg).get_or_build(&cfg).unwrap();
    let reports = run::compare(&cfg, &[SolverConfig::ddim()], &[1000], &r).unwrap();
    assert_eq!(reports[0].records[0].mse_to_reference, 0.0);
    assert_eq!(reports[0].records[0].nfe, 64_000);
}

#[test]
fn ddim_error_shrinks_with_steps_on_exact_oracle() {
    let (_tmp, cfg) = setup(256, true);
    let r = ReferenceCache::for_config(&cfg).get_or_build(&cfg).unwrap();
    let rep = &run::compare(&cfg, &[SolverConfig::ddim()], &[5, 10, 20, 40], &r).unwrap()[0];
    let mse: Vec<f64> = rep.records.iter().map(|m| m.mse_to_reference).collect();
    assert!(mse.windows(2).all(|w| w[1] < w[0]), "{mse:?}");
    assert!(rep.records.iter().all(|m| m.mean_error >= 0.0 && m.cov_frobenius_error >= 0.0));
}

#[test]
fn mismatched_reference_is_a_config_error() {
    let (_tmp, cfg) = setup(32, false);
    let r = ReferenceCache::for_config(&cfg).get_or_build(&cfg).unwrap();
    let mut other = cfg.clone();
    other.seed = 5;
    let e = run::compare(&other, &[SolverConfig::ddim()], &[5], &r).unwrap_err();
    assert!(matches!(e, HarnessError::Config(_)), "{e}");
    other.seed = cfg.seed;
    other.batch = 16;
    assert_eq!(run::compare(&other, &[SolverConfig::ddim()], &[5], &r).unwrap_err().exit_code(), 2);
    assert!(run::compare(&cfg, &[SolverConfig::ddim()], &[], &r).is_err());
}

#[test]
fn neutral_ablation_points_reproduce_the_base() {
    let (_tmp, cfg) = setup(64, false);
    let r = ReferenceCache::for_config(&cfg).get_or_build(&cfg).unwrap();
    let ns = [5, 8];
    let base = run::compare(&cfg, &[SolverConfig::ddim()], &ns, &r).unwrap().remove(0);
    for (axis, value) in [(Axis::Tau, "current"), (Axis::CSchedule, "constant:0")] {
        let got = run::ablate(&cfg, axis, &[value.to_string()], &ns, &r).unwrap();
        assert_eq!(got[0].1.records, base.records, "{} = {value}", axis.name());
    }
    assert!(Axis::parse("gamma").is_err());
    assert!(run::ablate(&cfg, Axis::CoefficientMode, &["cubic".into()], &ns, &r).is_err());
}

#[test]
fn ablation_builds_one_method_per_value() {
    let (_tmp, cfg) = setup(8, false);
    let m = run::ablation_method(&cfg, Axis::Tau, "0.5").unwrap();
    let d = m.dualfast.unwrap();
    assert_eq!(d.anchor_source, dualfast_core::AnchorSource::Oracle);
    let m = run::ablation_method(&cfg, Axis::CoefficientMode, "derived").unwrap();
    assert_eq!(m.dualfast.unwrap().mix, MixSchedule::Derived);
    assert_eq!(Axis::CSchedule.default_values().len(), 4);
}

#[test]
fn convergence_needs_three_step_counts() {
    let (_tmp, cfg) = setup(8, true);
    let e = run::convergence_study(&cfg, &[SolverConfig::ddim()], &[10, 20]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn convergence_reports_one_fit_per_method() {
    let (_tmp, mut cfg) = setup(8, true);
    cfg.convergence.batch = 8;
    cfg.convergence.reference_steps = 2000;
    let methods = [SolverConfig::ddim(), attach(SolverConfig::for_family(Family::UniPc), DualFastConfig::default()).unwrap()];
    let res = run::convergence_study(&cfg, &methods, &[10, 20, 40]).unwrap();
    assert_eq!(res.len(), 2);
    assert_eq!(res[1].method, "unipc3c+dualfast");
    assert!(res.iter().all(|r| r.errors.len() == 3 && r.fit.slope.is_finite()));
}

#[test]
fn disentangle_curve_has_one_row_per_period() {
    let (_tmp, mut cfg) = setup(8, false);
    cfg.disentangle.batch = 16;
    cfg.disentangle.fine_nfe = 20;
    cfg.disentangle.reference_nfe = 100;
    let curve = run::disentangle(&cfg).unwrap();
    assert_eq!(curve.records.len(), 9);
    let csv = dualfast_harness::output::disentangle_csv(&curve);
    assert_eq!(csv.lines().count(), 10);
    assert_eq!(csv.lines().next().unwrap(), "period_index,s,t,approx_mse,disc_mse");
    let ratio = curve.records.iter().map(|r| r.approx_mse).fold(0.0, f64::max)
        / curve.records.iter().map(|r| r.disc_mse).fold(0.0, f64::max);
    assert!(ratio.is_finite() && ratio > 0.0);
}
