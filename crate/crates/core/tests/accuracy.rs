use dualfast_core::metrics::{fit_order, mean_distance};
use dualfast_core::reference::exact_flow;
use dualfast_core::solver::sample_endpoint;
use dualfast_core::{rng, ExactOracle, Family, GaussianMixture, GridScheme, NoiseSchedule, SolverConfig};

fn errors(config: &SolverConfig, ns: &[usize]) -> Vec<f64> {
    let s = NoiseSchedule::default();
    let m = GaussianMixture::reference();
    let o = ExactOracle::new(m.clone(), s);
    let xs = rng::initial_noise_batch(3, 16, 2);
    let truth: Vec<Vec<f64>> = xs.iter().map(|x| exact_flow(&s, &m, x, 1.0, s.t_min(), 4000).unwrap()).collect();
    ns.iter()
        .map(|&n| {
            let g = s.make_grid(n, GridScheme::UniformLogSnr).unwrap();
            let ends: Vec<Vec<f64>> = xs.iter().map(|x| sample_endpoint(&s, &o, config, &g, x.clone()).unwrap().0).collect();
            mean_distance(&ends, &truth).unwrap()
        })
        .collect()
}

#[test]
fn every_family_approaches_the_exact_flow() {
    let ns = [10, 20, 40];
    for f in Family::ALL {
        let cfg = SolverConfig::for_family(f);
        let e = errors(&cfg, &ns);
        assert!(e.windows(2).all(|w| w[1] < w[0]), "{}: {e:?}", cfg.label());
        // at least first order: quartering h cuts the error by 3x or more
        assert!(e[2] < e[0] / 3.0, "{}: {e:?}", cfg.label());
    }
}

#[test]
fn higher_order_beats_first_order() {
    let ns = [10, 20, 40];
    let ddim = fit_order(&ns, &errors(&SolverConfig::ddim(), &ns)).unwrap();
    let unipc = fit_order(&ns, &errors(&SolverConfig::unipc(3, true), &ns)).unwrap();
    assert!(unipc.slope > ddim.slope + 1.0, "{} vs {}", unipc.slope, ddim.slope);
}

#[test]
fn unit_gaussian_flow_is_nearly_identity() {
    // for N(0, I) data the exact flow maps x_T to x_T itself
    let s = NoiseSchedule::default();
    let o = ExactOracle::new(GaussianMixture::standard(3), s);
    let x = vec![0.3, -1.1, 2.0];
    let g = s.make_grid(400, GridScheme::UniformLogSnr).unwrap();
    let y = sample_endpoint(&s, &o, &SolverConfig::unipc(3, true), &g, x.clone()).unwrap().0;
    for (a, b) in y.iter().zip(&x) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }
}
