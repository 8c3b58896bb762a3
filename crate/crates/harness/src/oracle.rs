use dualfast_core::{ExactOracle, NoiseOracle, PerturbedOracle};

/// Either oracle kind the config can select.
#[derive(Debug, Clone)]
pub enum AnyOracle {
    Exact(ExactOracle),
    Perturbed(PerturbedOracle),
}

impl NoiseOracle for AnyOracle {
    fn dim(&self) -> usize {
        match self {
            AnyOracle::Exact(o) => o.dim(),
            AnyOracle::Perturbed(o) => o.dim(),
        }
    }

    fn predict_noise(&self, x: &[f64], t: f64, out: &mut [f64]) -> dualfast_core::Result<()> {
        match self {
            AnyOracle::Exact(o) => o.predict_noise(x, t, out),
            AnyOracle::Perturbed(o) => o.predict_noise(x, t, out),
        }
    }
}
