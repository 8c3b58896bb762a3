//! Exponential-integrator samplers for diffusion probability-flow ODEs, with
//! an approximation-error correction and analytic Gaussian-mixture oracles.
//!
//! The crate is `no_std` (it needs `alloc`). IO, configuration files and the
//! experiment CLI live in the `dualfast-harness` crate.

#![no_std]

extern crate alloc;

pub mod disentangle;
pub mod dualfast;
pub mod error;
pub mod metrics;
pub mod mixture;
pub mod oracle;
pub mod reference;
pub mod rng;
pub mod schedule;
pub mod solver;

pub use dualfast::{attach, AnchorSource, DualFastConfig, MixSchedule, Tau};
pub use error::{Error, Result};
pub use mixture::{Component, GaussianMixture};
pub use oracle::{Counting, ExactOracle, NoiseOracle, PerturbedOracle, PredictionPair};
pub use schedule::{GridScheme, NoiseSchedule, TimeGrid};
pub use solver::{Family, PredictionMode, Sampler, SolverConfig, StepState, TrajectoryRecord};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
