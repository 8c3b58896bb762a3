//! Experiment harness for the `dualfast-core` solvers: configuration,
//! pseudo-GT caching, paired comparisons, ablations, convergence studies,
//! error disentanglement, and CSV/SVG output.

pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod oracle;
pub mod output;
pub mod run;

pub use cache::{Reference, ReferenceCache};
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use run::{MetricRecord, MetricReport};
