//! Data plumbing and the experiment runner behind the `plg` binary.

pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod traces;

pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport, Verdicts};
pub use model::Model;
