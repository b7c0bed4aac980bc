//! Experiment harness for the crossbar estimator: scenario configuration,
//! sweep and pipeline runners, CSV/JSON/PGM output.

pub mod config;
pub mod error;
pub mod heatmap;
pub mod scenarios;

pub use config::{ExperimentConfig, Scenario, StreamScript, Touch};
pub use error::HarnessError;
pub use scenarios::{run, RunOutput};

/// Exit status when any point or frame failed to converge.
pub const EXIT_UNCONVERGED: i32 = 2;
