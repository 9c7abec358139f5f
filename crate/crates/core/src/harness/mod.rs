//! Benchmark streams, metrics, experiment orchestration and reports.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod stream;

pub use experiment::{run_experiment, Mode, ResultRecord, RunOutcome};
pub use metrics::{AccuracyMatrix, Metrics};
pub use report::{report, Report};
