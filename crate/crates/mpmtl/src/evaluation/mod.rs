//! Metrics, the experiment runner, and CSV reporting.

pub mod metrics;
pub mod report;
pub mod runner;

pub use metrics::{average_auc, nmse, nmse_with, noise_to_signal, NmsePooling};
pub use report::{ExperimentReport, MetricRow, SummaryRow};
pub use runner::{derive_method_schedule, run_experiment, schedule_echoes};
