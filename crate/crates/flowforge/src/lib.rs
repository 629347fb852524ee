//! Experiment runner for flowforge: configuration, the three experiment
//! families, and report/chart output.

pub mod chart;
pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, ExperimentId, FineTuneSettings};
pub use experiment::{run_experiment, ArmReport, ExperimentReport, LeakAudit, SetDescriptor};
pub use report::{emit_report, load_report};
