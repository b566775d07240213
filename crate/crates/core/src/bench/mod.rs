//! Experiment harness: metrics, the multi-round trial loop, aggregation,
//! report files and the config format.

mod chart;
pub mod config;
pub mod experiment;
pub mod report;

pub use config::{EvalMode, ExperimentConfig, PoolSource};
pub use experiment::{
    balanced_accuracy, evaluate, read_logs, run_all, run_trial, run_trial_on, TrialLog, TrialRow,
};
pub use report::{aggregate, aggregate_all, budget_to_reach, emit_report, ReportRow, ReportTable};
