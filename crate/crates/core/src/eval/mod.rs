//! ROC/AUC evaluation, the classifier-loss threshold sweep, and the
//! reproduction experiments.

mod experiment;
mod roc;
mod sweep;

pub use experiment::{
    run_synthetic_experiment, run_trigger_experiment, ExperimentConfig, ExperimentReport,
    LowFallout, ModelKind, Problem, RunRecord, SummaryRecord, SyntheticParams,
    REPORT_SCHEMA_VERSION,
};
pub use roc::{read_roc_points, roc_auc, trapezoid_area, write_roc_points, RocResult};
pub use sweep::{
    read_classifier_losses, sweep_grid, sweep_grid_with, threshold_sweep, threshold_sweep_with, LossRow,
    SweepResult, DEFAULT_DIVISIONS,
};
