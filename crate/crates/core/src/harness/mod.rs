//! Experiment plumbing: configuration, the training loop, metrics, checkpoints, and
//! seed-paired comparisons.

mod checkpoint;
mod compare;
mod config;
mod metrics;
mod run;
mod trainer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use compare::{run_comparison, summarize_run, ComparisonSummary, RunSummary, Spread, VariantSummary};
pub use config::{ExperimentConfig, DESK_UPDATE_INTERVAL};
pub use metrics::{export_plot_data, read_metrics, MetricsRecord, MetricsWriter};
pub use run::{
    resume_experiment, run_experiment, RunOutcome, CHECKPOINT_DIR, CONFIG_ECHO_FILE, FAILURE_FILE,
    METRICS_FILE, TIMING_FILE,
};
pub use trainer::Trainer;
