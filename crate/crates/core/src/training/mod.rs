//! Alternating expectation/maximization training, Adam with step decay,
//! evaluation, multi-seed runs, and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod em;
mod metrics;

pub use adam::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::TrainingConfig;
pub use em::{
    ablate_gamma, ablation_csv, em_train, em_train_from, evaluate, expectation_phase, maximization_phase, mean_precor_error, mean_std,
    predict_graph, run_seed, AblationRow, MaximizationOutcome, OptimizerState, TrainedModel,
};
pub use metrics::{EpochRecord, Phase, RunMetrics, METRICS_HEADER};
