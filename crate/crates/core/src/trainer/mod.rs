//! Desk-scale training harness: generated tasks, run configuration, the
//! training loop with CSV metrics and checkpoints, and activation-precision
//! ablations.

mod config;
mod tasks;
mod train;

pub use config::{ActOverrides, RunConfig};
pub use tasks::{adding_sequence, char_vocab, generate_task, Dataset, MetricKind, TaskInput, TaskKind, TaskSpec};
pub use train::{
    evaluate, evaluate_model, model_config, precision_ablation, relative_shortfall, train, AblationResult, AblationRow,
    MetricRecord, TrainOutcome, ABLATION_HEADER, CHECKPOINT_FILE, METRICS_FILE, METRICS_HEADER,
};
