//! Training, inference, evaluation, checkpointing and the ablation harness.

mod ablate;
mod checkpoint;
mod config;
mod infer;
mod train;

pub use ablate::{ablate, expand, lambda_grid, rows_to_csv, AblationAxis, AblationRow};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{Branches, MetricMode, TrainConfig, CONFIG_KEYS};
pub use infer::{
    classify, classify_batch_with, evaluate, harmonic_mean, nearest_classes,
    prototype_projections, EvalReport, Prototypes,
};
pub use train::{train, train_traced};
