//! Datasets, the two training stages, checkpoints, evaluation and ablation.

pub mod ablation;
pub mod checkpoint;
mod config;
pub mod data;
pub mod eval;
pub mod synthetic;
pub mod table;
pub mod train;

pub use ablation::{run_ablation, AblationReport, AblationRow};
pub use checkpoint::{Checkpoint, ModelConfig, ModelKind};
pub use config::TrainConfig;
pub use data::{
    ingest_dataset, load_samples, DatasetManifest, ManifestEntry, Sample, Split, SplitSpec,
};
pub use eval::{evaluate, evaluate_identity, EvalReport, EvalRow, Pipeline, Variant};
pub use train::{train_cenet, train_prnet, LossRecord, RunOptions, Trained};
