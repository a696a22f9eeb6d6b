//! The patient-sequence model: configuration, forward pass, ELBO training,
//! ensembles, sampling-based prediction and checkpoints.

pub mod checkpoint;
mod config;
mod encode;
mod ensemble;
mod model;
mod predict;
mod train;

use thiserror::Error;

use crate::numcore::TensorError;
use crate::uq::UqError;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{ModelConfig, Profile, Task};
pub use encode::{age_bucket, encode, Encoded, NUM_AGE_BUCKETS};
pub use ensemble::{train_ensemble, EnsembleSpec};
pub use model::Model;
pub use predict::{predict_samples, predict_samples_with, Ensemble, SamplingMode};
pub use train::{loss_elbo, train, validation_nll, EpochRecord, History, TrainOptions, TrainState};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("feature id {feature_id} outside vocabulary of size {vocab_size}")]
    VocabMismatch { feature_id: usize, vocab_size: usize },
    #[error("no examples")]
    EmptyData,
    #[error("sample count must be at least 1")]
    InvalidSampleCount,
    #[error("non-finite loss or gradient at epoch {epoch}, step {step}; try a lower learning rate")]
    NonFinite { epoch: usize, step: u64 },
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Metric(#[from] UqError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
