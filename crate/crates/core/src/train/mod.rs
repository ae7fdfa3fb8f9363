//! Training: the pretraining phase, ratio-scheduled multi-task
//! updates, the optimizer, corpus mixing, dev evaluation, and
//! resumable checkpoints.

mod config;
mod data;
mod lm;
mod optim;
mod schedule;
mod trainer;

pub mod checkpoint;

pub use config::{parse_config_str, ConfigError, TrainConfig};
pub use data::{
    corpus_hours, evaluate_aug_loss, evaluate_dev, evaluate_dev_with, load_aug_corpus,
    load_utterances, mix_corpora, AugData, AugExample, MixedCorpus, TrainData, Utterance,
};
pub use lm::train_rnnlm;
pub use optim::Adam;
pub use schedule::{draw_task, Task};
pub use trainer::{StepRecord, Trainer};

use crate::augment::AugmentError;
use crate::decode::{DecodeError, MetricsError};
use crate::io::IoError;
use crate::model::checkpoint::CheckpointError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("non-finite loss at step {step} on batch {batch_id}")]
    NonFiniteLoss { step: u64, batch_id: String },
    #[error("training needs a nonempty speech corpus")]
    EmptySpeech,
    #[error("pretraining ({0} batches) requires an augmenting corpus")]
    PretrainNeedsAug(usize),
    #[error("corpus {lang}: feature dimension {found} differs from {expected}")]
    FeatureDimMismatch {
        lang: String,
        expected: usize,
        found: usize,
    },
    #[error("checkpoint does not match this run: {0}")]
    ResumeMismatch(String),
}
