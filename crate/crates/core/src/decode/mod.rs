//! Beam-search decoding with shallow language-model fusion, plus the
//! character/word error-rate metrics.

mod beam;
mod metrics;

pub use beam::{
    beam_search_fusion, fuse_score, greedy_decode, DecodeConfig, DecodeOutput, LengthRule,
};
pub use metrics::{corpus_cer_wer, edit_distance, EditStats, MetricsError};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("beam size must be at least 1")]
    BadBeamSize,
    #[error("fusion weight must be nonnegative, got {0}")]
    BadLambda(f64),
    #[error("language model vocabulary differs from the recognizer's (hash {lm:#x} vs {asr:#x})")]
    VocabMismatch { lm: u64, asr: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}
