//! Builds text-based augmenting examples: corpus filtering,
//! phonemization against a pronunciation lexicon, a shared Gaussian
//! frames-per-symbol duration model, and duration expansion.

mod duration;
mod lexicon;
mod pipeline;
mod vocab;

pub use duration::{estimate_duration_model, sample_durations, DurationModel};
pub use lexicon::{Lexicon, PhonemeInventory, Phonemizer, WORD_BOUNDARY};
pub use pipeline::{
    build_augmenting_example, filter_corpus, read_augmenting_corpus, write_augmenting_corpus,
    AugMeta, AugRecord, AugmentingExample,
};
pub use vocab::{merge_vocabularies, Vocab, EOS_ID, PAD_ID, SOS_ID, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("empty manifest: duration model needs at least one utterance")]
    EmptyManifest,
    #[error("utterance {id}: frames and symbol counts must be positive (got {frames}, {symbols})")]
    BadUtterance {
        id: String,
        frames: usize,
        symbols: usize,
    },
    #[error("lexicon line {line}: {reason}")]
    BadLexiconLine { line: usize, reason: String },
    #[error("augmenting corpus line {line}: {source}")]
    BadCorpusLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("augmenting corpus meta: {0}")]
    BadMeta(serde_json::Error),
}
