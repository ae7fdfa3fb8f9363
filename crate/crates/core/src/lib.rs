//! Sequence-to-sequence speech recognition toolkit with text-based
//! data augmentation.
//!
//! The crate provides an attention-based encoder-decoder recognizer
//! together with two ways of training it on text alone: routing a
//! phoneme-derived input through a dedicated augmenting encoder
//! straight into the attention module (MMDA), or cascading that
//! encoder's output through the acoustic encoder as pseudo-speech
//! (PSDA). Training mixes speech and text batches under a sampled
//! ratio, optionally after a text-only pretraining phase, and decoding
//! supports beam search with shallow language-model fusion.

pub mod augment;
pub mod decode;
pub mod io;
pub mod layers;
pub mod model;
pub mod par;
pub mod tensor;
pub mod train;
