//! Neural building blocks: LSTM cell, projection-biLSTM, pyramidal
//! encoder, location-aware attention, and the decoder step.
//!
//! Parameter structs own plain tensors; `bind` copies them onto a
//! graph as leaves for one forward/backward pass. All initialization
//! is uniform(-0.1, 0.1) from a caller-provided RNG, except forget
//! gate biases which start at 1.0.

mod attention;
mod bilstm;
mod decoder;
mod lstm;
mod pyramid;

pub use attention::{location_attention_step, uniform_alignment, AttentionParams, BoundAttention};
pub use bilstm::{projection_bilstm_layer, BiLstmParams, BoundBiLstm};
pub use decoder::{decoder_step, BoundDecoder, DecoderParams};
pub use lstm::{lstm_cell_step, BoundLstmCell, LstmCellParams};
pub use pyramid::{enc_output_len, pyramidal_encode, BoundPyramid, PyramidParams};

use crate::tensor::{Real, Tensor};
use rand::Rng;

pub(crate) const INIT_RANGE: f64 = 0.1;

pub(crate) fn uniform_tensor<T: Real, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::from_f64c(rng.gen_range(-INIT_RANGE..INIT_RANGE)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// Named views over a parameter struct's tensors, in a fixed order.
pub type Fields<'a, T> = Vec<(&'static str, &'a Tensor<T>)>;
pub type FieldsMut<'a, T> = Vec<(&'static str, &'a mut Tensor<T>)>;
