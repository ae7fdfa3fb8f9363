//! The three training objectives. Each returns mean per-token
//! negative log-likelihood under teacher forcing; which parameter
//! groups receive gradient follows from the wiring alone.

use super::forward::{
    decoder_advance, encode_augmenting, encode_speech, initial_step_state, BoundModel,
};
use super::{Model, ModelError, ModelKind};
use crate::augment::{EOS_ID, SOS_ID};
use crate::tensor::{Graph, NodeId, Real, Tensor};

fn check_target(y: &[u32]) -> Result<(), ModelError> {
    if y.len() < 2 || y[0] != SOS_ID || *y.last().unwrap() != EOS_ID {
        return Err(ModelError::BadTarget);
    }
    Ok(())
}

/// Teacher-forced cross entropy given a fixed encoder output,
/// averaged over the predicted positions (everything after `<sos>`,
/// `<eos>` included).
fn attention_decoder_loss<T: Real>(
    g: &mut Graph<T>,
    b: &BoundModel,
    enc_out: NodeId,
    dec_hidden: usize,
    y: &[u32],
) -> Result<NodeId, ModelError> {
    let t_enc = g.value(enc_out).rows();
    let mut state = initial_step_state(g, dec_hidden, t_enc);
    let mut picks = Vec::with_capacity(y.len() - 1);
    for t in 1..y.len() {
        let (logp, next) = decoder_advance(g, b, enc_out, y[t - 1], &state)?;
        picks.push(g.pick(logp, y[t] as usize)?);
        state = next;
    }
    let stacked = g.stack_rows(&picks)?;
    let total = g.sum_all(stacked);
    Ok(g.scale(total, -T::one() / T::from_f64c(picks.len() as f64)))
}

/// Speech objective: gradients reach the acoustic encoder, attention,
/// and decoder; the augmenting encoder stays off the graph.
pub fn asr_log_likelihood<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    b: &BoundModel,
    feats: &Tensor<T>,
    y: &[u32],
) -> Result<NodeId, ModelError> {
    check_target(y)?;
    let x = g.constant(feats.clone());
    let enc = encode_speech(g, b, x)?;
    attention_decoder_loss(g, b, enc, model.cfg.dec_hidden, y)
}

/// Text objective, augmenting-encoder route: its projection feeds the
/// attention directly, so the acoustic encoder receives exactly zero
/// gradient.
pub fn mmda_log_likelihood<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    b: &BoundModel,
    input: &[u32],
    y: &[u32],
) -> Result<NodeId, ModelError> {
    if model.cfg.kind != ModelKind::Mmda {
        return Err(ModelError::WrongKind {
            expected: ModelKind::Mmda,
            found: model.cfg.kind,
        });
    }
    check_target(y)?;
    let enc = encode_augmenting(g, b, input)?;
    attention_decoder_loss(g, b, enc, model.cfg.dec_hidden, y)
}

/// Text objective, cascade route: the augmenting encoder emits
/// pseudo-speech of the acoustic feature dimension, which then runs
/// through the full acoustic encoder, so every group is on the graph.
pub fn psda_log_likelihood<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    b: &BoundModel,
    input: &[u32],
    y: &[u32],
) -> Result<NodeId, ModelError> {
    if model.cfg.kind != ModelKind::Psda {
        return Err(ModelError::WrongKind {
            expected: ModelKind::Psda,
            found: model.cfg.kind,
        });
    }
    check_target(y)?;
    let pseudo = encode_augmenting(g, b, input)?;
    debug_assert_eq!(g.value(pseudo).cols(), model.cfg.feat_dim);
    let enc = encode_speech(g, b, pseudo)?;
    attention_decoder_loss(g, b, enc, model.cfg.dec_hidden, y)
}
