//! Shared forward wiring: binding the full parameter set onto a
//! graph, the two encoder routes, and one attention-plus-decoder step.

use super::{Model, ModelError};
use crate::layers::{
    decoder_step, location_attention_step, projection_bilstm_layer, pyramidal_encode,
    BoundAttention, BoundBiLstm, BoundDecoder, BoundPyramid,
};
use crate::tensor::{Graph, NodeId, Real};

/// Node IDs of every parameter bound onto one graph, in
/// [`Model::visit`] order per component.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: BoundPyramid,
    pub attention: BoundAttention,
    pub decoder: BoundDecoder,
    pub aug_embed: NodeId,
    pub aug_bilstm: BoundBiLstm,
}

impl BoundModel {
    /// All bound parameter ids in [`Model::visit`] order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        for layer in &self.encoder.layers {
            ids.extend(cell_ids(layer));
        }
        ids.extend_from_slice(&[
            self.attention.conv_kernel,
            self.attention.w_dec,
            self.attention.w_enc,
            self.attention.w_conv,
            self.attention.bias,
            self.attention.w_score,
        ]);
        ids.push(self.decoder.embed);
        ids.extend_from_slice(&[
            self.decoder.cell.w_in,
            self.decoder.cell.b_in,
            self.decoder.cell.w_forget,
            self.decoder.cell.b_forget,
            self.decoder.cell.w_out,
            self.decoder.cell.b_out,
            self.decoder.cell.w_cell,
            self.decoder.cell.b_cell,
        ]);
        ids.push(self.decoder.w_out);
        ids.push(self.decoder.b_out);
        ids.push(self.aug_embed);
        ids.extend(cell_ids(&self.aug_bilstm));
        ids
    }
}

fn cell_ids(b: &BoundBiLstm) -> Vec<NodeId> {
    let mut ids = Vec::new();
    for cell in [&b.forward, &b.backward] {
        ids.extend_from_slice(&[
            cell.w_in,
            cell.b_in,
            cell.w_forget,
            cell.b_forget,
            cell.w_out,
            cell.b_out,
            cell.w_cell,
            cell.b_cell,
        ]);
    }
    ids.push(b.w_proj);
    ids.push(b.b_proj);
    ids
}

impl<T: Real> Model<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundModel {
        let encoder = self.encoder.bind(g, trainable);
        let attention = self.attention.bind(g, trainable);
        let decoder = self.decoder.bind(g, trainable);
        let aug_embed = if trainable {
            g.leaf(self.aug_encoder.embed.clone())
        } else {
            g.constant(self.aug_encoder.embed.clone())
        };
        let aug_bilstm = self.aug_encoder.bilstm.bind(g, trainable);
        BoundModel {
            encoder,
            attention,
            decoder,
            aug_embed,
            aug_bilstm,
        }
    }
}

/// Acoustic route: features through the pyramidal encoder.
pub fn encode_speech<T: Real>(
    g: &mut Graph<T>,
    b: &BoundModel,
    feats: NodeId,
) -> Result<NodeId, ModelError> {
    Ok(pyramidal_encode(g, &b.encoder, feats)?)
}

/// Augmenting route: phoneme embeddings through the single-layer
/// augmenting biLSTM. Output dimension is the attention key size
/// (MMDA) or the feature dimension (PSDA pseudo-speech).
pub fn encode_augmenting<T: Real>(
    g: &mut Graph<T>,
    b: &BoundModel,
    input: &[u32],
) -> Result<NodeId, ModelError> {
    if input.is_empty() {
        return Err(ModelError::EmptyAugInput);
    }
    let emb = g.embed(b.aug_embed, input)?;
    Ok(projection_bilstm_layer(g, &b.aug_bilstm, emb)?)
}

/// One attention-then-decoder step over a fixed encoder output.
/// Returns log-probabilities over the vocabulary and the next
/// recurrent and alignment state.
pub struct StepState {
    pub h: NodeId,
    pub c: NodeId,
    pub alignment: NodeId,
}

pub fn decoder_advance<T: Real>(
    g: &mut Graph<T>,
    b: &BoundModel,
    enc_out: NodeId,
    y_prev: u32,
    state: &StepState,
) -> Result<(NodeId, StepState), ModelError> {
    let (context, alignment) =
        location_attention_step(g, &b.attention, state.h, enc_out, state.alignment)?;
    let (logits, h, c) = decoder_step(g, &b.decoder, y_prev, context, state.h, state.c)?;
    let logp = g.log_softmax(logits)?;
    Ok((logp, StepState { h, c, alignment }))
}

pub fn initial_step_state<T: Real>(g: &mut Graph<T>, dec_hidden: usize, t_enc: usize) -> StepState {
    let h = g.constant(crate::tensor::Tensor::zeros(&[dec_hidden]));
    let c = g.constant(crate::tensor::Tensor::zeros(&[dec_hidden]));
    let alignment = crate::layers::uniform_alignment(g, t_enc);
    StepState { h, c, alignment }
}
