//! Single-layer LSTM decoder: embeds the previous token, concatenates
//! the attention context, steps the cell, and projects to vocabulary
//! logits.

use super::lstm::{lstm_cell_step, BoundLstmCell, LstmCellParams};
use super::{uniform_tensor, FieldsMut};
use crate::tensor::{Graph, NodeId, Real, Result, Tensor};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct DecoderParams<T> {
    pub embed: Tensor<T>,
    pub cell: LstmCellParams<T>,
    pub w_out: Tensor<T>,
    pub b_out: Tensor<T>,
}

impl<T: Real> DecoderParams<T> {
    pub fn init<R: Rng>(
        vocab_size: usize,
        embed_dim: usize,
        context_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        DecoderParams {
            embed: uniform_tensor(&[vocab_size, embed_dim], rng),
            cell: LstmCellParams::init(embed_dim + context_dim, hidden_dim, rng),
            w_out: uniform_tensor(&[hidden_dim, vocab_size], rng),
            b_out: uniform_tensor(&[vocab_size], rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn fields(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![("embed".into(), &self.embed)];
        for (n, t) in self.cell.fields() {
            out.push((format!("cell.{n}"), t));
        }
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn fields_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![("embed".into(), &mut self.embed)];
        for (n, t) in self.cell.fields_mut() {
            out.push((format!("cell.{n}"), t));
        }
        out.push(("w_out".into(), &mut self.w_out));
        out.push(("b_out".into(), &mut self.b_out));
        out
    }

    pub fn local_fields_mut(&mut self) -> FieldsMut<'_, T> {
        let mut out: FieldsMut<'_, T> = vec![("embed", &mut self.embed)];
        out.extend(self.cell.fields_mut());
        out.push(("w_out", &mut self.w_out));
        out.push(("b_out", &mut self.b_out));
        out
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundDecoder {
        let cell = self.cell.bind(g, trainable);
        let mut put = |t: &Tensor<T>| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundDecoder {
            embed: put(&self.embed),
            cell,
            w_out: put(&self.w_out),
            b_out: put(&self.b_out),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDecoder {
    pub embed: NodeId,
    pub cell: BoundLstmCell,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

/// One teacher-forced or search step. `y_prev` must be in vocabulary.
pub fn decoder_step<T: Real>(
    g: &mut Graph<T>,
    p: &BoundDecoder,
    y_prev: u32,
    context: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId, NodeId)> {
    let emb_rows = g.embed(p.embed, &[y_prev])?;
    let emb = g.row(emb_rows, 0)?;
    let x = g.concat(emb, context)?;
    let (h2, c2) = lstm_cell_step(g, &p.cell, x, h, c)?;
    let lin = g.vecmat(h2, p.w_out)?;
    let logits = g.add(lin, p.b_out)?;
    Ok((logits, h2, c2))
}
