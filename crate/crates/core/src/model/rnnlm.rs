//! Character-level recurrent language model used for shallow fusion.
//! Its vocabulary must carry the same IDs as the recognizer's output
//! vocabulary; checkpoints store the vocabulary hash so decoding can
//! verify the pairing.

use super::ModelError;
use crate::augment::{Vocab, EOS_ID, SOS_ID};
use crate::layers::{lstm_cell_step, uniform_tensor, BoundLstmCell, LstmCellParams};
use crate::tensor::{Graph, NodeId, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            embed_dim: 64,
            hidden_dim: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RnnLm<T> {
    pub cfg: LmConfig,
    pub vocab: Vocab,
    pub embed: Tensor<T>,
    pub cell: LstmCellParams<T>,
    pub w_out: Tensor<T>,
    pub b_out: Tensor<T>,
}

impl<T: Real> RnnLm<T> {
    pub fn new(cfg: LmConfig, vocab: Vocab, seed: u64) -> RnnLm<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.size();
        RnnLm {
            embed: uniform_tensor(&[v, cfg.embed_dim], &mut rng),
            cell: LstmCellParams::init(cfg.embed_dim, cfg.hidden_dim, &mut rng),
            w_out: uniform_tensor(&[cfg.hidden_dim, v], &mut rng),
            b_out: uniform_tensor(&[v], &mut rng),
            cfg,
            vocab,
        }
    }

    pub fn visit(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![("lm.embed".into(), &self.embed)];
        for (n, t) in self.cell.fields() {
            out.push((format!("lm.cell.{n}"), t));
        }
        out.push(("lm.w_out".into(), &self.w_out));
        out.push(("lm.b_out".into(), &self.b_out));
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![("lm.embed".into(), &mut self.embed)];
        for (n, t) in self.cell.fields_mut() {
            out.push((format!("lm.cell.{n}"), t));
        }
        out.push(("lm.w_out".into(), &mut self.w_out));
        out.push(("lm.b_out".into(), &mut self.b_out));
        out
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundRnnLm {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let embed = put(&self.embed);
        let cell = self.cell.bind(g, trainable);
        let w_out = if trainable {
            g.leaf(self.w_out.clone())
        } else {
            g.constant(self.w_out.clone())
        };
        let b_out = if trainable {
            g.leaf(self.b_out.clone())
        } else {
            g.constant(self.b_out.clone())
        };
        BoundRnnLm {
            hidden_dim: self.cfg.hidden_dim,
            embed,
            cell,
            w_out,
            b_out,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundRnnLm {
    pub hidden_dim: usize,
    pub embed: NodeId,
    pub cell: BoundLstmCell,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

pub struct LmState {
    pub h: NodeId,
    pub c: NodeId,
}

pub fn lm_initial_state<T: Real>(g: &mut Graph<T>, b: &BoundRnnLm) -> LmState {
    LmState {
        h: g.constant(Tensor::zeros(&[b.hidden_dim])),
        c: g.constant(Tensor::zeros(&[b.hidden_dim])),
    }
}

/// Consumes one token and returns log-probabilities for the next.
pub fn lm_step<T: Real>(
    g: &mut Graph<T>,
    b: &BoundRnnLm,
    state: &LmState,
    token: u32,
) -> Result<(NodeId, LmState), ModelError> {
    let emb_rows = g.embed(b.embed, &[token])?;
    let emb = g.row(emb_rows, 0)?;
    let (h, c) = lstm_cell_step(g, &b.cell, emb, state.h, state.c)?;
    let lin = g.vecmat(h, b.w_out)?;
    let logits = g.add(lin, b.b_out)?;
    let logp = g.log_softmax(logits)?;
    Ok((logp, LmState { h, c }))
}

/// log P(next | prefix) with the prefix fed from `<sos>`.
pub fn rnnlm_logprob<T: Real>(lm: &RnnLm<T>, prefix: &[u32], next: u32) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let b = lm.bind(&mut g, false);
    let mut state = lm_initial_state(&mut g, &b);
    let mut last_logp = None;
    let mut feed = vec![SOS_ID];
    feed.extend_from_slice(prefix);
    for &tok in &feed {
        let (logp, st) = lm_step(&mut g, &b, &state, tok)?;
        state = st;
        last_logp = Some(logp);
    }
    let logp = last_logp.expect("at least the <sos> step ran");
    let v = g.value(logp);
    let next = next as usize;
    if next >= v.len() {
        return Err(ModelError::Tensor(
            crate::tensor::TensorError::OutOfVocab {
                id: next,
                vocab: v.len(),
            },
        ));
    }
    Ok(v.data()[next].to_f64c())
}

/// Mean per-token negative log-likelihood of a sentinel-framed
/// sequence, for training.
pub fn lm_sequence_loss<T: Real>(
    g: &mut Graph<T>,
    b: &BoundRnnLm,
    y: &[u32],
) -> Result<NodeId, ModelError> {
    if y.len() < 2 || y[0] != SOS_ID || *y.last().unwrap() != EOS_ID {
        return Err(ModelError::BadTarget);
    }
    let mut state = lm_initial_state(g, b);
    let mut picks = Vec::with_capacity(y.len() - 1);
    for t in 1..y.len() {
        let (logp, st) = lm_step(g, b, &state, y[t - 1])?;
        picks.push(g.pick(logp, y[t] as usize)?);
        state = st;
    }
    let stacked = g.stack_rows(&picks)?;
    let total = g.sum_all(stacked);
    Ok(g.scale(total, -T::one() / T::from_f64c(picks.len() as f64)))
}
