//! Beam search over the attention decoder with optional shallow
//! fusion of an external character language model.

use super::DecodeError;
use crate::augment::{EOS_ID, SOS_ID};
use crate::model::rnnlm::{lm_initial_state, lm_step, LmState};
use crate::model::{encode_speech, Model, RnnLm};
use crate::model::forward::{decoder_advance, initial_step_state, StepState};
use crate::tensor::{Graph, Real, Tensor};
use std::cmp::Ordering;

/// Composite hypothesis score: the recognizer log-probability plus a
/// weighted language-model log-probability.
pub fn fuse_score(asr_logp: f64, lm_logp: f64, lambda: f64) -> f64 {
    asr_logp + lambda * lm_logp
}

/// How finished hypotheses are ranked for the final pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthRule {
    /// Divide the composite score by the number of emitted tokens.
    #[default]
    Normalize,
    Raw,
}

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub lambda: f64,
    pub max_output_len: usize,
    pub length_rule: LengthRule,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 8,
            lambda: 0.3,
            max_output_len: 200,
            length_rule: LengthRule::Normalize,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> DecodeConfig {
        DecodeConfig {
            beam_size: 1,
            lambda: 0.0,
            ..DecodeConfig::default()
        }
    }
}

/// One decoded hypothesis. `score` is exactly
/// `fuse_score(asr_logp, lm_logp, lambda)`; length normalization only
/// affects ranking.
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Tokens including `<sos>` and, when finished, `<eos>`.
    pub tokens: Vec<u32>,
    pub asr_logp: f64,
    pub lm_logp: f64,
    pub score: f64,
    pub finished: bool,
}

impl DecodeOutput {
    /// Emitted length: everything after `<sos>`.
    pub fn emitted_len(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }

    fn rank_score(&self, rule: LengthRule) -> f64 {
        match rule {
            LengthRule::Normalize => self.score / self.emitted_len().max(1) as f64,
            LengthRule::Raw => self.score,
        }
    }
}

struct Hyp {
    tokens: Vec<u32>,
    asr: f64,
    lm: f64,
    state: StepState,
    lm_state: Option<LmState>,
}

fn cmp_scored(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    // higher score first; ties broken lexicographically by token ids
    match b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal) {
        Ordering::Equal => a.1.cmp(b.1),
        other => other,
    }
}

/// Beam search with shallow fusion. At each step every live
/// hypothesis is expanded over the whole vocabulary, the top
/// `beam_size` candidates by composite score are kept, and kept
/// candidates ending in `<eos>` move to the finished pool. Returns
/// the best hypothesis (finished if any finished, otherwise the best
/// live one, flagged) and the ranked finished pool.
pub fn beam_search_fusion<T: Real>(
    model: &Model<T>,
    lm: Option<&RnnLm<T>>,
    feats: &Tensor<T>,
    cfg: &DecodeConfig,
) -> Result<(DecodeOutput, Vec<DecodeOutput>), DecodeError> {
    if cfg.beam_size < 1 {
        return Err(DecodeError::BadBeamSize);
    }
    if cfg.lambda < 0.0 {
        return Err(DecodeError::BadLambda(cfg.lambda));
    }
    if let Some(lm) = lm {
        if lm.vocab.hash64() != model.vocab.hash64() {
            return Err(DecodeError::VocabMismatch {
                lm: lm.vocab.hash64(),
                asr: model.vocab.hash64(),
            });
        }
    }

    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let lm_bound = lm.map(|l| l.bind(&mut g, false));
    let x = g.constant(feats.clone());
    let enc = encode_speech(&mut g, &bound, x)?;
    let t_enc = g.value(enc).rows();

    let init_state = initial_step_state(&mut g, model.cfg.dec_hidden, t_enc);
    let init_lm = lm_bound.as_ref().map(|b| lm_initial_state(&mut g, b));
    let mut live = vec![Hyp {
        tokens: vec![SOS_ID],
        asr: 0.0,
        lm: 0.0,
        state: init_state,
        lm_state: init_lm,
    }];
    let mut finished: Vec<DecodeOutput> = Vec::new();
    let vocab_size = model.vocab_size();

    for _ in 0..cfg.max_output_len {
        if live.is_empty() {
            break;
        }
        // expand every live hypothesis over the vocabulary
        struct Cand {
            parent: usize,
            token: u32,
            asr: f64,
            lm: f64,
            tokens: Vec<u32>,
        }
        let mut next_states = Vec::with_capacity(live.len());
        let mut cands: Vec<Cand> = Vec::with_capacity(live.len() * vocab_size);
        for (pi, hyp) in live.iter().enumerate() {
            let y_prev = *hyp.tokens.last().unwrap();
            let (logp, state) = decoder_advance(&mut g, &bound, enc, y_prev, &hyp.state)?;
            let asr_lp: Vec<f64> = g.value(logp).data().iter().map(|v| v.to_f64c()).collect();
            let (lm_lp, lm_state) = match (&lm_bound, &hyp.lm_state) {
                (Some(b), Some(st)) => {
                    let (lp, st2) = lm_step(&mut g, b, st, y_prev)?;
                    let v: Vec<f64> = g.value(lp).data().iter().map(|x| x.to_f64c()).collect();
                    (Some(v), Some(st2))
                }
                _ => (None, None),
            };
            next_states.push((state, lm_state));
            for v in 0..vocab_size {
                let mut tokens = hyp.tokens.clone();
                tokens.push(v as u32);
                cands.push(Cand {
                    parent: pi,
                    token: v as u32,
                    asr: hyp.asr + asr_lp[v],
                    lm: hyp.lm + lm_lp.as_ref().map_or(0.0, |l| l[v]),
                    tokens,
                });
            }
        }

        cands.sort_by(|a, b| {
            cmp_scored(
                (fuse_score(a.asr, a.lm, cfg.lambda), &a.tokens),
                (fuse_score(b.asr, b.lm, cfg.lambda), &b.tokens),
            )
        });
        cands.truncate(cfg.beam_size);

        let mut new_live = Vec::with_capacity(cfg.beam_size);
        for c in cands {
            if c.token == EOS_ID {
                finished.push(DecodeOutput {
                    tokens: c.tokens,
                    asr_logp: c.asr,
                    lm_logp: c.lm,
                    score: fuse_score(c.asr, c.lm, cfg.lambda),
                    finished: true,
                });
            } else {
                let (state, lm_state) = clone_state(&next_states[c.parent]);
                new_live.push(Hyp {
                    tokens: c.tokens,
                    asr: c.asr,
                    lm: c.lm,
                    state,
                    lm_state,
                });
            }
        }
        live = new_live;
    }

    finished.sort_by(|a, b| {
        cmp_scored(
            (a.rank_score(cfg.length_rule), &a.tokens),
            (b.rank_score(cfg.length_rule), &b.tokens),
        )
    });

    let best = if let Some(best) = finished.first() {
        best.clone()
    } else {
        // nothing finished within the output budget: best live
        // hypothesis, flagged unfinished
        let mut outs: Vec<DecodeOutput> = live
            .iter()
            .map(|h| DecodeOutput {
                tokens: h.tokens.clone(),
                asr_logp: h.asr,
                lm_logp: h.lm,
                score: fuse_score(h.asr, h.lm, cfg.lambda),
                finished: false,
            })
            .collect();
        outs.sort_by(|a, b| {
            cmp_scored(
                (a.rank_score(cfg.length_rule), &a.tokens),
                (b.rank_score(cfg.length_rule), &b.tokens),
            )
        });
        outs.into_iter().next().expect("at least one live hypothesis")
    };
    Ok((best, finished))
}

fn clone_state(s: &(StepState, Option<LmState>)) -> (StepState, Option<LmState>) {
    (
        StepState {
            h: s.0.h,
            c: s.0.c,
            alignment: s.0.alignment,
        },
        s.1.as_ref().map(|l| LmState { h: l.h, c: l.c }),
    )
}

/// Independent greedy decode: pure per-step argmax over recognizer
/// log-probabilities, no beam bookkeeping. Serves as the reference
/// for `beam_size=1, lambda=0`.
pub fn greedy_decode<T: Real>(
    model: &Model<T>,
    feats: &Tensor<T>,
    max_output_len: usize,
) -> Result<DecodeOutput, DecodeError> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let x = g.constant(feats.clone());
    let enc = encode_speech(&mut g, &bound, x)?;
    let t_enc = g.value(enc).rows();
    let mut state = initial_step_state(&mut g, model.cfg.dec_hidden, t_enc);
    let mut tokens = vec![SOS_ID];
    let mut asr = 0.0;
    let mut finished = false;
    for _ in 0..max_output_len {
        let y_prev = *tokens.last().unwrap();
        let (logp, next) = decoder_advance(&mut g, &bound, enc, y_prev, &state)?;
        let lp = g.value(logp);
        let mut best = 0usize;
        for (i, &v) in lp.data().iter().enumerate() {
            if v > lp.data()[best] {
                best = i;
            }
        }
        asr += lp.data()[best].to_f64c();
        tokens.push(best as u32);
        state = next;
        if best as u32 == EOS_ID {
            finished = true;
            break;
        }
    }
    Ok(DecodeOutput {
        tokens,
        asr_logp: asr,
        lm_logp: 0.0,
        score: asr,
        finished,
    })
}
