//! The training loop. One writer owns the model and optimizer; every
//! random decision flows through a single counter-based RNG so a run
//! is fully determined by (seed, config, data) and can resume from a
//! checkpoint bit-identically.

use super::data::{evaluate_dev, TrainData};
use super::optim::Adam;
use super::schedule::{draw_task, Task};
use super::{TrainConfig, TrainError};
use crate::decode::DecodeConfig;
use crate::model::{
    asr_log_likelihood, mmda_log_likelihood, psda_log_likelihood, trainable_mask, Model,
    ModelKind, ParamGroup, TrainPhaseKind,
};
use crate::tensor::{Graph, Tensor};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub phase: String,
    pub task: String,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Everything the loop needs to continue besides the model, the
/// optimizer moments, and the immutable data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LoopState {
    pub step: u64,
    pub speech_pos: usize,
    pub speech_epoch: u64,
    pub speech_epoch_seed: u64,
    pub aug_pos: usize,
    pub aug_epoch_seed: u64,
    pub best_dev: Option<f64>,
    pub epochs_since_improve: u32,
    pub done: bool,
    pub rng_seed_hex: String,
    pub rng_word_pos: String,
    pub rng_stream: u64,
}

pub struct Trainer<'d> {
    pub model: Model<f32>,
    pub data: &'d TrainData,
    pub cfg: TrainConfig,
    pub opt: Adam,
    rng: ChaCha8Rng,
    step: u64,
    speech_pos: usize,
    speech_epoch: u64,
    speech_epoch_seed: u64,
    speech_perm: Vec<usize>,
    aug_pos: usize,
    aug_epoch_seed: u64,
    aug_perm: Vec<usize>,
    best_dev: Option<f64>,
    epochs_since_improve: u32,
    done: bool,
    /// Decode settings for the end-of-epoch dev evaluation; `None`
    /// disables evaluation and early stopping.
    pub dev_decode: Option<DecodeConfig>,
    pub history: Vec<StepRecord>,
    pub dev_history: Vec<(u64, f64)>,
    /// Post-clip global gradient norm of the latest step.
    pub last_post_clip_norm: f64,
    /// Set after an epoch whose dev evaluation improved the best.
    pub improved_last_epoch: bool,
}

fn seeded_perm(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    v.shuffle(&mut rng);
    v
}

impl<'d> Trainer<'d> {
    pub fn new(
        model: Model<f32>,
        data: &'d TrainData,
        cfg: TrainConfig,
    ) -> Result<Trainer<'d>, TrainError> {
        cfg.validate()?;
        if data.speech.is_empty() {
            return Err(TrainError::EmptySpeech);
        }
        if cfg.pretrain_batches > 0 && data.aug.is_none() {
            return Err(TrainError::PretrainNeedsAug(cfg.pretrain_batches));
        }
        let n_params = model.visit().len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let speech_epoch_seed = rng.next_u64();
        let aug_epoch_seed = rng.next_u64();
        let speech_perm = seeded_perm(data.speech.len(), speech_epoch_seed);
        let aug_perm = seeded_perm(
            data.aug.as_ref().map_or(0, |a| a.examples.len()),
            aug_epoch_seed,
        );
        let lr = cfg.learning_rate;
        Ok(Trainer {
            model,
            data,
            cfg,
            opt: Adam::new(lr, n_params),
            rng,
            step: 0,
            speech_pos: 0,
            speech_epoch: 0,
            speech_epoch_seed,
            speech_perm,
            aug_pos: 0,
            aug_epoch_seed,
            aug_perm,
            best_dev: None,
            epochs_since_improve: 0,
            done: false,
            dev_decode: Some(DecodeConfig {
                beam_size: 1,
                lambda: 0.0,
                max_output_len: 0,
                ..DecodeConfig::default()
            }),
            history: Vec::new(),
            dev_history: Vec::new(),
            last_post_clip_norm: 0.0,
            improved_last_epoch: false,
        })
    }

    pub fn phase(&self) -> TrainPhaseKind {
        if (self.step as usize) < self.cfg.pretrain_batches {
            TrainPhaseKind::Pretrain
        } else {
            TrainPhaseKind::Main
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn speech_epoch(&self) -> u64 {
        self.speech_epoch
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn best_dev(&self) -> Option<f64> {
        self.best_dev
    }

    pub fn loop_state(&self) -> LoopState {
        LoopState {
            step: self.step,
            speech_pos: self.speech_pos,
            speech_epoch: self.speech_epoch,
            speech_epoch_seed: self.speech_epoch_seed,
            aug_pos: self.aug_pos,
            aug_epoch_seed: self.aug_epoch_seed,
            best_dev: self.best_dev,
            epochs_since_improve: self.epochs_since_improve,
            done: self.done,
            rng_seed_hex: hex(&self.rng.get_seed()),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            rng_stream: self.rng.get_stream(),
        }
    }

    pub(crate) fn restore_loop_state(&mut self, s: &LoopState) -> Result<(), TrainError> {
        let seed =
            unhex(&s.rng_seed_hex).ok_or_else(|| TrainError::ResumeMismatch("rng seed".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(s.rng_stream);
        let pos: u128 = s
            .rng_word_pos
            .parse()
            .map_err(|_| TrainError::ResumeMismatch("rng word position".into()))?;
        rng.set_word_pos(pos);
        if s.speech_pos > self.data.speech.len() {
            return Err(TrainError::ResumeMismatch(
                "speech position exceeds corpus size".into(),
            ));
        }
        self.rng = rng;
        self.step = s.step;
        self.speech_pos = s.speech_pos;
        self.speech_epoch = s.speech_epoch;
        self.speech_epoch_seed = s.speech_epoch_seed;
        self.speech_perm = seeded_perm(self.data.speech.len(), s.speech_epoch_seed);
        self.aug_pos = s.aug_pos;
        self.aug_epoch_seed = s.aug_epoch_seed;
        self.aug_perm = seeded_perm(
            self.data.aug.as_ref().map_or(0, |a| a.examples.len()),
            s.aug_epoch_seed,
        );
        self.best_dev = s.best_dev;
        self.epochs_since_improve = s.epochs_since_improve;
        self.done = s.done;
        Ok(())
    }

    /// Runs one update step; `Ok(None)` once training has finished.
    pub fn step(&mut self) -> Result<Option<StepRecord>, TrainError> {
        if self.done {
            return Ok(None);
        }
        let phase = self.phase();
        let task = match phase {
            TrainPhaseKind::Pretrain => Task::Augmenting,
            TrainPhaseKind::Main => {
                if self.data.aug.is_some() {
                    draw_task(&mut self.rng, self.cfg.rho)?
                } else {
                    Task::Speech
                }
            }
        };

        let record = match task {
            Task::Speech => self.speech_step(phase)?,
            Task::Augmenting => self.aug_step(phase)?,
        };
        self.history.push(record.clone());

        // epoch bookkeeping only once the main phase consumes the
        // speech stream
        if phase == TrainPhaseKind::Main
            && task == Task::Speech
            && self.speech_pos >= self.speech_perm.len()
        {
            self.finish_epoch()?;
        }
        Ok(Some(record))
    }

    fn finish_epoch(&mut self) -> Result<(), TrainError> {
        self.speech_epoch += 1;
        self.improved_last_epoch = false;
        if let Some(dc) = &self.dev_decode {
            if !self.data.dev.is_empty() {
                let cer = evaluate_dev(&self.model, &self.data.dev, dc)?;
                self.dev_history.push((self.speech_epoch, cer));
                let improved = self.best_dev.map_or(true, |b| cer < b);
                if improved {
                    self.best_dev = Some(cer);
                    self.epochs_since_improve = 0;
                    self.improved_last_epoch = true;
                } else {
                    self.epochs_since_improve += 1;
                }
                if self.epochs_since_improve >= self.cfg.patience as u32 {
                    self.done = true;
                }
            }
        }
        if self.speech_epoch >= self.cfg.max_epochs as u64 {
            self.done = true;
        }
        self.speech_epoch_seed = self.rng.next_u64();
        self.speech_perm = seeded_perm(self.data.speech.len(), self.speech_epoch_seed);
        self.speech_pos = 0;
        Ok(())
    }

    /// Runs augmenting-only steps until the pretraining budget is
    /// spent. No speech batch is consumed.
    pub fn run_pretrain(&mut self) -> Result<(), TrainError> {
        while self.phase() == TrainPhaseKind::Pretrain {
            self.step()?;
        }
        Ok(())
    }

    /// Runs to completion (early stop or the epoch budget).
    pub fn run(&mut self) -> Result<(), TrainError> {
        while self.step()?.is_some() {}
        Ok(())
    }

    fn speech_step(&mut self, phase: TrainPhaseKind) -> Result<StepRecord, TrainError> {
        debug_assert_eq!(phase, TrainPhaseKind::Main);
        let remaining = self.speech_perm.len() - self.speech_pos;
        let take = remaining.min(self.cfg.batch_size);
        let idx: Vec<usize> =
            self.speech_perm[self.speech_pos..self.speech_pos + take].to_vec();
        self.speech_pos += take;

        let batch_id = self.data.speech[idx[0]].id.clone();
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, true);
        let mut losses = Vec::with_capacity(idx.len());
        for &i in &idx {
            let u = &self.data.speech[i];
            losses.push(asr_log_likelihood(
                &mut g,
                &self.model,
                &bound,
                &u.feats,
                &u.tokens,
            )?);
        }
        self.apply_update(g, bound, losses, phase, Task::Speech, batch_id)
    }

    fn aug_step(&mut self, phase: TrainPhaseKind) -> Result<StepRecord, TrainError> {
        let aug = self.data.aug.as_ref().expect("augmenting corpus present");
        let n = aug.examples.len();
        let mut idx = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size.min(n) {
            if self.aug_pos >= self.aug_perm.len() {
                self.aug_epoch_seed = self.rng.next_u64();
                self.aug_perm = seeded_perm(n, self.aug_epoch_seed);
                self.aug_pos = 0;
            }
            idx.push(self.aug_perm[self.aug_pos]);
            self.aug_pos += 1;
        }

        // a fresh duration draw per example per visit
        let inputs: Vec<Vec<u32>> = idx
            .iter()
            .map(|&i| {
                let seed = self.rng.next_u64();
                aug.input_for(i, seed)
            })
            .collect();

        let batch_id = aug.examples[idx[0]].id.clone();
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, true);
        let mut losses = Vec::with_capacity(idx.len());
        for (&i, input) in idx.iter().zip(&inputs) {
            let tokens = &aug.examples[i].tokens;
            let loss = match self.cfg.mode {
                ModelKind::Mmda => {
                    mmda_log_likelihood(&mut g, &self.model, &bound, input, tokens)?
                }
                ModelKind::Psda => {
                    psda_log_likelihood(&mut g, &self.model, &bound, input, tokens)?
                }
            };
            losses.push(loss);
        }
        self.apply_update(g, bound, losses, phase, Task::Augmenting, batch_id)
    }

    fn apply_update(
        &mut self,
        mut g: Graph<f32>,
        bound: crate::model::BoundModel,
        losses: Vec<crate::tensor::NodeId>,
        phase: TrainPhaseKind,
        task: Task,
        batch_id: String,
    ) -> Result<StepRecord, TrainError> {
        let stacked = g.stack_rows(&losses).map_err(crate::model::ModelError::from)?;
        let total = g.sum_all(stacked);
        let loss = g.scale(total, 1.0 / losses.len() as f32);
        let loss_value = g.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.step,
                batch_id,
            });
        }
        g.backward(loss).map_err(crate::model::ModelError::from)?;

        let mask = trainable_mask(phase, self.cfg.mode);
        let ids = bound.param_ids();
        let groups: Vec<ParamGroup> =
            self.model.visit().into_iter().map(|(_, gr, _)| gr).collect();
        let mut grads: Vec<Option<Tensor<f32>>> = ids
            .iter()
            .zip(&groups)
            .map(|(&id, group)| {
                if mask.contains(group) {
                    g.grad(id).cloned()
                } else {
                    None
                }
            })
            .collect();

        // global-norm clip over all trainable gradients
        let mut sq_sum = 0.0f64;
        for grad in grads.iter().flatten() {
            for &v in grad.data() {
                sq_sum += (v as f64) * (v as f64);
            }
        }
        let grad_norm = sq_sum.sqrt();
        if grad_norm > self.cfg.grad_clip {
            let scale = (self.cfg.grad_clip / grad_norm) as f32;
            for grad in grads.iter_mut().flatten() {
                for v in grad.data_mut() {
                    *v *= scale;
                }
            }
            self.last_post_clip_norm = self.cfg.grad_clip;
        } else {
            self.last_post_clip_norm = grad_norm;
        }

        for (pi, (grad, (_, _, param))) in grads
            .into_iter()
            .zip(self.model.visit_mut().into_iter())
            .enumerate()
        {
            if let Some(grad) = grad {
                if grad.data().iter().any(|&v| v != 0.0) {
                    self.opt.update(pi, param, &grad);
                }
            }
        }

        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            phase: match phase {
                TrainPhaseKind::Pretrain => "pretrain".into(),
                TrainPhaseKind::Main => "main".into(),
            },
            task: task.to_string(),
            loss: loss_value,
            grad_norm,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for i in 0..32 {
        out[i] = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::augment::{DurationModel, Vocab};
    use crate::model::ModelConfig;
    use crate::train::data::{AugData, AugExample, Utterance};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn tiny_model_cfg(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            feat_dim: 3,
            enc_hidden: 3,
            proj_dim: 3,
            dec_hidden: 3,
            dec_embed: 2,
            att_dim: 3,
            att_conv_channels: 2,
            att_conv_width: 3,
            phoneme_embed: 2,
            aug_hidden: 3,
        }
    }

    pub(crate) fn tiny_data_pub(seed: u64, n_speech: usize, n_aug: usize) -> TrainData {
        let vocab = Vocab::from_texts(["abcd"]);
        let mut rng = StdRng::seed_from_u64(seed);
        let mut mk_text = |rng: &mut StdRng| -> String {
            let n = rng.gen_range(2..5);
            (0..n)
                .map(|_| ['a', 'b', 'c', 'd'][rng.gen_range(0..4)])
                .collect()
        };
        let speech: Vec<Utterance> = (0..n_speech)
            .map(|i| {
                let text = mk_text(&mut rng);
                let l = rng.gen_range(4..9);
                let data = (0..l * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Utterance {
                    id: format!("u{i}"),
                    lang: "toy".into(),
                    text: text.clone(),
                    tokens: vocab.encode(&text),
                    feats: Tensor::new(vec![l, 3], data).unwrap(),
                }
            })
            .collect();
        let dev = vec![speech[0].clone()];
        let aug = (n_aug > 0).then(|| AugData {
            examples: (0..n_aug)
                .map(|i| {
                    let text = mk_text(&mut rng);
                    let len = rng.gen_range(2..6);
                    AugExample {
                        id: format!("aug{i}"),
                        tokens: vocab.encode(&text),
                        text,
                        phonemes: (0..len).map(|_| rng.gen_range(0..3u32)).collect(),
                    }
                })
                .collect(),
            duration: DurationModel::new(2.0),
            expanded: false,
            inventory: vec!["<wb>".into(), "p1".into(), "p2".into()],
        });
        TrainData {
            speech,
            dev,
            aug,
            vocab,
        }
    }

    /// Small MMDA trainer: `pretrain` pretraining batches, `epochs`
    /// epoch budget, no dev evaluation.
    pub(crate) fn tiny_trainer<'a>(
        data: &'a TrainData,
        pretrain: usize,
        epochs: usize,
    ) -> Trainer<'a> {
        let cfg = TrainConfig {
            pretrain_batches: pretrain,
            max_epochs: epochs,
            ..TrainConfig::default()
        };
        let model: Model<f32> = Model::new(
            tiny_model_cfg(cfg.mode),
            data.vocab.clone(),
            data.aug
                .as_ref()
                .map(|a| a.inventory.clone())
                .unwrap_or_else(|| vec!["<wb>".into()]),
            cfg.seed,
        );
        let mut tr = Trainer::new(model, data, cfg).unwrap();
        tr.dev_decode = None;
        tr
    }
}
