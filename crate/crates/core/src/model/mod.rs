//! Model assembly: the acoustic encoder, attention, decoder, and the
//! augmenting encoder, plus the named parameter partition that
//! gradient routing and checkpoints are defined over.

pub mod checkpoint;
pub mod forward;
mod losses;
pub mod rnnlm;

pub use forward::{decoder_advance, encode_augmenting, encode_speech, BoundModel};
pub use losses::{asr_log_likelihood, mmda_log_likelihood, psda_log_likelihood};
pub use rnnlm::{lm_sequence_loss, rnnlm_logprob, BoundRnnLm, LmConfig, RnnLm};

use crate::augment::Vocab;
use crate::layers::{AttentionParams, BiLstmParams, DecoderParams, PyramidParams};
use crate::tensor::{Real, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("target sequence must be nonempty and framed by <sos>/<eos>")]
    BadTarget,
    #[error("augmenting input must be nonempty")]
    EmptyAugInput,
    #[error("operation requires a {expected:?} model, got {found:?}")]
    WrongKind {
        expected: ModelKind,
        found: ModelKind,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Mmda,
    Psda,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Mmda => write!(f, "mmda"),
            ModelKind::Psda => write!(f, "psda"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mmda" => Ok(ModelKind::Mmda),
            "psda" => Ok(ModelKind::Psda),
            other => Err(format!("unknown model kind {other:?} (mmda|psda)")),
        }
    }
}

/// Architecture dimensions. The defaults are desk-scale settings;
/// tests shrink them further.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Acoustic feature dimension D.
    pub feat_dim: usize,
    /// Encoder LSTM hidden size per direction.
    pub enc_hidden: usize,
    /// Projection size P of every biLSTM layer.
    pub proj_dim: usize,
    pub dec_hidden: usize,
    pub dec_embed: usize,
    pub att_dim: usize,
    pub att_conv_channels: usize,
    pub att_conv_width: usize,
    pub phoneme_embed: usize,
    /// Augmenting-encoder LSTM hidden size per direction.
    pub aug_hidden: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            feat_dim: 40,
            enc_hidden: 128,
            proj_dim: 128,
            dec_hidden: 128,
            dec_embed: 64,
            att_dim: 128,
            att_conv_channels: 10,
            att_conv_width: 5,
            phoneme_embed: 64,
            aug_hidden: 128,
        }
    }

    /// Output dimension of the augmenting encoder: the attention key
    /// size for MMDA, the acoustic feature dimension for PSDA (its
    /// output is consumed as pseudo-speech).
    pub fn aug_output_dim(&self) -> usize {
        match self.kind {
            ModelKind::Mmda => self.proj_dim,
            ModelKind::Psda => self.feat_dim,
        }
    }
}

/// Phoneme embedding plus a single projection-biLSTM layer.
#[derive(Debug, Clone)]
pub struct AugEncoderParams<T> {
    pub embed: Tensor<T>,
    pub bilstm: BiLstmParams<T>,
}

impl<T: Real> AugEncoderParams<T> {
    fn init(cfg: &ModelConfig, inventory_size: usize, rng: &mut ChaCha8Rng) -> Self {
        AugEncoderParams {
            embed: crate::layers::uniform_tensor(&[inventory_size, cfg.phoneme_embed], rng),
            bilstm: BiLstmParams::init(
                cfg.phoneme_embed,
                cfg.aug_hidden,
                cfg.aug_output_dim(),
                rng,
            ),
        }
    }
}

/// The disjoint trainable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Enc,
    Att,
    Dec,
    Da,
}

pub const ALL_GROUPS: [ParamGroup; 4] = [
    ParamGroup::Enc,
    ParamGroup::Att,
    ParamGroup::Dec,
    ParamGroup::Da,
];

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamGroup::Enc => write!(f, "enc"),
            ParamGroup::Att => write!(f, "att"),
            ParamGroup::Dec => write!(f, "dec"),
            ParamGroup::Da => write!(f, "da"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    /// Phoneme inventory symbols the augmenting encoder indexes.
    pub inventory: Vec<String>,
    pub encoder: PyramidParams<T>,
    pub attention: AttentionParams<T>,
    pub decoder: DecoderParams<T>,
    pub aug_encoder: AugEncoderParams<T>,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, vocab: Vocab, inventory: Vec<String>, seed: u64) -> Model<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = PyramidParams::init(cfg.feat_dim, cfg.enc_hidden, cfg.proj_dim, &mut rng);
        let attention = AttentionParams::init(
            cfg.dec_hidden,
            cfg.proj_dim,
            cfg.att_dim,
            cfg.att_conv_channels,
            cfg.att_conv_width,
            &mut rng,
        );
        let decoder = DecoderParams::init(
            vocab.size(),
            cfg.dec_embed,
            cfg.proj_dim,
            cfg.dec_hidden,
            &mut rng,
        );
        let aug_encoder = AugEncoderParams::init(&cfg, inventory.len().max(1), &mut rng);
        Model {
            cfg,
            vocab,
            inventory,
            encoder,
            attention,
            decoder,
            aug_encoder,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    /// Named parameters in a fixed traversal order. The four groups
    /// are disjoint and together cover every trainable tensor.
    pub fn visit(&self) -> Vec<(String, ParamGroup, &Tensor<T>)> {
        let mut out = Vec::new();
        for (n, t) in self.encoder.fields() {
            out.push((format!("enc.{n}"), ParamGroup::Enc, t));
        }
        for (n, t) in self.attention.fields() {
            out.push((format!("att.{n}"), ParamGroup::Att, t));
        }
        for (n, t) in self.decoder.fields() {
            out.push((format!("dec.{n}"), ParamGroup::Dec, t));
        }
        out.push((
            "da.embed".to_string(),
            ParamGroup::Da,
            &self.aug_encoder.embed,
        ));
        for (n, t) in self.aug_encoder.bilstm.fields() {
            out.push((format!("da.{n}"), ParamGroup::Da, t));
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, ParamGroup, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (n, t) in self.encoder.fields_mut() {
            out.push((format!("enc.{n}"), ParamGroup::Enc, t));
        }
        for (n, t) in self.attention.fields_mut() {
            out.push((format!("att.{n}"), ParamGroup::Att, t));
        }
        for (n, t) in self.decoder.fields_mut() {
            out.push((format!("dec.{n}"), ParamGroup::Dec, t));
        }
        out.push((
            "da.embed".to_string(),
            ParamGroup::Da,
            &mut self.aug_encoder.embed,
        ));
        for (n, t) in self.aug_encoder.bilstm.fields_mut() {
            out.push((format!("da.{n}"), ParamGroup::Da, t));
        }
        out
    }

    /// Converts element precision; used when moving between training
    /// storage (f32) and high-precision checks (f64).
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out = Model::<U>::new(
            self.cfg.clone(),
            self.vocab.clone(),
            self.inventory.clone(),
            0,
        );
        let src = self.visit();
        for ((_, _, dst), (_, _, s)) in out.visit_mut().into_iter().zip(src.into_iter()) {
            for (d, v) in dst.data_mut().iter_mut().zip(s.data()) {
                *d = U::from_f64c(v.to_f64c());
            }
        }
        out
    }
}

/// Trainable groups per training phase. Pretraining with the MMDA
/// wiring never reaches the acoustic encoder, so it is excluded
/// there; the PSDA cascade keeps the whole network on the graph.
pub fn trainable_mask(phase: TrainPhaseKind, kind: ModelKind) -> Vec<ParamGroup> {
    match phase {
        TrainPhaseKind::Pretrain => match kind {
            ModelKind::Mmda => vec![ParamGroup::Da, ParamGroup::Att, ParamGroup::Dec],
            ModelKind::Psda => vec![
                ParamGroup::Da,
                ParamGroup::Enc,
                ParamGroup::Att,
                ParamGroup::Dec,
            ],
        },
        TrainPhaseKind::Main => ALL_GROUPS.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainPhaseKind {
    Pretrain,
    Main,
}
