//! In-memory training data, corpus mixing, and evaluation helpers.

use super::TrainError;
use crate::augment::{
    merge_vocabularies, read_augmenting_corpus, sample_durations, DurationModel, Vocab,
};
use crate::decode::{beam_search_fusion, corpus_cer_wer, DecodeConfig};
use crate::model::{mmda_log_likelihood, psda_log_likelihood, Model, ModelKind};
use crate::par;
use crate::tensor::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub lang: String,
    pub text: String,
    pub tokens: Vec<u32>,
    pub feats: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct AugExample {
    pub id: String,
    pub text: String,
    pub tokens: Vec<u32>,
    pub phonemes: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct AugData {
    pub examples: Vec<AugExample>,
    pub duration: DurationModel,
    /// True when `phonemes` already carry durations.
    pub expanded: bool,
    pub inventory: Vec<String>,
}

impl AugData {
    /// The network input for one example: either the stored sequence
    /// or a fresh duration expansion drawn from `seed`.
    pub fn input_for(&self, idx: usize, seed: u64) -> Vec<u32> {
        let ex = &self.examples[idx];
        if self.expanded {
            ex.phonemes.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_durations(&ex.phonemes, &self.duration, &mut rng)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub speech: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub aug: Option<AugData>,
    pub vocab: Vocab,
}

/// Reads each manifest entry's feature file and encodes its text.
pub fn load_utterances(
    entries: &[crate::io::ManifestEntry],
    vocab: &Vocab,
) -> Result<Vec<Utterance>, TrainError> {
    par::try_map_ordered(entries, |e| {
        let feats = crate::io::read_feature_file(&e.feat_path)?;
        Ok::<Utterance, TrainError>(Utterance {
            id: e.id.clone(),
            lang: e.lang.clone(),
            text: e.text.clone(),
            tokens: vocab.encode(&e.text),
            feats,
        })
    })
}

/// Loads an augmenting corpus file pair written by the preparation
/// pipeline; tokens are encoded against `vocab`.
pub fn load_aug_corpus(path: &Path, vocab: &Vocab) -> Result<AugData, TrainError> {
    let (records, meta) = read_augmenting_corpus(path)?;
    let examples = records
        .into_iter()
        .map(|r| AugExample {
            tokens: vocab.encode(&r.text),
            text: r.text,
            id: r.id,
            phonemes: r.phoneme_ids,
        })
        .collect();
    Ok(AugData {
        examples,
        duration: meta.duration,
        expanded: meta.expanded,
        inventory: meta.inventory,
    })
}

#[derive(Debug, Clone)]
pub struct MixedCorpus {
    pub entries: Vec<crate::io::ManifestEntry>,
    pub vocab: Vocab,
    pub feat_dim: usize,
}

/// Concatenates corpora into one stream (per-epoch shuffling happens
/// in the trainer, so per-utterance sampling is proportional to
/// corpus sizes) and unions their grapheme vocabularies. All corpora
/// must share the feature dimension.
pub fn mix_corpora(
    corpora: &[(String, Vec<crate::io::ManifestEntry>)],
) -> Result<MixedCorpus, TrainError> {
    assert!(!corpora.is_empty(), "mix_corpora needs at least one corpus");
    let mut entries = Vec::new();
    let mut vocabs = Vec::new();
    let mut feat_dim: Option<usize> = None;
    for (lang, list) in corpora {
        for e in list {
            let (_, d) = crate::io::read_feature_dims(&e.feat_path)?;
            match feat_dim {
                None => feat_dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(TrainError::FeatureDimMismatch {
                        lang: lang.clone(),
                        expected,
                        found: d,
                    })
                }
                _ => {}
            }
            let mut e = e.clone();
            e.lang = lang.clone();
            entries.push(e);
        }
        vocabs.push(Vocab::from_texts(list.iter().map(|e| e.text.as_str())));
    }
    Ok(MixedCorpus {
        entries,
        vocab: merge_vocabularies(&vocabs),
        feat_dim: feat_dim.expect("nonempty corpus"),
    })
}

/// Speech volume in hours assuming 100 frames per second.
pub fn corpus_hours(utterances: &[Utterance]) -> f64 {
    let frames: usize = utterances.iter().map(|u| u.feats.rows()).sum();
    frames as f64 / 100.0 / 3600.0
}

/// Corpus CER of an arbitrary per-utterance hypothesizer; decode
/// order equals manifest order.
pub fn evaluate_dev_with<F>(hyp_fn: F, dev: &[Utterance]) -> Result<f64, TrainError>
where
    F: Fn(&Utterance) -> String + Sync,
{
    let hyps = par::map_ordered(dev, |u| hyp_fn(u));
    let pairs: Vec<(String, String)> = dev
        .iter()
        .zip(hyps)
        .map(|(u, h)| (u.text.clone(), h))
        .collect();
    Ok(corpus_cer_wer(&pairs)?.0)
}

/// Decodes every dev utterance (beam search, no fusion) and pools the
/// character error rate. A `max_output_len` of 0 in the config means
/// an automatic per-utterance cap of twice the encoder length plus 8.
pub fn evaluate_dev(
    model: &Model<f32>,
    dev: &[Utterance],
    cfg: &DecodeConfig,
) -> Result<f64, TrainError> {
    let outs = par::try_map_ordered(dev, |u| {
        let mut c = cfg.clone();
        if c.max_output_len == 0 {
            c.max_output_len = 2 * crate::layers::enc_output_len(u.feats.rows()) + 8;
        }
        let (best, _) = beam_search_fusion(model, None, &u.feats, &c)?;
        Ok::<String, TrainError>(model.vocab.decode(&best.tokens))
    })?;
    let pairs: Vec<(String, String)> = dev
        .iter()
        .zip(outs)
        .map(|(u, h)| (u.text.clone(), h))
        .collect();
    Ok(corpus_cer_wer(&pairs)?.0)
}

/// Mean text-task loss over (up to `limit`) augmenting examples with
/// a fixed expansion seed, for probing how much of the text task a
/// model retains.
pub fn evaluate_aug_loss(
    model: &Model<f32>,
    aug: &AugData,
    limit: usize,
    eval_seed: u64,
) -> Result<f64, TrainError> {
    let n = aug.examples.len().min(limit.max(1));
    let idx: Vec<usize> = (0..n).collect();
    let losses = par::try_map_ordered(&idx, |&i| {
        let input = aug.input_for(i, eval_seed.wrapping_add(i as u64).wrapping_mul(0x9e3779b9));
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let loss = match model.cfg.kind {
            ModelKind::Mmda => {
                mmda_log_likelihood(&mut g, model, &b, &input, &aug.examples[i].tokens)?
            }
            ModelKind::Psda => {
                psda_log_likelihood(&mut g, model, &b, &input, &aug.examples[i].tokens)?
            }
        };
        Ok::<f64, TrainError>(g.value(loss).item() as f64)
    })?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
