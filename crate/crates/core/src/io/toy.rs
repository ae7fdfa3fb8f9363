//! Synthetic speech-like corpus generator.
//!
//! Each phoneme owns a fixed random emission vector; a sentence is
//! rendered by repeating each phoneme's vector for a sampled duration
//! plus Gaussian frame noise, with a dedicated boundary vector between
//! words. Spellings map phonemes to characters one-to-one, so the
//! recognition task is exactly invertible at zero noise.

use super::features::write_feature_file;
use super::manifest::{write_manifest, ManifestEntry};
use super::IoError;
use crate::augment::DurationModel;
use crate::tensor::Tensor;
use rand::distributions::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyTaskSpec {
    pub n_phonemes: usize,
    /// Character alphabet; spellings use the first `n_phonemes` of it.
    pub charset: Vec<char>,
    pub n_words: usize,
    pub word_phonemes: (usize, usize),
    /// Sentence length range in words.
    pub sent_words: (usize, usize),
    pub feat_dim: usize,
    pub noise_std: f64,
    pub dur_mean: f64,
    pub dur_std: f64,
    pub seed: u64,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        ToyTaskSpec {
            n_phonemes: 20,
            charset: ('a'..='z').collect(),
            n_words: 60,
            word_phonemes: (2, 4),
            sent_words: (3, 12),
            feat_dim: 40,
            noise_std: 0.1,
            dur_mean: 4.0,
            dur_std: 1.0,
            seed: 0,
        }
    }
}

/// Built task: the word list and the emission table. The final
/// emission row is the word-boundary vector.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub spec: ToyTaskSpec,
    /// (spelling, phoneme indices) per word.
    pub words: Vec<(String, Vec<usize>)>,
    /// `[n_phonemes + 1][feat_dim]`, last row = boundary.
    pub emissions: Vec<Vec<f32>>,
}

impl ToyTask {
    pub fn boundary_index(&self) -> usize {
        self.spec.n_phonemes
    }

    pub fn phoneme_char(&self, p: usize) -> char {
        self.spec.charset[p]
    }

    /// Samples a sentence as a word-index list.
    fn sample_sentence<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let (lo, hi) = self.spec.sent_words;
        let n = rng.gen_range(lo..=hi);
        (0..n).map(|_| rng.gen_range(0..self.words.len())).collect()
    }

    pub fn sentence_text(&self, words: &[usize]) -> String {
        words
            .iter()
            .map(|&w| self.words[w].0.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Emission-index sequence with boundaries between words.
    fn emission_indices(&self, words: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, &w) in words.iter().enumerate() {
            if i > 0 {
                out.push(self.boundary_index());
            }
            out.extend(self.words[w].1.iter().copied());
        }
        out
    }

    /// Renders features: per emission index, a sampled duration of
    /// noisy copies of its vector.
    pub fn render<R: Rng>(&self, words: &[usize], rng: &mut R) -> Tensor<f32> {
        let dm = DurationModel::with_std(self.spec.dur_mean, self.spec.dur_std);
        let d = self.spec.feat_dim;
        let noise = if self.spec.noise_std > 0.0 {
            Some(Normal::new(0.0, self.spec.noise_std).expect("valid normal"))
        } else {
            None
        };
        let mut frames: Vec<f32> = Vec::new();
        for &e in &self.emission_indices(words) {
            let dur = dm.sample(rng);
            for _ in 0..dur {
                for j in 0..d {
                    let base = self.emissions[e][j];
                    let v = match &noise {
                        Some(n) => base + n.sample(rng) as f32,
                        None => base,
                    };
                    frames.push(v);
                }
            }
        }
        let l = frames.len() / d;
        Tensor::new(vec![l, d], frames).expect("rendered shape")
    }
}

/// Deterministically builds the word list and emission table.
pub fn build_toy_task(spec: &ToyTaskSpec) -> ToyTask {
    assert!(spec.n_phonemes >= 2, "need at least two phonemes");
    assert!(
        spec.n_phonemes <= spec.charset.len(),
        "charset too small for one character per phoneme"
    );
    assert!(spec.noise_std >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // emission table: uniform vectors, re-drawn until pairwise
    // distinct with a safety margin
    let mut emissions: Vec<Vec<f32>> = Vec::with_capacity(spec.n_phonemes + 1);
    while emissions.len() < spec.n_phonemes + 1 {
        let cand: Vec<f32> = (0..spec.feat_dim)
            .map(|_| rng.gen_range(-1.0..1.0) as f32)
            .collect();
        let min_d2 = emissions
            .iter()
            .map(|e| {
                e.iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f32>()
            })
            .fold(f32::INFINITY, f32::min);
        if min_d2 > 0.25 * spec.feat_dim as f32 * 0.1 {
            emissions.push(cand);
        }
    }

    // distinct words without immediately repeated phonemes, so
    // segment boundaries stay recoverable from frames alone
    let mut words = Vec::with_capacity(spec.n_words);
    let mut seen: HashSet<String> = HashSet::new();
    while words.len() < spec.n_words {
        let (lo, hi) = spec.word_phonemes;
        let len = rng.gen_range(lo..=hi);
        let mut phon: Vec<usize> = Vec::with_capacity(len);
        for _ in 0..len {
            let mut p = rng.gen_range(0..spec.n_phonemes);
            while Some(&p) == phon.last() {
                p = rng.gen_range(0..spec.n_phonemes);
            }
            phon.push(p);
        }
        let spelling: String = phon.iter().map(|&p| spec.charset[p]).collect();
        if seen.insert(spelling.clone()) {
            words.push((spelling, phon));
        }
    }

    ToyTask {
        spec: spec.clone(),
        words,
        emissions,
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpusPaths {
    pub train_manifest: PathBuf,
    pub dev_manifest: PathBuf,
    pub aug_text: PathBuf,
    pub lexicon: PathBuf,
    pub meta: PathBuf,
}

/// Generates manifests, feature files, a disjoint augmenting text
/// corpus, and the matching lexicon under `out_dir`. Refuses to write
/// into an existing nonempty directory unless `force` is set.
pub fn gen_toy_corpus(
    spec: &ToyTaskSpec,
    n_train: usize,
    n_dev: usize,
    n_aug: usize,
    out_dir: &Path,
    force: bool,
) -> Result<(ToyCorpusPaths, ToyTask), IoError> {
    assert!(n_train >= 1 && n_dev >= 1 && n_aug >= 1);
    if out_dir.exists() && out_dir.read_dir()?.next().is_some() {
        if !force {
            return Err(IoError::OutputDirExists(out_dir.display().to_string()));
        }
        std::fs::remove_dir_all(out_dir)?;
    }
    std::fs::create_dir_all(out_dir.join("feats"))?;

    let task = build_toy_task(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));

    // disjoint sentence sets: no dev or augmenting sentence duplicates
    // a training prompt
    let mut texts: HashSet<String> = HashSet::new();
    let mut draw_unique = |task: &ToyTask, rng: &mut ChaCha8Rng| -> Vec<usize> {
        for _ in 0..10_000 {
            let s = task.sample_sentence(rng);
            let text = task.sentence_text(&s);
            if texts.insert(text) {
                return s;
            }
        }
        panic!("could not draw a fresh sentence; corpus demands exceed task capacity");
    };

    let mut write_split = |name: &str,
                           count: usize,
                           rng: &mut ChaCha8Rng|
     -> Result<(PathBuf, Vec<ManifestEntry>), IoError> {
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let words = draw_unique(&task, rng);
            let id = format!("{name}-{i:05}");
            let feats = task.render(&words, rng);
            let rel = format!("feats/{id}.feat");
            write_feature_file(&out_dir.join(&rel), &feats)?;
            entries.push(ManifestEntry {
                id,
                feat: rel.clone(),
                text: task.sentence_text(&words),
                lang: "toy".into(),
                feat_path: out_dir.join(&rel),
            });
        }
        let path = out_dir.join(format!("{name}.jsonl"));
        write_manifest(&path, &entries)?;
        Ok((path, entries))
    };

    let (train_manifest, _) = write_split("train", n_train, &mut rng)?;
    let (dev_manifest, _) = write_split("dev", n_dev, &mut rng)?;

    let aug_text = out_dir.join("aug_text.txt");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&aug_text)?);
        for _ in 0..n_aug {
            let words = draw_unique(&task, &mut rng);
            writeln!(w, "{}", task.sentence_text(&words))?;
        }
        w.flush()?;
    }

    let lexicon = out_dir.join("lexicon.tsv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&lexicon)?);
        for (spelling, phon) in &task.words {
            let pron: Vec<String> = phon.iter().map(|p| format!("p{p:02}")).collect();
            writeln!(w, "{spelling}\t{}", pron.join(" "))?;
        }
        w.flush()?;
    }

    let meta = out_dir.join("toy_meta.json");
    std::fs::write(&meta, serde_json::to_vec_pretty(spec).expect("spec serializes"))?;

    Ok((
        ToyCorpusPaths {
            train_manifest,
            dev_manifest,
            aug_text,
            lexicon,
            meta,
        },
        task,
    ))
}
