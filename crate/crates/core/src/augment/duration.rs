//! Shared Gaussian frames-per-symbol duration model.

use super::AugmentError;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// One Gaussian shared across all phonemes. The mean is the pooled
/// ratio of input frames to output symbols over the speech corpus;
/// the default spread is a quarter of the mean, which keeps repeated
/// sentences from collapsing to identical training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationModel {
    pub mean: f64,
    pub std: f64,
}

pub const DEFAULT_STD_FRACTION: f64 = 0.25;

impl DurationModel {
    pub fn new(mean: f64) -> DurationModel {
        assert!(mean > 0.0, "duration mean must be positive");
        DurationModel {
            mean,
            std: DEFAULT_STD_FRACTION * mean,
        }
    }

    pub fn with_std(mean: f64, std: f64) -> DurationModel {
        assert!(mean > 0.0 && std >= 0.0);
        DurationModel { mean, std }
    }

    /// Draws one duration: round to nearest and clamp to at least one
    /// frame so no phoneme disappears.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        if self.std == 0.0 {
            return (self.mean.round() as i64).max(1) as usize;
        }
        let normal = Normal::new(self.mean, self.std).expect("valid normal");
        let d = normal.sample(rng).round() as i64;
        d.max(1) as usize
    }
}

/// Pooled mean over the corpus: total frames divided by total output
/// symbols, not the mean of per-utterance ratios.
pub fn estimate_duration_model(
    utterances: &[(String, usize, usize)],
) -> Result<DurationModel, AugmentError> {
    if utterances.is_empty() {
        return Err(AugmentError::EmptyManifest);
    }
    let mut frames = 0usize;
    let mut symbols = 0usize;
    for (id, l, y) in utterances {
        if *l == 0 || *y == 0 {
            return Err(AugmentError::BadUtterance {
                id: id.clone(),
                frames: *l,
                symbols: *y,
            });
        }
        frames += l;
        symbols += y;
    }
    Ok(DurationModel::new(frames as f64 / symbols as f64))
}

/// Repeats each phoneme by a sampled duration. Deterministic given
/// the RNG state.
pub fn sample_durations<R: Rng>(phonemes: &[u32], dm: &DurationModel, rng: &mut R) -> Vec<u32> {
    let mut out = Vec::with_capacity((phonemes.len() as f64 * dm.mean) as usize + phonemes.len());
    for &p in phonemes {
        let d = dm.sample(rng);
        for _ in 0..d {
            out.push(p);
        }
    }
    out
}
