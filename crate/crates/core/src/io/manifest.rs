//! JSON-lines utterance manifests: `{id, feat, text, lang}` per line.
//! Feature paths are resolved relative to the manifest's directory.

use super::IoError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub feat: String,
    pub text: String,
    pub lang: String,
    /// Resolved feature path; not serialized.
    #[serde(skip)]
    pub feat_path: PathBuf,
}

/// Loads and validates a manifest: unique ids, nonempty text, and
/// every feature path resolvable.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    let p = path.display().to_string();
    let dir = path.parent().unwrap_or(Path::new("."));
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry =
            serde_json::from_str(&line).map_err(|err| IoError::BadManifestLine {
                path: p.clone(),
                line: i + 1,
                reason: err.to_string(),
            })?;
        if e.text.is_empty() {
            return Err(IoError::BadManifestLine {
                path: p.clone(),
                line: i + 1,
                reason: format!("empty text for id {}", e.id),
            });
        }
        if !seen.insert(e.id.clone()) {
            return Err(IoError::DuplicateId {
                path: p.clone(),
                id: e.id,
            });
        }
        let feat = Path::new(&e.feat);
        e.feat_path = if feat.is_absolute() {
            feat.to_path_buf()
        } else {
            dir.join(feat)
        };
        if !e.feat_path.is_file() {
            return Err(IoError::MissingFeature {
                path: p.clone(),
                id: e.id,
                feat: e.feat_path.display().to_string(),
            });
        }
        out.push(e);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), IoError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        let line = serde_json::to_string(e).expect("manifest entry serializes");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Seed-deterministic random subset of `round(fraction * n)` entries,
/// in original order. Subsets taken with the same seed nest: the
/// selection is a prefix of one fixed permutation, so a smaller
/// fraction always selects a subset of a larger one.
pub fn subset_manifest(
    entries: &[ManifestEntry],
    fraction: f64,
    seed: u64,
) -> Result<Vec<ManifestEntry>, IoError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(IoError::BadFraction(fraction));
    }
    let n = entries.len();
    let keep = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut selected: Vec<usize> = order.into_iter().take(keep).collect();
    selected.sort_unstable();
    Ok(selected.into_iter().map(|i| entries[i].clone()).collect())
}
