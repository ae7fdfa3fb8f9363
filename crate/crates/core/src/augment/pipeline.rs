//! End-to-end augmenting-example construction and the JSON-lines
//! corpus format.

use super::duration::{sample_durations, DurationModel};
use super::lexicon::Phonemizer;
use super::vocab::Vocab;
use super::AugmentError;
use crate::par;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Keeps sentences whose every character is in `charset` and whose
/// character count lies in `[min_len, max_len]`, preserving order.
pub fn filter_corpus(
    sentences: &[String],
    charset: &BTreeSet<char>,
    min_len: usize,
    max_len: usize,
) -> Vec<String> {
    assert!(!charset.is_empty(), "filter charset must be nonempty");
    let keep = par::map_ordered(sentences, |s| {
        let n = s.chars().count();
        n >= min_len && n <= max_len && s.chars().all(|c| charset.contains(&c))
    });
    sentences
        .iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then(|| s.clone()))
        .collect()
}

/// A duration-expanded phoneme input paired with its character target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentingExample {
    /// Unexpanded phoneme IDs, boundaries included.
    pub phonemes: Vec<u32>,
    /// Duration-expanded input sequence.
    pub input: Vec<u32>,
    /// Character targets with sentinels.
    pub target: Vec<u32>,
}

pub fn build_augmenting_example<R: Rng>(
    sentence: &str,
    phonemizer: &Phonemizer,
    vocab: &Vocab,
    dm: &DurationModel,
    rng: &mut R,
) -> AugmentingExample {
    let phonemes = phonemizer.phonemize(sentence);
    let input = sample_durations(&phonemes, dm, rng);
    AugmentingExample {
        phonemes,
        input,
        target: vocab.encode(sentence),
    }
}

/// One line of an augmenting corpus file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct AugRecord {
    pub id: String,
    pub phoneme_ids: Vec<u32>,
    pub text: String,
}

/// Side metadata written next to the corpus (`<path>.meta.json`):
/// the phoneme inventory the IDs refer to, the duration model, the
/// expansion seed, and whether durations were already applied.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AugMeta {
    pub inventory: Vec<String>,
    pub duration: DurationModel,
    pub seed: u64,
    pub expanded: bool,
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

pub fn write_augmenting_corpus(
    path: &Path,
    records: &[AugRecord],
    meta: &AugMeta,
) -> Result<(), AugmentError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| AugmentError::BadCorpusLine {
            line: 0,
            source: e,
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let meta_json = serde_json::to_vec_pretty(meta).map_err(AugmentError::BadMeta)?;
    std::fs::write(meta_path(path), meta_json)?;
    Ok(())
}

pub fn read_augmenting_corpus(path: &Path) -> Result<(Vec<AugRecord>, AugMeta), AugmentError> {
    let f = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: AugRecord =
            serde_json::from_str(&line).map_err(|e| AugmentError::BadCorpusLine {
                line: i + 1,
                source: e,
            })?;
        records.push(r);
    }
    let meta_bytes = std::fs::read(meta_path(path))?;
    let meta: AugMeta = serde_json::from_slice(&meta_bytes).map_err(AugmentError::BadMeta)?;
    Ok((records, meta))
}

#[cfg(test)]
mod tests {
    use super::super::lexicon::Lexicon;
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn charset(s: &str) -> BTreeSet<char> {
        s.chars().collect()
    }

    #[test]
    fn filter_drops_unknown_chars_and_bad_lengths() {
        let sentences: Vec<String> = ["abab", "abqb", "", "ab", "aaaaaaaaaa"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let kept = filter_corpus(&sentences, &charset("ab"), 4, 8);
        assert_eq!(kept, vec!["abab".to_string()]);
    }

    #[test]
    fn filter_matches_bruteforce_predicate() {
        let cs = charset("abc ");
        let sentences: Vec<String> = (0..200)
            .map(|i| {
                let mut s = String::new();
                let chars = ['a', 'b', 'c', ' ', 'z'];
                let mut x = i * 2654435761usize;
                for _ in 0..(i % 12) {
                    s.push(chars[x % chars.len()]);
                    x /= chars.len();
                }
                s
            })
            .collect();
        let kept = filter_corpus(&sentences, &cs, 3, 9);
        let want: Vec<String> = sentences
            .iter()
            .filter(|s| {
                let n = s.chars().count();
                n >= 3 && n <= 9 && s.chars().all(|c| cs.contains(&c))
            })
            .cloned()
            .collect();
        assert_eq!(kept, want);
    }

    #[test]
    fn filter_is_idempotent() {
        let cs = charset("ab ");
        let sentences: Vec<String> = ["ab ab", "ba", "abba", "abq"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let once = filter_corpus(&sentences, &cs, 4, 10);
        let twice = filter_corpus(&once, &cs, 4, 10);
        assert_eq!(once, twice);
    }

    fn setup() -> (Phonemizer, Vocab, DurationModel) {
        let lex = Lexicon::parse("ab\tp1 p2\ncd\tp3 p4\n").unwrap();
        let phonemizer = Phonemizer::new(&lex, std::iter::empty());
        let vocab = Vocab::from_texts(["ab cd"]);
        (phonemizer, vocab, DurationModel::new(3.0))
    }

    #[test]
    fn different_draws_same_target() {
        let (p, v, dm) = setup();
        let mut rng = StdRng::seed_from_u64(1);
        let a = build_augmenting_example("ab cd", &p, &v, &dm, &mut rng);
        let b = build_augmenting_example("ab cd", &p, &v, &dm, &mut rng);
        assert_eq!(a.target, b.target);
        assert_eq!(a.phonemes, b.phonemes);
        assert_ne!(a.input, b.input, "distinct draws should differ");
    }

    #[test]
    fn expansion_round_trip_recovers_phonemes() {
        let (p, v, dm) = setup();
        let mut rng = StdRng::seed_from_u64(2);
        let ex = build_augmenting_example("ab cd ab", &p, &v, &dm, &mut rng);
        // collapse runs, keeping boundaries: durations >= 1 and no two
        // adjacent phonemes in a pronunciation repeat in this lexicon
        let mut collapsed = Vec::new();
        for &id in &ex.input {
            if collapsed.last() != Some(&id) {
                collapsed.push(id);
            }
        }
        assert_eq!(collapsed, ex.phonemes);
        assert!(ex.input.len() >= ex.phonemes.len());
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aug.jsonl");
        let records = vec![
            AugRecord {
                id: "aug-000000".into(),
                phoneme_ids: vec![1, 2, 0, 3],
                text: "ab cd".into(),
            },
            AugRecord {
                id: "aug-000001".into(),
                phoneme_ids: vec![3, 4],
                text: "cd".into(),
            },
        ];
        let meta = AugMeta {
            inventory: vec!["<wb>".into(), "p1".into()],
            duration: DurationModel::new(4.0),
            seed: 7,
            expanded: false,
        };
        write_augmenting_corpus(&path, &records, &meta).unwrap();
        let (r2, m2) = read_augmenting_corpus(&path).unwrap();
        assert_eq!(records, r2);
        assert_eq!(meta, m2);
    }
}
