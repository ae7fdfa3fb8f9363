//! Pronunciation lexicon and the phonemizer built over it.
//!
//! Lexicon files are UTF-8 with one `word<TAB>ph1 ph2 ...` entry per
//! line. Out-of-vocabulary words fall back to per-character grapheme
//! symbols, which are registered as distinct inventory entries ahead
//! of time so phonemization itself is a pure, parallel-safe lookup.

use super::AugmentError;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

/// Inventory symbol emitted between words.
pub const WORD_BOUNDARY: &str = "<wb>";

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Lexicon, AugmentError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, prons) = line.split_once('\t').ok_or(AugmentError::BadLexiconLine {
                line: i + 1,
                reason: "missing tab between word and pronunciation".into(),
            })?;
            let phones: Vec<String> = prons.split_whitespace().map(str::to_string).collect();
            if word.is_empty() || phones.is_empty() {
                return Err(AugmentError::BadLexiconLine {
                    line: i + 1,
                    reason: "empty word or pronunciation".into(),
                });
            }
            entries.insert(word.to_string(), phones);
        }
        Ok(Lexicon { entries })
    }

    pub fn load(path: &Path) -> Result<Lexicon, AugmentError> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    fn phoneme_set(&self) -> BTreeSet<String> {
        self.entries.values().flatten().cloned().collect()
    }
}

/// Phoneme symbol table. ID 0 is the word boundary; lexicon phonemes
/// follow sorted by name, then grapheme fallbacks sorted by character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl PhonemeInventory {
    pub fn from_names(names: Vec<String>) -> PhonemeInventory {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        PhonemeInventory { names, index }
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(|s| s.as_str())
    }

    pub fn hash64(&self) -> u64 {
        super::vocab::fnv1a(self.names.iter().map(|s| s.as_str()))
    }
}

fn fallback_symbol(c: char) -> String {
    format!("#{c}")
}

#[derive(Debug, Clone)]
pub struct Phonemizer {
    words: HashMap<String, Vec<u32>>,
    inventory: PhonemeInventory,
    boundary: u32,
}

impl Phonemizer {
    /// Builds the symbol table from the lexicon plus grapheme
    /// fallbacks for every out-of-lexicon word seen in `sentences`.
    /// Fallback IDs are assigned in sorted character order, so the
    /// inventory does not depend on sentence order.
    pub fn new<'a, I: IntoIterator<Item = &'a str>>(lexicon: &Lexicon, sentences: I) -> Phonemizer {
        let mut names = vec![WORD_BOUNDARY.to_string()];
        names.extend(lexicon.phoneme_set());

        let mut fallback_chars = BTreeSet::new();
        for sentence in sentences {
            for word in sentence.split_whitespace() {
                if lexicon.lookup(word).is_none() {
                    fallback_chars.extend(word.chars());
                }
            }
        }
        names.extend(fallback_chars.iter().map(|&c| fallback_symbol(c)));

        let inventory = PhonemeInventory::from_names(names);
        let words = lexicon
            .entries
            .iter()
            .map(|(w, phones)| {
                let ids = phones
                    .iter()
                    .map(|p| inventory.id_of(p).expect("lexicon phoneme registered"))
                    .collect();
                (w.clone(), ids)
            })
            .collect();
        Phonemizer {
            words,
            inventory,
            boundary: 0,
        }
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn boundary_id(&self) -> u32 {
        self.boundary
    }

    /// Concatenates word pronunciations with a boundary symbol between
    /// words; OOV words map to per-character grapheme fallback IDs.
    /// Characters never seen at build time are skipped.
    pub fn phonemize(&self, sentence: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, word) in sentence.split_whitespace().enumerate() {
            if i > 0 {
                out.push(self.boundary);
            }
            match self.words.get(word) {
                Some(ids) => out.extend_from_slice(ids),
                None => {
                    for c in word.chars() {
                        if let Some(id) = self.inventory.id_of(&fallback_symbol(c)) {
                            out.push(id);
                        }
                    }
                }
            }
        }
        out
    }
}
