//! Output symbol vocabulary with reserved sentinels and stable IDs.

use std::collections::{BTreeSet, HashMap};

pub const PAD_ID: u32 = 0;
pub const SOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Character vocabulary. IDs 0..=3 are the reserved sentinels; the
/// remaining symbols are sorted by code point, so a vocabulary is a
/// pure function of its symbol set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_symbols<I, S>(symbols: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = symbols
            .into_iter()
            .map(Into::into)
            .filter(|s| !RESERVED.contains(&s.as_str()))
            .collect();
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(set);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocab {
            symbols: all,
            index,
        }
    }

    /// Vocabulary over every character occurring in `texts`.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Vocab {
        let mut chars = BTreeSet::new();
        for t in texts {
            chars.extend(t.chars());
        }
        Vocab::from_symbols(chars.into_iter().map(|c| c.to_string()))
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id_of(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(|s| s.as_str())
    }

    /// Encodes text as `<sos> c1 .. cn <eos>`, mapping unknown
    /// characters to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = vec![SOS_ID];
        for c in text.chars() {
            out.push(self.id_of(&c.to_string()).unwrap_or(UNK_ID));
        }
        out.push(EOS_ID);
        out
    }

    /// Renders token IDs back to text, skipping the sentinels.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id > UNK_ID {
                if let Some(s) = self.symbol(id) {
                    out.push_str(s);
                }
            } else if id == UNK_ID {
                out.push('\u{FFFD}');
            }
        }
        out
    }

    /// FNV-1a over the symbol list; stored in checkpoints so a model
    /// and a fused language model can be checked for the same ID
    /// assignment.
    pub fn hash64(&self) -> u64 {
        fnv1a(self.symbols.iter().map(|s| s.as_str()))
    }
}

pub(crate) fn fnv1a<'a, I: IntoIterator<Item = &'a str>>(items: I) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for s in items {
        for b in s.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x1e; // record separator
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Set union of the input vocabularies' symbols; reserved IDs first,
/// the rest sorted by code point for stable assignment.
pub fn merge_vocabularies(vocabs: &[Vocab]) -> Vocab {
    let mut set = BTreeSet::new();
    for v in vocabs {
        for s in v.symbols().iter().skip(RESERVED.len()) {
            set.insert(s.clone());
        }
    }
    Vocab::from_symbols(set)
}
