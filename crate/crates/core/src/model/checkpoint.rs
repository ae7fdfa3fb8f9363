//! Named-tensor checkpoint container.
//!
//! Layout: magic `CKPT`, format version, model kind byte, a JSON
//! header (dims, vocabulary, hashes), then named 32-bit little-endian
//! tensors in visit order, then an optional trailing training-state
//! section. Loading verifies every expected tensor name and shape and
//! the vocabulary hashes; any mismatch names the offending field.

use super::rnnlm::{LmConfig, RnnLm};
use super::{Model, ModelConfig, ModelKind};
use crate::augment::Vocab;
use crate::tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"CKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown model kind byte {0}")]
    BadKind(u8),
    #[error("truncated checkpoint at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint field {field}: {detail}")]
    Field { field: String, detail: String },
    #[error("checkpoint header: {0}")]
    Json(serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Mmda,
    Psda,
    RnnLm,
}

impl ContainerKind {
    fn to_byte(self) -> u8 {
        match self {
            ContainerKind::Mmda => 0,
            ContainerKind::Psda => 1,
            ContainerKind::RnnLm => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self, CheckpointError> {
        match b {
            0 => Ok(ContainerKind::Mmda),
            1 => Ok(ContainerKind::Psda),
            2 => Ok(ContainerKind::RnnLm),
            other => Err(CheckpointError::BadKind(other)),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AsrHeader {
    config: ModelConfig,
    vocab: Vec<String>,
    vocab_hash: u64,
    inventory: Vec<String>,
    inventory_hash: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LmHeader {
    config: LmConfig,
    vocab: Vec<String>,
    vocab_hash: u64,
}

// ---- low-level writer/reader --------------------------------------

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    pub fn bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn raw(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn blob(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.raw(v);
    }

    pub fn tensor<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        self.blob(name.as_bytes());
        self.u8(t.rank() as u8);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            self.buf.extend_from_slice(&v.to_f32c().to_le_bytes());
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated { offset: self.pos });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn blob(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    /// Reads one named tensor, checking it against the expected name
    /// and shape.
    pub fn tensor_expect(
        &mut self,
        want_name: &str,
        want_shape: &[usize],
    ) -> Result<Tensor<f32>, CheckpointError> {
        let name_bytes = self.blob()?;
        let name = std::str::from_utf8(name_bytes).map_err(|_| CheckpointError::Field {
            field: want_name.to_string(),
            detail: "tensor name is not UTF-8".into(),
        })?;
        if name != want_name {
            return Err(CheckpointError::Field {
                field: want_name.to_string(),
                detail: format!("expected tensor {want_name:?}, found {name:?}"),
            });
        }
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        if shape != want_shape {
            return Err(CheckpointError::Field {
                field: want_name.to_string(),
                detail: format!("shape mismatch: expected {want_shape:?}, found {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        let raw = self.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::new(shape.clone(), data).map_err(|e| CheckpointError::Field {
            field: want_name.to_string(),
            detail: e.to_string(),
        })
    }
}

// ---- container assembly --------------------------------------------

pub(crate) fn write_preamble(w: &mut Writer, kind: ContainerKind, header_json: &[u8]) {
    w.raw(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(kind.to_byte());
    w.blob(header_json);
}

pub(crate) fn read_preamble<'a>(
    r: &mut Reader<'a>,
) -> Result<(ContainerKind, &'a [u8]), CheckpointError> {
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { offset: 0 });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let kind = ContainerKind::from_byte(r.u8()?)?;
    let header = r.blob()?;
    Ok((kind, header))
}

/// Serializes a model (without any training state) to container bytes.
pub fn model_to_bytes<T: Real>(model: &Model<T>) -> Result<Vec<u8>, CheckpointError> {
    let header = AsrHeader {
        config: model.cfg.clone(),
        vocab: model.vocab.symbols().to_vec(),
        vocab_hash: model.vocab.hash64(),
        inventory: model.inventory.clone(),
        inventory_hash: crate::augment::Vocab::from_symbols(model.inventory.clone()).hash64(),
    };
    let header_json = serde_json::to_vec(&header).map_err(CheckpointError::Json)?;
    let kind = match model.cfg.kind {
        ModelKind::Mmda => ContainerKind::Mmda,
        ModelKind::Psda => ContainerKind::Psda,
    };
    let mut w = Writer::new();
    write_preamble(&mut w, kind, &header_json);
    let params = model.visit();
    w.u32(params.len() as u32);
    for (name, _, t) in params {
        w.tensor(&name, t);
    }
    w.u8(0); // no trailing state section
    Ok(w.bytes())
}

pub fn save_model<T: Real>(path: &Path, model: &Model<T>) -> Result<(), CheckpointError> {
    let bytes = model_to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Parses the model portion of a container, leaving the reader at the
/// trailing-state flag consumed (`has_state` returned).
pub(crate) fn model_from_reader(
    r: &mut Reader<'_>,
) -> Result<(Model<f32>, bool), CheckpointError> {
    let (kind, header_bytes) = read_preamble(r)?;
    let header: AsrHeader = match kind {
        ContainerKind::Mmda | ContainerKind::Psda => {
            serde_json::from_slice(header_bytes).map_err(CheckpointError::Json)?
        }
        ContainerKind::RnnLm => {
            return Err(CheckpointError::Field {
                field: "kind".into(),
                detail: "expected a recognizer checkpoint, found a language model".into(),
            })
        }
    };
    let header_kind = match kind {
        ContainerKind::Mmda => ModelKind::Mmda,
        ContainerKind::Psda => ModelKind::Psda,
        ContainerKind::RnnLm => unreachable!(),
    };
    if header.config.kind != header_kind {
        return Err(CheckpointError::Field {
            field: "kind".into(),
            detail: "kind byte disagrees with header config".into(),
        });
    }
    let vocab = Vocab::from_symbols(header.vocab.clone());
    if vocab.symbols() != header.vocab.as_slice() {
        return Err(CheckpointError::Field {
            field: "vocab".into(),
            detail: "symbol list is not in canonical order".into(),
        });
    }
    if vocab.hash64() != header.vocab_hash {
        return Err(CheckpointError::Field {
            field: "vocab_hash".into(),
            detail: "stored hash does not match the symbol list".into(),
        });
    }
    let inv_hash = Vocab::from_symbols(header.inventory.clone()).hash64();
    if inv_hash != header.inventory_hash {
        return Err(CheckpointError::Field {
            field: "inventory_hash".into(),
            detail: "stored hash does not match the inventory".into(),
        });
    }

    let mut model: Model<f32> = Model::new(header.config, vocab, header.inventory, 0);
    let n = r.u32()? as usize;
    let expected = model
        .visit()
        .into_iter()
        .map(|(name, _, t)| (name, t.shape().to_vec()))
        .collect::<Vec<_>>();
    if n != expected.len() {
        return Err(CheckpointError::Field {
            field: "tensor_count".into(),
            detail: format!("expected {} tensors, found {n}", expected.len()),
        });
    }
    let mut loaded = Vec::with_capacity(n);
    for (name, shape) in &expected {
        loaded.push(r.tensor_expect(name, shape)?);
    }
    for ((_, _, dst), src) in model.visit_mut().into_iter().zip(loaded) {
        dst.data_mut().copy_from_slice(src.data());
    }
    let has_state = r.u8()? != 0;
    Ok((model, has_state))
}

/// Loads a model checkpoint saved by [`save_model`] (or the model part
/// of a training checkpoint).
pub fn load_model(path: &Path) -> Result<Model<f32>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let (model, has_state) = model_from_reader(&mut r)?;
    if !has_state && r.remaining() > 0 {
        return Err(CheckpointError::Field {
            field: "trailer".into(),
            detail: format!("{} unexpected trailing bytes", r.remaining()),
        });
    }
    Ok(model)
}

pub fn lm_to_bytes<T: Real>(lm: &RnnLm<T>) -> Result<Vec<u8>, CheckpointError> {
    let header = LmHeader {
        config: lm.cfg.clone(),
        vocab: lm.vocab.symbols().to_vec(),
        vocab_hash: lm.vocab.hash64(),
    };
    let header_json = serde_json::to_vec(&header).map_err(CheckpointError::Json)?;
    let mut w = Writer::new();
    write_preamble(&mut w, ContainerKind::RnnLm, &header_json);
    let params = lm.visit();
    w.u32(params.len() as u32);
    for (name, t) in params {
        w.tensor(&name, t);
    }
    w.u8(0);
    Ok(w.bytes())
}

pub fn save_rnnlm<T: Real>(path: &Path, lm: &RnnLm<T>) -> Result<(), CheckpointError> {
    std::fs::write(path, lm_to_bytes(lm)?)?;
    Ok(())
}

pub fn load_rnnlm(path: &Path) -> Result<RnnLm<f32>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let (kind, header_bytes) = read_preamble(&mut r)?;
    if kind != ContainerKind::RnnLm {
        return Err(CheckpointError::Field {
            field: "kind".into(),
            detail: "expected a language-model checkpoint".into(),
        });
    }
    let header: LmHeader = serde_json::from_slice(header_bytes).map_err(CheckpointError::Json)?;
    let vocab = Vocab::from_symbols(header.vocab.clone());
    if vocab.hash64() != header.vocab_hash {
        return Err(CheckpointError::Field {
            field: "vocab_hash".into(),
            detail: "stored hash does not match the symbol list".into(),
        });
    }
    let mut lm: RnnLm<f32> = RnnLm::new(header.config, vocab, 0);
    let n = r.u32()? as usize;
    let expected: Vec<(String, Vec<usize>)> = lm
        .visit()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec()))
        .collect();
    if n != expected.len() {
        return Err(CheckpointError::Field {
            field: "tensor_count".into(),
            detail: format!("expected {} tensors, found {n}", expected.len()),
        });
    }
    let mut loaded = Vec::with_capacity(n);
    for (name, shape) in &expected {
        loaded.push(r.tensor_expect(name, shape)?);
    }
    for ((_, dst), src) in lm.visit_mut().into_iter().zip(loaded) {
        dst.data_mut().copy_from_slice(src.data());
    }
    let _has_state = r.u8()?;
    Ok(lm)
}
