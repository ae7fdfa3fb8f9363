//! Training checkpoints: the model container plus a trailing state
//! section holding the config, loop state, and optimizer moments, so
//! a resumed run reproduces the uninterrupted one bit for bit.

use super::optim::AdamSlot;
use super::trainer::{LoopState, Trainer};
use super::{TrainConfig, TrainData, TrainError};
use crate::model::checkpoint::{
    model_from_reader, model_to_bytes, CheckpointError, Reader, Writer,
};
use crate::model::Model;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct StateHeader {
    config: TrainConfig,
    state: LoopState,
    /// (parameter name, update count) for every parameter holding
    /// optimizer moments, in visit order.
    adam: Vec<(String, u64)>,
}

pub fn save_training(path: &Path, trainer: &Trainer<'_>) -> Result<(), TrainError> {
    let model_bytes = model_to_bytes(&trainer.model)?;
    // the model container ends with a zero state flag; rewrite it
    let mut bytes = model_bytes;
    *bytes.last_mut().expect("container is nonempty") = 1;

    let names: Vec<String> = trainer
        .model
        .visit()
        .into_iter()
        .map(|(n, _, _)| n)
        .collect();
    let mut adam = Vec::new();
    let mut moment_tensors: Vec<(String, &AdamSlot)> = Vec::new();
    for (name, slot) in names.iter().zip(trainer.opt.slots()) {
        if let Some(slot) = slot {
            adam.push((name.clone(), slot.t));
            moment_tensors.push((name.clone(), slot));
        }
    }
    let header = StateHeader {
        config: trainer.cfg.clone(),
        state: trainer.loop_state(),
        adam,
    };
    let header_json = serde_json::to_vec(&header).map_err(CheckpointError::Json)?;

    let mut w = Writer::new();
    w.blob(&header_json);
    w.u32(moment_tensors.len() as u32);
    for (name, slot) in moment_tensors {
        w.tensor(&format!("adam.m.{name}"), &slot.m);
        w.tensor(&format!("adam.v.{name}"), &slot.v);
    }
    bytes.extend_from_slice(&w.bytes());
    std::fs::write(path, bytes).map_err(CheckpointError::Io)?;
    Ok(())
}

pub struct LoadedTraining {
    pub model: Model<f32>,
    pub config: TrainConfig,
    pub state: LoopState,
    pub adam_slots: Vec<(String, AdamSlot)>,
}

pub fn load_training(path: &Path) -> Result<LoadedTraining, TrainError> {
    let bytes = std::fs::read(path).map_err(CheckpointError::Io)?;
    let mut r = Reader::new(&bytes);
    let (model, has_state) = model_from_reader(&mut r)?;
    if !has_state {
        return Err(TrainError::ResumeMismatch(
            "checkpoint carries no training state".into(),
        ));
    }
    let header_bytes = r.blob()?;
    let header: StateHeader =
        serde_json::from_slice(header_bytes).map_err(CheckpointError::Json)?;
    let n = r.u32()? as usize;
    if n != header.adam.len() {
        return Err(CheckpointError::Field {
            field: "adam".into(),
            detail: format!(
                "moment tensor count {n} disagrees with header ({})",
                header.adam.len()
            ),
        }
        .into());
    }
    let shapes: std::collections::HashMap<String, Vec<usize>> = model
        .visit()
        .into_iter()
        .map(|(name, _, t)| (name, t.shape().to_vec()))
        .collect();
    let mut adam_slots = Vec::with_capacity(n);
    for (name, t) in &header.adam {
        let shape = shapes.get(name).ok_or_else(|| CheckpointError::Field {
            field: name.clone(),
            detail: "moment tensor for unknown parameter".into(),
        })?;
        let m = r.tensor_expect(&format!("adam.m.{name}"), shape)?;
        let v = r.tensor_expect(&format!("adam.v.{name}"), shape)?;
        adam_slots.push((name.clone(), AdamSlot { m, v, t: *t }));
    }
    if r.remaining() > 0 {
        return Err(CheckpointError::Field {
            field: "trailer".into(),
            detail: format!("{} unexpected trailing bytes", r.remaining()),
        }
        .into());
    }
    Ok(LoadedTraining {
        model,
        config: header.config,
        state: header.state,
        adam_slots,
    })
}

/// Rebuilds a trainer from a checkpoint; the data must be the corpus
/// the run was started with.
pub fn resume<'d>(path: &Path, data: &'d TrainData) -> Result<Trainer<'d>, TrainError> {
    let loaded = load_training(path)?;
    if loaded.model.vocab.hash64() != data.vocab.hash64() {
        return Err(TrainError::ResumeMismatch(
            "vocabulary hash differs from the checkpoint".into(),
        ));
    }
    let names: Vec<String> = loaded
        .model
        .visit()
        .into_iter()
        .map(|(n, _, _)| n)
        .collect();
    let mut trainer = Trainer::new(loaded.model, data, loaded.config)?;
    trainer.restore_loop_state(&loaded.state)?;
    for (name, slot) in loaded.adam_slots {
        let idx = names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| TrainError::ResumeMismatch(format!("unknown parameter {name}")))?;
        trainer.opt.set_slot(idx, slot);
    }
    Ok(trainer)
}
