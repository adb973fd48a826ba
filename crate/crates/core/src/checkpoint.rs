//! Checkpoint files.
//!
//! Layout (little-endian): magic `EGCK`, version `u32`, then six sections,
//! each `len u64 | payload | crc32(len ++ payload) u32`:
//! JSON metadata, current params, best params, Adagrad accumulators,
//! history (`train_mse, val_mse` pairs), RNG state. Numeric payloads are
//! `f64`; `len` counts elements for those and bytes otherwise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelParams;
use crate::optim::OptimizerState;
use crate::train::{Checkpoint, EpochRecord, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("corrupt checkpoint: {0}")]
    CorruptPayload(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Meta {
    input_dim: usize,
    hidden_dim: usize,
    epoch: usize,
    stopped_early: bool,
    lr: f64,
    epsilon: f64,
    config: TrainConfig,
}

fn push_section(out: &mut Vec<u8>, len: u64, payload: &[u8]) {
    let start = out.len();
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let meta = Meta {
        input_dim: ck.params.input_dim(),
        hidden_dim: ck.params.hidden_dim(),
        epoch: ck.epoch,
        stopped_early: ck.stopped_early,
        lr: ck.optimizer.lr,
        epsilon: ck.optimizer.epsilon,
        config: ck.config.clone(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    push_section(&mut out, json.len() as u64, &json);
    for p in [&ck.params, &ck.best_params, &ck.optimizer.accumulators] {
        push_section(&mut out, p.len() as u64, &f64_bytes(p.as_slice()));
    }
    let hist: Vec<f64> = ck.history.iter().flat_map(|r| [r.train_mse, r.val_mse]).collect();
    push_section(&mut out, ck.history.len() as u64, &f64_bytes(&hist));
    push_section(&mut out, ck.rng_state.len() as u64, &ck.rng_state);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::CorruptPayload(format!("truncated in {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    /// Returns `(len, payload)` after checking the CRC.
    fn section(&mut self, what: &str, elem_size: usize) -> Result<(usize, &'a [u8]), CheckpointError> {
        let start = self.pos;
        let len = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        let bytes = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_mul(elem_size))
            .ok_or_else(|| CheckpointError::CorruptPayload(format!("bad length in {what}")))?;
        let payload = self.take(bytes, what)?;
        let covered = &self.bytes[start..self.pos];
        let crc = u32::from_le_bytes(self.take(4, what)?.try_into().unwrap());
        if crc32fast::hash(covered) != crc {
            return Err(CheckpointError::CorruptPayload(format!("checksum mismatch in {what}")));
        }
        Ok((len as usize, payload))
    }

    fn f64s(&mut self, what: &str) -> Result<Vec<f64>, CheckpointError> {
        let (_, payload) = self.section(what, 8)?;
        Ok(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = u32::from_le_bytes(r.take(4, "header")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    let (_, json) = r.section("metadata", 1)?;
    let meta: Meta = serde_json::from_slice(json).map_err(|e| CheckpointError::CorruptPayload(format!("metadata: {e}")))?;
    let shape_err = |e: crate::model::ModelError| CheckpointError::CorruptPayload(e.to_string());
    let params = ModelParams::from_vec(meta.input_dim, meta.hidden_dim, r.f64s("params")?).map_err(shape_err)?;
    let best_params = ModelParams::from_vec(meta.input_dim, meta.hidden_dim, r.f64s("best params")?).map_err(shape_err)?;
    let accumulators = ModelParams::from_vec(meta.input_dim, meta.hidden_dim, r.f64s("accumulators")?).map_err(shape_err)?;
    let (count, payload) = r.section("history", 16)?;
    let history = (0..count)
        .map(|i| EpochRecord {
            train_mse: f64::from_le_bytes(payload[i * 16..i * 16 + 8].try_into().unwrap()),
            val_mse: f64::from_le_bytes(payload[i * 16 + 8..i * 16 + 16].try_into().unwrap()),
        })
        .collect();
    let (_, rng) = r.section("rng state", 1)?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::CorruptPayload("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params,
        best_params,
        optimizer: OptimizerState { accumulators, lr: meta.lr, epsilon: meta.epsilon },
        epoch: meta.epoch,
        history,
        config: meta.config,
        rng_state: rng.to_vec(),
        stopped_early: meta.stopped_early,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}
