//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `"UFND"` | version u32 | header length u32 | JSON header | f32 payload | CRC-32 u32.
//! The header holds run metadata and a tensor directory (name, dtype, shape,
//! byte offset into the payload). The CRC covers every byte before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::HeadConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::numerics::rng::RngState;
use crate::numerics::Tensor;

use super::{EpochRecord, TrainConfig};

pub const MAGIC: &[u8; 4] = b"UFND";
pub const FORMAT_VERSION: u32 = 1;

/// Whether the model tensors are the in-progress state or the best-validation state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Resume,
    Best,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    pub vocab_fingerprint: Option<String>,
    pub epochs_completed: usize,
    pub best_epoch: Option<usize>,
    pub best_val: Option<Metrics>,
    pub adam_t: u64,
    pub best_adam_t: Option<u64>,
    pub dropout_rng: RngState,
    /// Per-epoch records with wall-clock times zeroed.
    pub records: Vec<EpochRecord>,
}

/// Metadata plus named f32 tensors: model parameters and buffers under their
/// own names, optimizer moments under `adam.m/` and `adam.v/`, and the best
/// snapshot under `best/`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(integrity(format!("file too short ({} bytes)", bytes.len())));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(integrity("checksum mismatch"));
        }
        if &body[..4] != MAGIC {
            return Err(integrity("bad magic bytes"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let header_bytes = body
            .get(12..12 + header_len)
            .ok_or_else(|| integrity("header length exceeds file"))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| integrity(format!("unreadable header: {e}")))?;
        let payload = &body[12 + header_len..];
        let mut tensors = BTreeMap::new();
        let mut expected_end = 0usize;
        for e in header.tensors {
            if e.dtype != "f32" {
                return Err(integrity(format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            if start != expected_end || end > payload.len() {
                return Err(integrity(format!("tensor {} lies outside the payload", e.name)));
            }
            expected_end = end;
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(e.name, Tensor::from_vec(&e.shape, data)?);
        }
        if expected_end != payload.len() {
            return Err(integrity("trailing bytes after the last tensor"));
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
