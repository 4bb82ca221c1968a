//! Checkpoint container.
//!
//! ```text
//! magic     8 bytes  "LGCCKPT1"
//! version   u32
//! digest    32 bytes SHA-256 of the metadata JSON
//! meta_len  u64, then meta_len bytes of JSON (train config, model config,
//!           scaler, history, epoch)
//! count     u64 tensors, each:
//!   name_len u32, name (UTF-8), rank u32, rank × u64 dims, f64 values
//! ```
//! Little-endian throughout. The graph's adjacency is stored as the tensor
//! `graph.adjacency`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::RoadGraph;
use crate::io::{put_f64s, write_atomic, Reader};
use crate::model::{LocGcLstmModel, ModelConfig, Scaler};
use crate::numerics::{seeded_rng, ParameterSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LGCCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const ADJACENCY: &str = "graph.adjacency";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub model: LocGcLstmModel,
    pub history: Vec<EpochRecord>,
    /// Number of completed epochs when the parameters were captured.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    train_config: TrainConfig,
    model_config: ModelConfig,
    scaler: Scaler,
    history: Vec<EpochRecord>,
    epoch: usize,
}

impl Checkpoint {
    pub fn capture(model: &LocGcLstmModel, cfg: &TrainConfig, history: &[EpochRecord]) -> Self {
        let mut model = model.clone();
        model.params.zero_grads();
        Checkpoint {
            train_config: cfg.clone(),
            model,
            history: history.to_vec(),
            epoch: history.len(),
        }
    }

    fn meta_json(&self) -> Vec<u8> {
        let meta = Meta {
            train_config: self.train_config.clone(),
            model_config: self.model.config.clone(),
            scaler: self.model.scaler.clone(),
            history: self.history.clone(),
            epoch: self.epoch,
        };
        serde_json::to_vec(&meta).expect("checkpoint metadata serializes")
    }

    pub fn config_digest(&self) -> String {
        hex::encode(Sha256::digest(self.meta_json()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = self.meta_json();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&meta));
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let adjacency = self.model.graph.adjacency();
        let tensors: Vec<(&str, &Tensor)> = self
            .model
            .params
            .iter()
            .map(|(name, p)| (name, &p.value))
            .chain(std::iter::once((ADJACENCY, &adjacency)))
            .collect();
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(r.error("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(format!("unsupported checkpoint version {version}")));
        }
        let digest = r.take(32)?;
        let meta_len = r.u64()? as usize;
        let meta_bytes = r.take(meta_len)?;
        if Sha256::digest(meta_bytes).as_slice() != digest {
            return Err(r.error("metadata digest mismatch".into()));
        }
        let meta: Meta =
            serde_json::from_slice(meta_bytes).map_err(|e| r.error(format!("bad metadata: {e}")))?;
        let count = r.u64()? as usize;
        let mut params = ParameterSet::new();
        let mut adjacency = None;
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.error("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| r.error(format!("tensor `{name}` is too large")))?;
            let t = Tensor::new(shape, r.f64s(len)?)?;
            if name == ADJACENCY {
                adjacency = Some(t);
            } else {
                params.insert(name, t);
            }
        }
        r.finish()?;
        let adjacency = adjacency.ok_or_else(|| r.error("missing graph adjacency".into()))?;
        let n = adjacency.rows();
        let rows: Vec<Vec<u8>> = (0..n).map(|i| adjacency.row(i).iter().map(|&v| v as u8).collect()).collect();
        let graph = RoadGraph::from_matrix(&rows)?;

        // A freshly built model fixes the expected inventory.
        let template = LocGcLstmModel::new(meta.model_config.clone(), graph.clone(), meta.scaler.clone(), &mut seeded_rng(0))?;
        let expected: Vec<(&str, &[usize])> = template.params.iter().map(|(k, p)| (k, p.value.shape())).collect();
        let found: Vec<(&str, &[usize])> = params.iter().map(|(k, p)| (k, p.value.shape())).collect();
        if expected != found {
            return Err(r.error("parameter inventory does not match the model config".into()));
        }
        Ok(Checkpoint {
            train_config: meta.train_config,
            model: LocGcLstmModel {
                params,
                ..template
            },
            history: meta.history,
            epoch: meta.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}
