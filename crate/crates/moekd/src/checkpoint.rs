//! Named-tensor checkpoint container.
//!
//! Layout: the 8-byte magic `MOEKDCK1`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as little-endian `f32` in
//! manifest order.

use std::fs;
use std::path::Path;

use moekd_core::model::ParamGroup;
use moekd_core::{Mllm, ModelConfig, MoeConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MOEKDCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub moe: Option<MoeConfig>,
    pub tensors: Vec<TensorEntry>,
}

pub fn manifest(model: &Mllm<f32>) -> Manifest {
    Manifest {
        config: model.config,
        moe: model.moe_config(),
        tensors: model
            .params()
            .into_iter()
            .map(|p| TensorEntry {
                name: p.name,
                shape: p.tensor.shape().to_vec(),
                group: p.group,
            })
            .collect(),
    }
}

pub fn to_bytes(model: &Mllm<f32>) -> Vec<u8> {
    let json = serde_json::to_vec(&manifest(model)).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mllm<f32>> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
    let man: Manifest = serde_json::from_slice(body).map_err(|e| bad(format!("manifest: {e}")))?;
    let mut model = Mllm::<f32>::skeleton(man.config, man.moe)?;
    let mut blob = &bytes[16 + len..];
    {
        let params = model.params_mut();
        if params.len() != man.tensors.len() {
            return Err(bad(format!(
                "manifest lists {} tensors, config implies {}",
                man.tensors.len(),
                params.len()
            )));
        }
        for (p, entry) in params.into_iter().zip(&man.tensors) {
            if p.name != entry.name || p.tensor.shape() != entry.shape.as_slice() || p.group != entry.group {
                return Err(bad(format!("tensor {} does not match the model layout", entry.name)));
            }
            let n = p.tensor.numel();
            if blob.len() < 4 * n {
                return Err(bad(format!("blob ends inside {}", entry.name)));
            }
            for (dst, chunk) in p.tensor.data_mut().iter_mut().zip(blob[..4 * n].chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            blob = &blob[4 * n..];
        }
    }
    if !blob.is_empty() {
        return Err(bad(format!("{} trailing bytes", blob.len())));
    }
    Ok(model)
}

pub fn save(model: &Mllm<f32>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Mllm<f32>> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Hex SHA-256 of the serialized checkpoint.
pub fn hash(model: &Mllm<f32>) -> String {
    hex::encode(Sha256::digest(to_bytes(model)))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).map_err(|e| Error::io(path, e))?)))
}
