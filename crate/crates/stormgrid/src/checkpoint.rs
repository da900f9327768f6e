//! Checkpoint file: a JSON manifest (model config, normalizer, grid,
//! tensor names/shapes, training metadata) followed by the raw
//! little-endian f64 parameter arrays in manifest order, sealed with a
//! checksum so a corrupted file never half-loads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Normalizer;
use crate::geo::GridSpec;
use crate::model::{ModelConfig, ModelParams};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"CGCK";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint checksum mismatch: file is corrupted or truncated")]
    ChecksumMismatch,
    #[error("checkpoint does not match its declared config: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Deterministic training provenance; wall-clock times stay in the training
/// log so two identical runs produce byte-identical checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_train_mse: f64,
    pub train_seed: u64,
    pub split_seed: u64,
    pub train_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub normalizer: Normalizer,
    pub grid: GridSpec,
    pub meta: TrainingMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u16,
    model: ModelConfig,
    normalizer: Normalizer,
    grid: GridSpec,
    tensors: Vec<TensorEntry>,
    meta: TrainingMeta,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Tensor names and shapes a config implies, in `named_tensors` order.
fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = config.d_model;
    let f = config.ffn_hidden;
    let mut out = vec![
        ("input_proj".to_string(), (config.in_features, d)),
        ("input_bias".to_string(), (1, d)),
        ("positional".to_string(), (config.seq_len, d)),
    ];
    for i in 0..config.n_layers {
        for name in ["w_q", "w_k", "w_v", "w_o"] {
            out.push((format!("layer{i}.{name}"), (d, d)));
        }
        out.push((format!("layer{i}.ffn_w1"), (d, f)));
        out.push((format!("layer{i}.ffn_b1"), (1, f)));
        out.push((format!("layer{i}.ffn_w2"), (f, d)));
        out.push((format!("layer{i}.ffn_b2"), (1, d)));
        for name in ["norm1_gain", "norm1_bias", "norm2_gain", "norm2_bias"] {
            out.push((format!("layer{i}.{name}"), (1, d)));
        }
    }
    out.push(("head_w1".to_string(), (d, config.head_hidden)));
    out.push(("head_b1".to_string(), (1, config.head_hidden)));
    out.push(("head_w2".to_string(), (config.head_hidden, 1)));
    out.push(("head_b2".to_string(), (1, 1)));
    out
}

fn rebuild_params(
    config: &ModelConfig,
    tensors: Vec<(String, Tensor)>,
) -> Result<ModelParams, CheckpointError> {
    let expected = expected_shapes(config);
    if tensors.len() != expected.len() {
        return Err(CheckpointError::ConfigMismatch(format!(
            "{} tensors in file, config implies {}",
            tensors.len(),
            expected.len()
        )));
    }
    for ((name, t), (want_name, want_shape)) in tensors.iter().zip(&expected) {
        if name != want_name {
            return Err(CheckpointError::ConfigMismatch(format!(
                "tensor {name:?} where {want_name:?} was expected"
            )));
        }
        if t.shape() != *want_shape {
            return Err(CheckpointError::ConfigMismatch(format!(
                "tensor {name} is {:?}, config implies {:?}",
                t.shape(),
                want_shape
            )));
        }
    }
    let mut iter = tensors.into_iter().map(|(_, t)| t);
    let mut next = || iter.next().expect("length checked above");
    let input_proj = next();
    let input_bias = next();
    let positional = next();
    let layers = (0..config.n_layers)
        .map(|_| crate::model::LayerParams {
            w_q: next(),
            w_k: next(),
            w_v: next(),
            w_o: next(),
            ffn_w1: next(),
            ffn_b1: next(),
            ffn_w2: next(),
            ffn_b2: next(),
            norm1_gain: next(),
            norm1_bias: next(),
            norm2_gain: next(),
            norm2_bias: next(),
        })
        .collect();
    Ok(ModelParams {
        input_proj,
        input_bias,
        positional,
        layers,
        head_w1: next(),
        head_b1: next(),
        head_w2: next(),
        head_b2: next(),
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &std::path::Path) -> Result<(), CheckpointError> {
    let named = ckpt.params.named_tensors();
    let manifest = Manifest {
        version: VERSION,
        model: ckpt.config.clone(),
        normalizer: ckpt.normalizer.clone(),
        grid: ckpt.grid.clone(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        meta: ckpt.meta.clone(),
    };
    let manifest_json = serde_json::to_vec(&manifest)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&manifest_json);
    for (_, t) in &named {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint, CheckpointError> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 2 + 4 + 8 {
        return Err(CheckpointError::Format("file too short".into()));
    }
    let (body, tail) = buf.split_at(buf.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a(body) != stored {
        return Err(CheckpointError::ChecksumMismatch);
    }
    if &body[..4] != MAGIC {
        return Err(CheckpointError::Format("bad magic bytes".into()));
    }
    let version = u16::from_le_bytes(body[4..6].try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let manifest_len = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
    if body.len() < 10 + manifest_len {
        return Err(CheckpointError::Format("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&body[10..10 + manifest_len])?;
    let mut offset = 10 + manifest_len;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let n = entry.rows * entry.cols;
        let end = offset + n * 8;
        if end > body.len() {
            return Err(CheckpointError::Format(format!(
                "truncated payload at tensor {}",
                entry.name
            )));
        }
        let data: Vec<f64> = body[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::from_vec(entry.rows, entry.cols, data)
            .map_err(|e| CheckpointError::Format(format!("tensor {}: {e}", entry.name)))?;
        tensors.push((entry.name.clone(), tensor));
        offset = end;
    }
    if offset != body.len() {
        return Err(CheckpointError::Format(format!(
            "{} trailing payload bytes",
            body.len() - offset
        )));
    }
    let params = rebuild_params(&manifest.model, tensors)?;
    Ok(Checkpoint {
        config: manifest.model,
        params,
        normalizer: manifest.normalizer,
        grid: manifest.grid,
        meta: manifest.meta,
    })
}
