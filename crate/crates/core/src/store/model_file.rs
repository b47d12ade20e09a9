//! Full-precision model files.
//!
//! The payload is the concatenation of all tensors as row-major f64. The
//! manifest lists each tensor with its byte offset and an FNV-1a checksum
//! of its bytes. Layer tensors are named by layer id; the tied embedding
//! is `embed`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    f64s_from_bytes, f64s_to_bytes, fnv1a64, read_container, read_file, write_container, write_file,
};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{parse_layer_id, Block, Model, ModelConfig};
use crate::transformer::{Activation, AttentionLayerWeights, FeedForwardWeights};

pub const MODEL_MAGIC: &[u8; 8] = b"TQMODEL\0";
pub const MODEL_VERSION: u32 = 1;
pub const EMBED_TENSOR: &str = "embed";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// One of `wq wk wv wo ffn1 ffn2 embed`.
    pub role: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
    pub checksum: u64,
}

impl TensorEntry {
    pub fn byte_len(&self) -> u64 {
        (self.rows * self.cols * 8) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub activation: Activation,
    pub tensors: Vec<TensorEntry>,
}

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    model.validate()?;
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, role: &str, m: &DenseMatrix| {
        let start = payload.len();
        f64s_to_bytes(m.data(), &mut payload);
        tensors.push(TensorEntry {
            name,
            role: role.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            offset: start as u64,
            checksum: fnv1a64(&payload[start..]),
        });
    };
    push(EMBED_TENSOR.to_string(), EMBED_TENSOR, &model.embed);
    for layer in model.layers() {
        let w = model.weight(layer.block, layer.role)?;
        push(layer.id, layer.role.as_str(), w);
    }
    let manifest = ModelManifest {
        format_version: MODEL_VERSION,
        config: model.config,
        activation: model.blocks[0].ffn.activation,
        tensors,
    };
    write_container(MODEL_MAGIC, MODEL_VERSION, &manifest, &payload)
}

/// Checksum of the whole serialized model.
pub fn model_checksum(model: &Model) -> Result<u64> {
    Ok(fnv1a64(&model_to_bytes(model)?))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let (manifest, payload): (ModelManifest, _) =
        read_container(bytes, MODEL_MAGIC, MODEL_VERSION)?;
    if manifest.format_version != MODEL_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: MODEL_VERSION,
        });
    }
    let config = manifest.config;
    config.validate()?;

    let mut spans: Vec<(u64, u64)> = Vec::new();
    let mut embed = None;
    let mut weights: Vec<Vec<Option<DenseMatrix>>> = vec![vec![None; 6]; config.blocks];
    for t in &manifest.tensors {
        let end = t.offset.checked_add(t.byte_len());
        let region = end
            .filter(|&e| e <= payload.len() as u64)
            .map(|e| &payload[t.offset as usize..e as usize])
            .ok_or_else(|| Error::Checksum(t.name.clone()))?;
        if fnv1a64(region) != t.checksum {
            return Err(Error::Checksum(t.name.clone()));
        }
        let (lo, hi) = (t.offset, t.offset + t.byte_len());
        if spans.iter().any(|&(a, b)| lo < b && a < hi) {
            return Err(Error::Format(format!(
                "tensor '{}' overlaps another",
                t.name
            )));
        }
        spans.push((lo, hi));
        let m = DenseMatrix::new(t.rows, t.cols, f64s_from_bytes(region))?;
        if t.name == EMBED_TENSOR {
            embed = Some(m);
            continue;
        }
        let (block, role) = parse_layer_id(&t.name)?;
        if role.as_str() != t.role {
            return Err(Error::Format(format!(
                "tensor '{}' has role '{}'",
                t.name, t.role
            )));
        }
        let slot = weights.get_mut(block).ok_or_else(|| {
            Error::shape(
                "load_model",
                format!("tensor '{}' beyond block count", t.name),
            )
        })?;
        slot[role as usize] = Some(m);
    }

    let embed = embed.ok_or_else(|| Error::MissingLayer(EMBED_TENSOR.into()))?;
    let mut blocks = Vec::with_capacity(config.blocks);
    for (b, mut w) in weights.into_iter().enumerate() {
        let mut take = |i: usize| {
            w[i].take().ok_or_else(|| {
                Error::MissingLayer(crate::model::layer_id(b, crate::model::LayerRole::ALL[i]))
            })
        };
        let attn =
            AttentionLayerWeights::new(take(0)?, take(1)?, take(2)?, take(3)?, config.heads)?;
        let ffn = FeedForwardWeights::new(take(4)?, take(5)?, manifest.activation)?;
        blocks.push(Block { attn, ffn });
    }
    Model::new(config, embed, blocks)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_file(path, &model_to_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_bytes(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
}
