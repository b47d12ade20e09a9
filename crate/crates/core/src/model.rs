//! Toy pre-norm transformer built from the attention and feed-forward blocks.
//!
//! ```text
//! h ← h + Attn(norm(h))
//! h ← h + FFN(norm(h))
//! logits = norm(h) · Eᵀ / √d_model
//! ```
//!
//! `norm` is a parameter-free RMS normalization and `E` is the token
//! embedding table, tied to the output head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gptq::QuantizedLayer;
use crate::gradients::WeightFamily;
use crate::linalg::{matmul, matmul_nt, DenseMatrix};
use crate::transformer::{
    attention_intermediates, AttentionLayerWeights, AttentionShape, FeedForwardWeights,
};

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub vocab: usize,
    /// Tokens per calibration segment and per evaluation sequence.
    pub seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            d_ff: 64,
            blocks: 4,
            vocab: 64,
            seq_len: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.attention_shape()?;
        if self.d_ff == 0 || self.blocks == 0 {
            return Err(Error::shape(
                "ModelConfig",
                "d_ff and blocks must be positive",
            ));
        }
        if self.vocab < 2 {
            return Err(Error::shape(
                "ModelConfig",
                "vocabulary needs at least 2 tokens",
            ));
        }
        Ok(())
    }

    pub fn attention_shape(&self) -> Result<AttentionShape> {
        AttentionShape::new(self.seq_len, self.d_model, self.heads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    Wq,
    Wk,
    Wv,
    Wo,
    Ffn1,
    Ffn2,
}

impl LayerRole {
    pub const ALL: [LayerRole; 6] = [
        LayerRole::Wq,
        LayerRole::Wk,
        LayerRole::Wv,
        LayerRole::Wo,
        LayerRole::Ffn1,
        LayerRole::Ffn2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerRole::Wq => "wq",
            LayerRole::Wk => "wk",
            LayerRole::Wv => "wv",
            LayerRole::Wo => "wo",
            LayerRole::Ffn1 => "ffn1",
            LayerRole::Ffn2 => "ffn2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    pub fn family(self) -> Option<WeightFamily> {
        match self {
            LayerRole::Wq => Some(WeightFamily::Query),
            LayerRole::Wk => Some(WeightFamily::Key),
            LayerRole::Wv => Some(WeightFamily::Value),
            LayerRole::Wo => Some(WeightFamily::Output),
            LayerRole::Ffn1 | LayerRole::Ffn2 => None,
        }
    }
}

impl std::fmt::Display for LayerRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `blocks.03.wq`. Zero padding keeps lexicographic order equal to model order.
pub fn layer_id(block: usize, role: LayerRole) -> String {
    format!("blocks.{block:02}.{role}")
}

pub fn parse_layer_id(id: &str) -> Result<(usize, LayerRole)> {
    let bad = || Error::Format(format!("bad layer id '{id}'"));
    let rest = id.strip_prefix("blocks.").ok_or_else(bad)?;
    let (block, role) = rest.split_once('.').ok_or_else(bad)?;
    let block = block.parse().map_err(|_| bad())?;
    let role = LayerRole::parse(role).ok_or_else(bad)?;
    Ok((block, role))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn: AttentionLayerWeights,
    pub ffn: FeedForwardWeights,
}

impl Block {
    pub fn weight(&self, role: LayerRole) -> &DenseMatrix {
        match role {
            LayerRole::Ffn1 => &self.ffn.w1,
            LayerRole::Ffn2 => &self.ffn.w2,
            _ => role.family().expect("attention role").weight(&self.attn),
        }
    }

    pub fn weight_mut(&mut self, role: LayerRole) -> &mut DenseMatrix {
        match role {
            LayerRole::Ffn1 => &mut self.ffn.w1,
            LayerRole::Ffn2 => &mut self.ffn.w2,
            _ => role
                .family()
                .expect("attention role")
                .weight_mut(&mut self.attn),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRef {
    pub id: String,
    pub block: usize,
    pub role: LayerRole,
    /// Input features.
    pub rows: usize,
    /// Output features.
    pub cols: usize,
}

impl LayerRef {
    pub fn param_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Per-block activations of one segment under the full-precision model.
#[derive(Debug, Clone)]
pub struct BlockActivations {
    /// Residual stream entering the block.
    pub input: DenseMatrix,
    /// Normalized input of the attention sublayer.
    pub attn_in: DenseMatrix,
    /// Concatenated head outputs, the input of `wo`.
    pub concat: DenseMatrix,
    /// Normalized input of the feed-forward sublayer.
    pub ffn_in: DenseMatrix,
    /// Activated hidden layer, the input of `ffn2`.
    pub hidden: DenseMatrix,
    /// Residual stream leaving the block.
    pub output: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// `vocab x d_model`.
    pub embed: DenseMatrix,
    pub blocks: Vec<Block>,
}

/// Row-wise RMS normalization without a gain.
pub fn rms_norm(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    let d = x.cols() as f64;
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

impl Model {
    pub fn new(config: ModelConfig, embed: DenseMatrix, blocks: Vec<Block>) -> Result<Self> {
        let model = Self {
            config,
            embed,
            blocks,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.embed.shape() != (c.vocab, c.d_model) {
            return Err(Error::shape(
                "Model",
                "embedding table does not match config",
            ));
        }
        if self.blocks.len() != c.blocks {
            return Err(Error::shape(
                "Model",
                format!("{} blocks, config says {}", self.blocks.len(), c.blocks),
            ));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            for layer in self.block_layers(b) {
                if block.weight(layer.role).shape() != (layer.rows, layer.cols) {
                    return Err(Error::shape(
                        "Model",
                        format!(
                            "tensor '{}' has shape {:?}",
                            layer.id,
                            block.weight(layer.role).shape()
                        ),
                    ));
                }
            }
            if block.attn.heads != c.heads {
                return Err(Error::shape(
                    "Model",
                    format!("block {b} head count differs"),
                ));
            }
        }
        Ok(())
    }

    fn block_layers(&self, block: usize) -> impl Iterator<Item = LayerRef> + '_ {
        let c = self.config;
        LayerRole::ALL.into_iter().map(move |role| {
            let (rows, cols) = match role {
                LayerRole::Ffn1 => (c.d_model, c.d_ff),
                LayerRole::Ffn2 => (c.d_ff, c.d_model),
                _ => (c.d_model, c.d_model),
            };
            LayerRef {
                id: layer_id(block, role),
                block,
                role,
                rows,
                cols,
            }
        })
    }

    /// Quantizable matrices in model order.
    pub fn layers(&self) -> Vec<LayerRef> {
        (0..self.config.blocks)
            .flat_map(|b| self.block_layers(b).collect::<Vec<_>>())
            .collect()
    }

    pub fn weight(&self, block: usize, role: LayerRole) -> Result<&DenseMatrix> {
        self.blocks
            .get(block)
            .map(|b| b.weight(role))
            .ok_or_else(|| Error::MissingLayer(layer_id(block, role)))
    }

    pub fn set_weight(&mut self, block: usize, role: LayerRole, w: DenseMatrix) -> Result<()> {
        let id = layer_id(block, role);
        let slot = self
            .blocks
            .get_mut(block)
            .ok_or_else(|| Error::MissingLayer(id.clone()))?
            .weight_mut(role);
        if slot.shape() != w.shape() {
            return Err(Error::shape(
                "set_weight",
                format!(
                    "'{id}' is {:?}, replacement is {:?}",
                    slot.shape(),
                    w.shape()
                ),
            ));
        }
        *slot = w;
        Ok(())
    }

    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<DenseMatrix> {
        let d = self.config.d_model;
        let mut out = DenseMatrix::zeros(tokens.len(), d);
        for (i, &t) in tokens.iter().enumerate() {
            if t >= self.config.vocab {
                return Err(Error::Config(format!("token {t} outside vocabulary")));
            }
            out.row_mut(i).copy_from_slice(self.embed.row(t));
        }
        Ok(out)
    }

    pub fn block_forward(
        &self,
        block: usize,
        input: &DenseMatrix,
        causal: bool,
    ) -> Result<BlockActivations> {
        let b = &self.blocks[block];
        let attn_in = rms_norm(input);
        let inter = attention_intermediates(&b.attn, &attn_in, causal)?;
        let mid = input.add(&inter.output)?;
        let ffn_in = rms_norm(&mid);
        let hidden = b.ffn.hidden(&ffn_in)?;
        let output = mid.add(&matmul(&hidden, &b.ffn.w2)?)?;
        Ok(BlockActivations {
            input: input.clone(),
            attn_in,
            concat: inter.concat,
            ffn_in,
            hidden,
            output,
        })
    }

    /// Input matrix (`tokens x rows`) that multiplies the weight of `role`.
    pub fn layer_input(acts: &BlockActivations, role: LayerRole) -> &DenseMatrix {
        match role {
            LayerRole::Wq | LayerRole::Wk | LayerRole::Wv => &acts.attn_in,
            LayerRole::Wo => &acts.concat,
            LayerRole::Ffn1 => &acts.ffn_in,
            LayerRole::Ffn2 => &acts.hidden,
        }
    }

    /// Copy of the model with each layer replaced by its dequantized weights,
    /// transposed back to input-major storage.
    pub fn with_quantized(&self, layers: &[QuantizedLayer]) -> Result<Model> {
        let mut out = self.clone();
        for l in layers {
            let (block, role) = parse_layer_id(&l.layer_id)?;
            out.set_weight(block, role, l.dequantize().transpose())
                .map_err(|e| e.context(l.layer_id.clone()))?;
        }
        Ok(out)
    }

    /// Activations of every block for one segment entering block 0 as `x0`.
    pub fn activations(&self, x0: &DenseMatrix, causal: bool) -> Result<Vec<BlockActivations>> {
        let mut out: Vec<BlockActivations> = Vec::with_capacity(self.blocks.len());
        for b in 0..self.blocks.len() {
            let input = out.last().map_or(x0, |a| &a.output);
            let acts = self.block_forward(b, input, causal)?;
            out.push(acts);
        }
        Ok(out)
    }

    /// `tokens x vocab` next-token logits, causal attention.
    pub fn logits(&self, tokens: &[usize]) -> Result<DenseMatrix> {
        let mut h = self.embed_tokens(tokens)?;
        for b in 0..self.blocks.len() {
            h = self.block_forward(b, &h, true)?.output;
        }
        let mut logits = matmul_nt(&rms_norm(&h), &self.embed)?;
        logits.scale_in_place(1.0 / (self.config.d_model as f64).sqrt());
        Ok(logits)
    }

    /// Summed negative log-likelihood of `tokens[1..]` given their prefixes.
    pub fn sequence_nll(&self, tokens: &[usize]) -> Result<(f64, usize)> {
        if tokens.len() < 2 {
            return Ok((0.0, 0));
        }
        let logits = self.logits(&tokens[..tokens.len() - 1])?;
        let mut nll = 0.0;
        for (t, &next) in tokens[1..].iter().enumerate() {
            nll -= log_softmax_at(logits.row(t), next);
        }
        if !nll.is_finite() {
            return Err(Error::NonFinite("sequence log-likelihood".into()));
        }
        Ok((nll, tokens.len() - 1))
    }

    /// Samples a sequence from the model at temperature 1.
    pub fn sample_sequence<R: Rng>(&self, len: usize, rng: &mut R) -> Result<Vec<usize>> {
        let mut tokens = vec![rng.random_range(0..self.config.vocab)];
        while tokens.len() < len {
            let logits = self.logits(&tokens)?;
            let last = logits.row(tokens.len() - 1);
            tokens.push(sample_categorical(last, rng));
        }
        Ok(tokens)
    }
}

fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[index] - lse
}

fn sample_categorical<R: Rng>(logits: &[f64], rng: &mut R) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// `exp(mean NLL)` over all predicted positions.
pub fn toy_perplexity(model: &Model, sequences: &[Vec<usize>]) -> Result<f64> {
    let (mut nll, mut count) = (0.0, 0);
    for s in sequences {
        let (a, b) = model.sequence_nll(s)?;
        nll += a;
        count += b;
    }
    if count == 0 {
        return Err(Error::Config("no tokens to evaluate".into()));
    }
    Ok((nll / count as f64).exp())
}
