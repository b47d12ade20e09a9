//! Seeded toy models and calibration data.
//!
//! Weights are Gaussian with standard deviation `1/√fan_in`, the embedding
//! table is standard Gaussian. Calibration segments are token sequences
//! from a seeded sparse Markov chain, embedded through the model's table.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::calib::{CalibrationSet, CalibrationSource};
use crate::error::Result;
use crate::linalg::DenseMatrix;
use crate::model::{Block, Model, ModelConfig};
use crate::rng::{stream_rng, streams};
use crate::transformer::{Activation, AttentionLayerWeights, CalibrationBatch, FeedForwardWeights};

/// Successors per state in the calibration Markov chain.
const MARKOV_FANOUT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub config: ModelConfig,
    pub calib_segments: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            config: ModelConfig::default(),
            calib_segments: 16,
        }
    }
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v * std
    })
}

fn fan_in(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    gaussian(rows, cols, 1.0 / (rows as f64).sqrt(), rng)
}

pub fn generate_model(seed: u64, config: ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = stream_rng(seed, streams::MODEL);
    let (d, f) = (config.d_model, config.d_ff);
    let embed = gaussian(config.vocab, d, 1.0, &mut rng);
    let mut blocks = Vec::with_capacity(config.blocks);
    for _ in 0..config.blocks {
        let attn = AttentionLayerWeights::new(
            fan_in(d, d, &mut rng),
            fan_in(d, d, &mut rng),
            fan_in(d, d, &mut rng),
            fan_in(d, d, &mut rng),
            config.heads,
        )?;
        let ffn = FeedForwardWeights::new(
            fan_in(d, f, &mut rng),
            fan_in(f, d, &mut rng),
            Activation::Relu,
        )?;
        blocks.push(Block { attn, ffn });
    }
    Model::new(config, embed, blocks)
}

/// `count` token sequences of length `len` from a seeded sparse Markov chain.
pub fn markov_sequences(seed: u64, vocab: usize, len: usize, count: usize) -> Vec<Vec<usize>> {
    let mut rng = stream_rng(seed, streams::CALIBRATION);
    let table: Vec<Vec<(usize, f64)>> = (0..vocab)
        .map(|_| {
            (0..MARKOV_FANOUT)
                .map(|_| (rng.random_range(0..vocab), rng.random_range(0.1..1.0)))
                .collect()
        })
        .collect();
    (0..count)
        .map(|_| {
            let mut seq = vec![rng.random_range(0..vocab)];
            while seq.len() < len {
                let succ = &table[*seq.last().expect("nonempty")];
                let total: f64 = succ.iter().map(|s| s.1).sum();
                let mut u = rng.random::<f64>() * total;
                let mut next = succ[MARKOV_FANOUT - 1].0;
                for &(tok, w) in succ {
                    u -= w;
                    if u <= 0.0 {
                        next = tok;
                        break;
                    }
                }
                seq.push(next);
            }
            seq
        })
        .collect()
}

pub fn generate_calibration(seed: u64, model: &Model, segments: usize) -> Result<CalibrationSet> {
    let c = model.config;
    let batches = markov_sequences(seed, c.vocab, c.seq_len, segments)
        .iter()
        .enumerate()
        .map(|(i, toks)| {
            Ok(CalibrationBatch::new(
                model.embed_tokens(toks)?,
                format!("seg{i:04}"),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationSet::new(batches, CalibrationSource::Synthetic { seed })
}

pub fn generate_synthetic(seed: u64, spec: &SyntheticSpec) -> Result<(Model, CalibrationSet)> {
    let model = generate_model(seed, spec.config)?;
    let calib = generate_calibration(seed, &model, spec.calib_segments)?;
    Ok((model, calib))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::model_file::{model_checksum, model_from_bytes, model_to_bytes};

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            config: ModelConfig {
                d_model: 8,
                heads: 2,
                d_ff: 16,
                blocks: 2,
                vocab: 12,
                seq_len: 8,
            },
            calib_segments: 3,
        }
    }

    #[test]
    fn seeded_and_distinct() {
        let (a, ca) = generate_synthetic(1, &spec()).unwrap();
        let (b, cb) = generate_synthetic(1, &spec()).unwrap();
        let (c, _) = generate_synthetic(2, &spec()).unwrap();
        assert_eq!(model_checksum(&a).unwrap(), model_checksum(&b).unwrap());
        assert_ne!(model_checksum(&a).unwrap(), model_checksum(&c).unwrap());
        assert_eq!(ca, cb);
        assert_eq!(ca.n_segments, 3);
        assert_eq!(ca.batches[0].x.shape(), (8, 8));
    }

    #[test]
    fn generated_model_round_trips() {
        let (m, _) = generate_synthetic(3, &spec()).unwrap();
        assert_eq!(model_from_bytes(&model_to_bytes(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn weight_scale_follows_fan_in() {
        let cfg = ModelConfig {
            d_model: 64,
            heads: 4,
            d_ff: 256,
            blocks: 1,
            vocab: 8,
            seq_len: 4,
        };
        let m = generate_model(4, cfg).unwrap();
        let var = |w: &DenseMatrix| w.frobenius_sq() / (w.rows() * w.cols()) as f64;
        assert!((var(&m.blocks[0].attn.wq) * 64.0 - 1.0).abs() < 0.1);
        assert!((var(&m.blocks[0].ffn.w2) * 256.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn markov_tokens_in_range() {
        let seqs = markov_sequences(9, 5, 20, 4);
        assert_eq!(seqs.len(), 4);
        assert!(seqs
            .iter()
            .all(|s| s.len() == 20 && s.iter().all(|&t| t < 5)));
    }
}
