//! Calibration sets: block-0 input activations, one `tokens x d_model`
//! segment per batch, stored as f64.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    f64s_from_bytes, f64s_to_bytes, fnv1a64, read_container, read_file, write_container, write_file,
};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::ModelConfig;
use crate::transformer::CalibrationBatch;

pub const CALIB_MAGIC: &[u8; 8] = b"TQCALIB\0";
pub const CALIB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum CalibrationSource {
    Synthetic { seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub batches: Vec<CalibrationBatch>,
    pub source: CalibrationSource,
    pub n_segments: usize,
    pub tokens_per_segment: usize,
}

impl CalibrationSet {
    pub fn new(batches: Vec<CalibrationBatch>, source: CalibrationSource) -> Result<Self> {
        let tokens = batches.first().map_or(0, |b| b.x.rows());
        let d = batches.first().map_or(0, |b| b.x.cols());
        if let Some(b) = batches.iter().find(|b| b.x.shape() != (tokens, d)) {
            return Err(Error::shape(
                "CalibrationSet",
                format!("batch '{}' differs in shape", b.id),
            ));
        }
        Ok(Self {
            n_segments: batches.len(),
            tokens_per_segment: tokens,
            batches,
            source,
        })
    }

    pub fn d_model(&self) -> usize {
        self.batches.first().map_or(0, |b| b.x.cols())
    }

    /// Nonempty and shaped for `config`.
    pub fn check_for(&self, config: &ModelConfig) -> Result<()> {
        if self.batches.is_empty() {
            return Err(Error::Config("calibration set is empty".into()));
        }
        if self.d_model() != config.d_model {
            return Err(Error::shape(
                "calibration",
                format!(
                    "segments have width {}, model d_model is {}",
                    self.d_model(),
                    config.d_model
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CalibManifest {
    format_version: u32,
    source: CalibrationSource,
    n_segments: usize,
    tokens_per_segment: usize,
    d_model: usize,
    checksum: u64,
}

pub fn calibration_to_bytes(set: &CalibrationSet) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    for b in &set.batches {
        f64s_to_bytes(b.x.data(), &mut payload);
    }
    let manifest = CalibManifest {
        format_version: CALIB_VERSION,
        source: set.source.clone(),
        n_segments: set.n_segments,
        tokens_per_segment: set.tokens_per_segment,
        d_model: set.d_model(),
        checksum: fnv1a64(&payload),
    };
    write_container(CALIB_MAGIC, CALIB_VERSION, &manifest, &payload)
}

/// Loads a set; `source` is kept as recorded at creation time.
pub fn calibration_from_bytes(bytes: &[u8]) -> Result<CalibrationSet> {
    let (m, payload): (CalibManifest, _) = read_container(bytes, CALIB_MAGIC, CALIB_VERSION)?;
    if m.format_version != CALIB_VERSION {
        return Err(Error::Version {
            found: m.format_version,
            expected: CALIB_VERSION,
        });
    }
    let seg_len = m.tokens_per_segment * m.d_model * 8;
    if payload.len() != seg_len * m.n_segments || fnv1a64(payload) != m.checksum {
        return Err(Error::Checksum("calibration".into()));
    }
    let batches = (0..m.n_segments)
        .map(|i| {
            let x = DenseMatrix::new(
                m.tokens_per_segment,
                m.d_model,
                f64s_from_bytes(&payload[i * seg_len..(i + 1) * seg_len]),
            )?;
            Ok(CalibrationBatch::new(x, format!("seg{i:04}")))
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationSet::new(batches, m.source)
}

pub fn save_calibration(set: &CalibrationSet, path: &Path) -> Result<()> {
    write_file(path, &calibration_to_bytes(set)?)
}

pub fn load_calibration(path: &Path) -> Result<CalibrationSet> {
    calibration_from_bytes(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> CalibrationSet {
        let batches = (0..3)
            .map(|i| {
                CalibrationBatch::new(
                    DenseMatrix::from_fn(4, 2, |r, c| (i * 10 + r * 2 + c) as f64 * 0.1),
                    format!("seg{i:04}"),
                )
            })
            .collect();
        CalibrationSet::new(batches, CalibrationSource::Synthetic { seed: 5 }).unwrap()
    }

    #[test]
    fn round_trip() {
        let s = set();
        let back = calibration_from_bytes(&calibration_to_bytes(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!((back.n_segments, back.tokens_per_segment), (3, 4));
    }

    #[test]
    fn corruption_and_shape_checks() {
        let mut bytes = calibration_to_bytes(&set()).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert!(calibration_from_bytes(&bytes).is_err());
        let cfg = ModelConfig {
            d_model: 4,
            heads: 2,
            ..Default::default()
        };
        assert!(set().check_for(&cfg).is_err());
        let empty = CalibrationSet::new(vec![], CalibrationSource::Synthetic { seed: 0 }).unwrap();
        assert!(matches!(empty.check_for(&cfg), Err(Error::Config(_))));
        let ragged = vec![
            CalibrationBatch::new(DenseMatrix::zeros(2, 2), "a"),
            CalibrationBatch::new(DenseMatrix::zeros(3, 2), "b"),
        ];
        assert!(CalibrationSet::new(ragged, CalibrationSource::Synthetic { seed: 0 }).is_err());
    }
}
