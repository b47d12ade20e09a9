//! Packed quantized models.
//!
//! Per layer, in layer id order:
//!
//! ```text
//! group table   per group: scale f32 LE, zero point u8
//! code words    u32 LE
//! ```
//!
//! Codes are laid out group by group, column-major inside a group, and
//! packed from the least significant bits up: 8 codes per word at 4 bits,
//! 16 at 2 bits. Each group starts on a fresh word.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fnv1a64, read_container, read_file, write_container, write_file};
use crate::error::{Error, Result};
use crate::gptq::{max_code, GroupQuantParams, QuantizedLayer};
use crate::linalg::DenseMatrix;
use crate::model::Model;
use crate::planner::PrecisionPlan;

pub const PACKED_MAGIC: &[u8; 8] = b"TQPACKD\0";
pub const PACKED_VERSION: u32 = 1;
const GROUP_ENTRY_BYTES: usize = 5;

pub fn codes_per_word(bits: u8) -> usize {
    32 / bits as usize
}

fn check_bits(bits: u8) -> Result<()> {
    if bits != 2 && bits != 4 {
        return Err(Error::Config(format!("bits must be 2 or 4, got {bits}")));
    }
    Ok(())
}

/// Number of words a `rows x cols` code matrix occupies.
pub fn packed_word_count(rows: usize, cols: usize, group_size: usize, bits: u8) -> usize {
    let per = codes_per_word(bits);
    (0..cols)
        .step_by(group_size.max(1))
        .map(|g0| (rows * ((g0 + group_size).min(cols) - g0)).div_ceil(per))
        .sum()
}

/// Packs row-major codes.
pub fn pack_codes(
    codes: &[u8],
    rows: usize,
    cols: usize,
    group_size: usize,
    bits: u8,
) -> Result<Vec<u32>> {
    check_bits(bits)?;
    if codes.len() != rows * cols || group_size == 0 {
        return Err(Error::shape(
            "pack_codes",
            format!("{} codes for {rows}x{cols}", codes.len()),
        ));
    }
    let maxq = max_code(bits);
    let per = codes_per_word(bits);
    let mut words = Vec::with_capacity(packed_word_count(rows, cols, group_size, bits));
    for g0 in (0..cols).step_by(group_size) {
        let g1 = (g0 + group_size).min(cols);
        let (mut word, mut filled) = (0u32, 0usize);
        for c in g0..g1 {
            for r in 0..rows {
                let code = codes[r * cols + c];
                if code > maxq {
                    return Err(Error::Config(format!(
                        "code {code} exceeds {bits}-bit range"
                    )));
                }
                word |= (code as u32) << (filled * bits as usize);
                filled += 1;
                if filled == per {
                    words.push(word);
                    word = 0;
                    filled = 0;
                }
            }
        }
        if filled > 0 {
            words.push(word);
        }
    }
    Ok(words)
}

/// Inverse of [`pack_codes`].
pub fn unpack_codes(
    words: &[u32],
    rows: usize,
    cols: usize,
    group_size: usize,
    bits: u8,
) -> Result<Vec<u8>> {
    check_bits(bits)?;
    if group_size == 0 || words.len() != packed_word_count(rows, cols, group_size, bits) {
        return Err(Error::Format(format!(
            "{} words cannot hold {rows}x{cols} codes at {bits} bits",
            words.len()
        )));
    }
    let per = codes_per_word(bits);
    let mask = max_code(bits) as u32;
    let mut codes = vec![0u8; rows * cols];
    let mut w = 0;
    for g0 in (0..cols).step_by(group_size) {
        let g1 = (g0 + group_size).min(cols);
        let mut k = 0;
        for c in g0..g1 {
            for r in 0..rows {
                let shift = (k % per) * bits as usize;
                codes[r * cols + c] = ((words[w + k / per] >> shift) & mask) as u8;
                k += 1;
            }
        }
        w += k.div_ceil(per);
    }
    Ok(codes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedEntry {
    pub layer_id: String,
    pub bits: u8,
    pub rows: usize,
    pub cols: usize,
    pub group_size: usize,
    pub groups: usize,
    pub words: usize,
    pub offset: u64,
    pub length: u64,
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PackedManifest {
    format_version: u32,
    plan: PrecisionPlan,
    layers: Vec<PackedEntry>,
}

/// A loaded packed file. Scales are the stored f32 values widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    pub plan: PrecisionPlan,
    pub layers: Vec<QuantizedLayer>,
}

impl PackedModel {
    pub fn dequantized(&self) -> BTreeMap<String, DenseMatrix> {
        self.layers
            .iter()
            .map(|l| (l.layer_id.clone(), l.dequantize()))
            .collect()
    }

    /// Copy of `model` with every packed layer replaced by its dequantized weights.
    pub fn apply_to(&self, model: &Model) -> Result<Model> {
        model.with_quantized(&self.layers)
    }
}

fn check_against_plan(plan: &PrecisionPlan, layers: &[QuantizedLayer]) -> Result<()> {
    let by_id: BTreeMap<&str, &QuantizedLayer> =
        layers.iter().map(|l| (l.layer_id.as_str(), l)).collect();
    for (id, &planned) in &plan.assignments {
        let layer = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::MissingLayer(id.clone()))?;
        if layer.bits != planned {
            return Err(Error::BitsMismatch {
                layer: id.clone(),
                planned,
                found: layer.bits,
            });
        }
    }
    if let Some(extra) = layers
        .iter()
        .find(|l| !plan.assignments.contains_key(&l.layer_id))
    {
        return Err(Error::Config(format!(
            "layer '{}' is not in the plan",
            extra.layer_id
        )));
    }
    Ok(())
}

pub fn packed_to_bytes(plan: &PrecisionPlan, layers: &[QuantizedLayer]) -> Result<Vec<u8>> {
    check_against_plan(plan, layers)?;
    let mut sorted: Vec<&QuantizedLayer> = layers.iter().collect();
    sorted.sort_by(|a, b| a.layer_id.cmp(&b.layer_id));
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(sorted.len());
    for l in sorted {
        l.validate()?;
        let start = payload.len();
        for g in &l.groups {
            payload.extend_from_slice(&(g.scale as f32).to_le_bytes());
            payload.push(g.zero_point);
        }
        let words = pack_codes(&l.codes, l.rows, l.cols, l.group_size, l.bits)?;
        for w in &words {
            payload.extend_from_slice(&w.to_le_bytes());
        }
        entries.push(PackedEntry {
            layer_id: l.layer_id.clone(),
            bits: l.bits,
            rows: l.rows,
            cols: l.cols,
            group_size: l.group_size,
            groups: l.groups.len(),
            words: words.len(),
            offset: start as u64,
            length: (payload.len() - start) as u64,
            checksum: fnv1a64(&payload[start..]),
        });
    }
    let manifest = PackedManifest {
        format_version: PACKED_VERSION,
        plan: plan.clone(),
        layers: entries,
    };
    write_container(PACKED_MAGIC, PACKED_VERSION, &manifest, &payload)
}

pub fn packed_from_bytes(bytes: &[u8]) -> Result<PackedModel> {
    let (manifest, payload): (PackedManifest, _) =
        read_container(bytes, PACKED_MAGIC, PACKED_VERSION)?;
    if manifest.format_version != PACKED_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: PACKED_VERSION,
        });
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for e in &manifest.layers {
        let region = e
            .offset
            .checked_add(e.length)
            .filter(|&end| end <= payload.len() as u64)
            .map(|end| &payload[e.offset as usize..end as usize])
            .ok_or_else(|| Error::Checksum(e.layer_id.clone()))?;
        if fnv1a64(region) != e.checksum {
            return Err(Error::Checksum(e.layer_id.clone()));
        }
        let table_len = e.groups * GROUP_ENTRY_BYTES;
        if e.group_size == 0
            || e.groups != QuantizedLayer::group_count(e.cols, e.group_size)
            || region.len() != table_len + 4 * e.words
        {
            return Err(Error::Format(format!(
                "layer '{}' has inconsistent sizes",
                e.layer_id
            )));
        }
        let groups = region[..table_len]
            .chunks_exact(GROUP_ENTRY_BYTES)
            .enumerate()
            .map(|(i, c)| GroupQuantParams {
                scale: f32::from_le_bytes(c[..4].try_into().expect("4 bytes")) as f64,
                zero_point: c[4],
                group_index: i,
            })
            .collect();
        let words: Vec<u32> = region[table_len..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let layer = QuantizedLayer {
            layer_id: e.layer_id.clone(),
            bits: e.bits,
            group_size: e.group_size,
            rows: e.rows,
            cols: e.cols,
            codes: unpack_codes(&words, e.rows, e.cols, e.group_size, e.bits)?,
            groups,
            recon_error: f64::NAN,
        };
        layer.validate()?;
        layers.push(layer);
    }
    check_against_plan(&manifest.plan, &layers)?;
    Ok(PackedModel {
        plan: manifest.plan,
        layers,
    })
}

pub fn save_packed(plan: &PrecisionPlan, layers: &[QuantizedLayer], path: &Path) -> Result<()> {
    write_file(path, &packed_to_bytes(plan, layers)?)
}

pub fn load_packed(path: &Path) -> Result<PackedModel> {
    packed_from_bytes(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::SensitivityRecord;
    use crate::planner::allocate_bits;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nibble_order_by_hand() {
        let codes: Vec<u8> = (0..8).collect();
        let words = pack_codes(&codes, 8, 1, 128, 4).unwrap();
        assert_eq!(words, vec![0x7654_3210]);
    }

    #[test]
    fn two_bit_zero_codes_are_zero_words() {
        let words = pack_codes(&[0; 40], 5, 8, 3, 2).unwrap();
        assert!(words.iter().all(|&w| w == 0));
        assert_eq!(words.len(), packed_word_count(5, 8, 3, 2));
    }

    #[test]
    fn column_major_within_group_with_padding() {
        // 2x3, group 2: group 0 holds (0,0) (1,0) (0,1) (1,1), group 1 holds (0,2) (1,2)
        let codes = [1, 2, 3, 0, 1, 2]; // row-major
        let words = pack_codes(&codes, 2, 3, 2, 2).unwrap();
        assert_eq!(words, vec![0b01_10_00_01, 0b10_11]);
        assert_eq!(unpack_codes(&words, 2, 3, 2, 2).unwrap(), codes);
        assert!(pack_codes(&[4], 1, 1, 1, 2).is_err());
        assert!(unpack_codes(&words[..1], 2, 3, 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_inverse(seed in any::<u64>(), rows in 1usize..20, cols in 1usize..40,
                               gs in 1usize..50, four in any::<bool>()) {
            let bits = if four { 4 } else { 2 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let codes: Vec<u8> = (0..rows * cols).map(|_| rng.random_range(0..=max_code(bits))).collect();
            let words = pack_codes(&codes, rows, cols, gs, bits).unwrap();
            prop_assert_eq!(unpack_codes(&words, rows, cols, gs, bits).unwrap(), codes);
        }
    }

    fn layer(id: &str, bits: u8, seed: u64) -> QuantizedLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols, gs) = (6, 10, 4);
        QuantizedLayer {
            layer_id: id.into(),
            bits,
            group_size: gs,
            rows,
            cols,
            codes: (0..rows * cols)
                .map(|_| rng.random_range(0..=max_code(bits)))
                .collect(),
            groups: (0..3)
                .map(|i| GroupQuantParams {
                    scale: rng.random_range(0.01..1.0f32) as f64,
                    zero_point: rng.random_range(0..=max_code(bits)),
                    group_index: i,
                })
                .collect(),
            recon_error: 0.0,
        }
    }

    fn plan_for(ids: &[&str], r: f64) -> PrecisionPlan {
        let recs: Vec<_> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| SensitivityRecord {
                layer_id: id.to_string(),
                avg_trace: i as f64,
                param_count: 60,
            })
            .collect();
        allocate_bits(&recs, r).unwrap()
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let plan = plan_for(&["a", "b"], 0.5);
        let layers = vec![
            layer("a", plan.bits("a").unwrap(), 1),
            layer("b", plan.bits("b").unwrap(), 2),
        ];
        let bytes = packed_to_bytes(&plan, &layers).unwrap();
        assert_eq!(bytes, packed_to_bytes(&plan, &layers).unwrap());
        let back = packed_from_bytes(&bytes).unwrap();
        assert_eq!(back.plan, plan);
        for (l, b) in layers.iter().zip(&back.layers) {
            assert_eq!(l.codes, b.codes);
            assert_eq!(l.groups, b.groups);
            let deq = b.dequantize();
            for r in 0..l.rows {
                for c in 0..l.cols {
                    let p = b.group_of(c);
                    assert_eq!(
                        deq[(r, c)],
                        (b.code(r, c) as f64 - p.zero_point as f64) * p.scale
                    );
                }
            }
        }
    }

    #[test]
    fn plan_mismatches_are_rejected() {
        let plan = plan_for(&["a", "b"], 0.5);
        let a = layer("a", plan.bits("a").unwrap(), 1);
        assert!(
            matches!(packed_to_bytes(&plan, std::slice::from_ref(&a)), Err(Error::MissingLayer(id)) if id == "b")
        );
        let wrong = layer("b", 6 - plan.bits("b").unwrap(), 2);
        assert!(matches!(
            packed_to_bytes(&plan, &[a, wrong]),
            Err(Error::BitsMismatch { .. })
        ));
    }

    #[test]
    fn corruption_and_version() {
        let plan = plan_for(&["a"], 1.0);
        let mut bytes = packed_to_bytes(&plan, &[layer("a", 4, 3)]).unwrap();
        let n = bytes.len();
        bytes[n - 2] ^= 1;
        assert!(matches!(packed_from_bytes(&bytes), Err(Error::Checksum(_))));
        bytes[8] = 2;
        assert!(matches!(
            packed_from_bytes(&bytes),
            Err(Error::Version { found: 2, .. })
        ));
    }
}
