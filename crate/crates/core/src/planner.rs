//! Trace-driven 2/4-bit allocation.
//!
//! `r` is a fraction of parameters, so the average width is
//! `4·r + 2·(1 - r)` up to the granularity of whole layers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::SensitivityRecord;

const RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPlan {
    pub assignments: BTreeMap<String, u8>,
    pub ratio_r: f64,
    pub achieved_avg_bits: f64,
    pub ranking: Vec<SensitivityRecord>,
}

impl PrecisionPlan {
    pub fn bits(&self, layer_id: &str) -> Option<u8> {
        self.assignments.get(layer_id).copied()
    }

    /// Fraction of parameters at 4 bits.
    pub fn achieved_ratio(&self) -> f64 {
        (self.achieved_avg_bits - 2.0) / 2.0
    }

    fn from_assignments(
        assignments: BTreeMap<String, u8>,
        ratio_r: f64,
        ranking: Vec<SensitivityRecord>,
    ) -> Result<Self> {
        let (mut p4, mut total) = (0usize, 0usize);
        for rec in &ranking {
            total += rec.param_count;
            if assignments[&rec.layer_id] == 4 {
                p4 += rec.param_count;
            }
        }
        if total == 0 {
            return Err(Error::Config("layers have no parameters".into()));
        }
        let p2 = total - p4;
        Ok(Self {
            assignments,
            ratio_r,
            achieved_avg_bits: (4 * p4 + 2 * p2) as f64 / total as f64,
            ranking,
        })
    }
}

/// Target average width for a 4-bit parameter fraction `r`.
pub fn target_avg_bits(r: f64) -> f64 {
    4.0 * r + 2.0 * (1.0 - r)
}

fn check_ratio(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("ratio {r} outside [0, 1]")));
    }
    Ok(())
}

/// Most sensitive first; equal traces in layer id order.
pub fn rank_layers(records: &[SensitivityRecord]) -> Result<Vec<SensitivityRecord>> {
    if records.is_empty() {
        return Err(Error::EmptyPlan);
    }
    if let Some(r) = records.iter().find(|r| !r.avg_trace.is_finite()) {
        return Err(Error::NonFinite(format!(
            "average trace of '{}'",
            r.layer_id
        )));
    }
    let mut ranked = records.to_vec();
    ranked.sort_by(|a, b| {
        b.avg_trace
            .total_cmp(&a.avg_trace)
            .then_with(|| a.layer_id.cmp(&b.layer_id))
    });
    Ok(ranked)
}

/// Walks the ranking giving 4 bits while the 4-bit parameter count stays
/// within `r·total`. The first layer that does not fit gets 4 bits only if
/// that lands strictly closer to `r`; it and everything after it otherwise
/// get 2 bits.
pub fn allocate_bits(records: &[SensitivityRecord], r: f64) -> Result<PrecisionPlan> {
    check_ratio(r)?;
    let ranking = rank_layers(records)?;
    let total: usize = ranking.iter().map(|x| x.param_count).sum();
    let target = r * total as f64;
    let eps = RATIO_EPS * total as f64;

    let mut assignments = BTreeMap::new();
    let mut cum = 0usize;
    let mut open = true;
    for rec in &ranking {
        let mut bits = 2;
        if open {
            let next = (cum + rec.param_count) as f64;
            if next <= target + eps {
                bits = 4;
            } else {
                if (next - target).abs() < (cum as f64 - target).abs() {
                    bits = 4;
                }
                open = false;
            }
        }
        if bits == 4 {
            cum += rec.param_count;
        }
        assignments.insert(rec.layer_id.clone(), bits);
    }
    PrecisionPlan::from_assignments(assignments, r, ranking)
}

/// Every layer at the same width.
pub fn uniform_plan(records: &[SensitivityRecord], bits: u8) -> Result<PrecisionPlan> {
    if bits != 2 && bits != 4 {
        return Err(Error::Config(format!("bits must be 2 or 4, got {bits}")));
    }
    let ranking = rank_layers(records)?;
    let assignments = ranking.iter().map(|r| (r.layer_id.clone(), bits)).collect();
    let r = if bits == 4 { 1.0 } else { 0.0 };
    PrecisionPlan::from_assignments(assignments, r, ranking)
}

/// The first `⌈r · #blocks⌉` blocks in model order at 4 bits, the rest at 2.
pub fn manual_blockwise_plan(blocks: &[Vec<SensitivityRecord>], r: f64) -> Result<PrecisionPlan> {
    check_ratio(r)?;
    let all: Vec<SensitivityRecord> = blocks.iter().flatten().cloned().collect();
    let ranking = rank_layers(&all)?;
    let high = (r * blocks.len() as f64 - RATIO_EPS).ceil().max(0.0) as usize;
    let mut assignments = BTreeMap::new();
    for (i, block) in blocks.iter().enumerate() {
        let bits = if i < high { 4 } else { 2 };
        for rec in block {
            assignments.insert(rec.layer_id.clone(), bits);
        }
    }
    PrecisionPlan::from_assignments(assignments, r, ranking)
}

/// Tab-separated plan: two `#` summary lines, a header, then
/// `layer_id bits avg_trace params` rows sorted by layer id.
pub fn write_plan_table(plan: &PrecisionPlan) -> String {
    let mut rows: Vec<&SensitivityRecord> = plan.ranking.iter().collect();
    rows.sort_by(|a, b| a.layer_id.cmp(&b.layer_id));
    let mut out = format!(
        "# ratio_r\t{}\n# achieved_avg_bits\t{}\nlayer_id\tbits\tavg_trace\tparams\n",
        plan.ratio_r, plan.achieved_avg_bits
    );
    for rec in rows {
        out.push_str(&format!(
            "{}\t{}\t{:e}\t{}\n",
            rec.layer_id, plan.assignments[&rec.layer_id], rec.avg_trace, rec.param_count
        ));
    }
    out
}

pub fn parse_plan_table(text: &str) -> Result<PrecisionPlan> {
    let mut ratio = None;
    let mut assignments = BTreeMap::new();
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = || Error::Format(format!("plan table line {}: '{line}'", lineno + 1));
        if let Some(rest) = line.strip_prefix("# ratio_r\t") {
            ratio = Some(rest.parse::<f64>().map_err(|_| bad())?);
            continue;
        }
        if line.starts_with('#') || line.starts_with("layer_id\t") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let bits: u8 = f[1].parse().map_err(|_| bad())?;
        if bits != 2 && bits != 4 {
            return Err(bad());
        }
        assignments.insert(f[0].to_string(), bits);
        records.push(SensitivityRecord {
            layer_id: f[0].to_string(),
            avg_trace: f[2].parse().map_err(|_| bad())?,
            param_count: f[3].parse().map_err(|_| bad())?,
        });
    }
    let ratio = ratio.ok_or_else(|| Error::Format("plan table has no ratio line".into()))?;
    check_ratio(ratio)?;
    let ranking = rank_layers(&records)?;
    PrecisionPlan::from_assignments(assignments, ratio, ranking)
}
