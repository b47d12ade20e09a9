//! Column-wise error-compensating quantization.
//!
//! Weights here are `d_row x d_col` (output features by input features) and
//! the Hessian is over the input features, `d_col x d_col`. Columns are
//! visited in ascending order. The quantization error of each column is
//! pushed onto the columns not yet quantized through the upper Cholesky
//! factor of the inverse Hessian, lazily in blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::HessianState;
use crate::linalg::{matmul, DenseMatrix};
use crate::transformer::{
    attention_forward, feedforward_forward, AttentionLayerWeights, CalibrationBatch,
    FeedForwardWeights,
};

/// Smallest scale a group may have.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Shrink factors tried by the optional clipping search.
const CLIP_GRID: [f64; 11] = [1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u8,
    pub group_size: usize,
    pub block_size: usize,
    pub damp_percent: f64,
    pub symmetric: bool,
    pub clip_grid_search: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 4,
            group_size: 128,
            block_size: 128,
            damp_percent: 0.01,
            symmetric: false,
            clip_grid_search: false,
        }
    }
}

impl QuantConfig {
    pub fn with_bits(bits: u8) -> Self {
        Self {
            bits,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits != 2 && self.bits != 4 {
            return Err(Error::Config(format!(
                "bits must be 2 or 4, got {}",
                self.bits
            )));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group size must be at least 1".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        if !self.damp_percent.is_finite() || self.damp_percent <= 0.0 {
            return Err(Error::Config(format!(
                "damping percent {} must be > 0",
                self.damp_percent
            )));
        }
        Ok(())
    }

    pub fn maxq(&self) -> u8 {
        max_code(self.bits)
    }

    /// Fits one group's parameters according to this config.
    pub fn fit(&self, values: &[f64], group_index: usize) -> GroupQuantParams {
        let base = |lo: f64, hi: f64| {
            if self.symmetric {
                symmetric_params(lo, hi, self.bits, group_index)
            } else {
                asymmetric_params(lo, hi, self.bits, group_index)
            }
        };
        let (lo, hi) = min_max(values);
        if is_constant(lo, hi, self.bits) {
            return constant_params(lo, self.bits, group_index);
        }
        if !self.clip_grid_search {
            return base(lo, hi);
        }
        let mut best = base(lo, hi);
        let mut best_err = group_sq_error(values, &best, self.bits);
        for &shrink in &CLIP_GRID[1..] {
            let p = base(lo * shrink, hi * shrink);
            let err = group_sq_error(values, &p, self.bits);
            if err < best_err {
                best = p;
                best_err = err;
            }
        }
        best
    }
}

pub fn max_code(bits: u8) -> u8 {
    ((1u16 << bits) - 1) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupQuantParams {
    pub scale: f64,
    pub zero_point: u8,
    pub group_index: usize,
}

impl GroupQuantParams {
    pub fn dequant(&self, code: u8) -> f64 {
        (code as f64 - self.zero_point as f64) * self.scale
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn is_constant(lo: f64, hi: f64, bits: u8) -> bool {
    (hi - lo) / max_code(bits) as f64 <= SCALE_FLOOR
}

/// A constant slice keeps the zero point mid-grid and picks the scale so the
/// constant itself sits on a grid point.
fn constant_params(c: f64, bits: u8, group_index: usize) -> GroupQuantParams {
    let maxq = max_code(bits);
    let zero = maxq / 2 + 1;
    let steps = if c >= 0.0 { maxq - zero } else { zero };
    let scale = (c.abs() / steps as f64).max(SCALE_FLOOR);
    GroupQuantParams {
        scale,
        zero_point: zero,
        group_index,
    }
}

/// Min-max fit over `[min(lo, 0), max(hi, 0)]`.
fn asymmetric_params(lo: f64, hi: f64, bits: u8, group_index: usize) -> GroupQuantParams {
    let maxq = max_code(bits) as f64;
    let (lo, hi) = (lo.min(0.0), hi.max(0.0));
    let scale = ((hi - lo) / maxq).max(SCALE_FLOOR);
    let zero = (-lo / scale).round().clamp(0.0, maxq);
    GroupQuantParams {
        scale,
        zero_point: zero as u8,
        group_index,
    }
}

fn symmetric_params(lo: f64, hi: f64, bits: u8, group_index: usize) -> GroupQuantParams {
    let maxq = max_code(bits);
    let amax = lo.abs().max(hi.abs());
    GroupQuantParams {
        scale: (2.0 * amax / maxq as f64).max(SCALE_FLOOR),
        zero_point: maxq / 2 + 1,
        group_index,
    }
}

fn group_sq_error(values: &[f64], p: &GroupQuantParams, bits: u8) -> f64 {
    values
        .iter()
        .map(|&v| {
            let (_, q) = quant_dequant(v, p, bits);
            (v - q) * (v - q)
        })
        .sum()
}

/// Asymmetric min-max fit of one group's values.
pub fn fit_group_params(values: &[f64], bits: u8) -> GroupQuantParams {
    QuantConfig::with_bits(bits).fit(values, 0)
}

/// Nearest grid point: `code = clamp(round(w/scale) + zero)`, `w_hat = (code - zero)·scale`.
pub fn quant_dequant(w: f64, p: &GroupQuantParams, bits: u8) -> (u8, f64) {
    let maxq = max_code(bits) as f64;
    let code = ((w / p.scale).round() + p.zero_point as f64).clamp(0.0, maxq) as u8;
    (code, p.dequant(code))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub layer_id: String,
    pub bits: u8,
    pub group_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major codes.
    pub codes: Vec<u8>,
    pub groups: Vec<GroupQuantParams>,
    /// `Σ E²·[H⁻¹]_jj` over all columns, equal to `tr(ΔW H ΔWᵀ)` for the damped `H`.
    pub recon_error: f64,
}

impl QuantizedLayer {
    pub fn group_count(cols: usize, group_size: usize) -> usize {
        cols.div_ceil(group_size)
    }

    pub fn code(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.cols + col]
    }

    pub fn group_of(&self, col: usize) -> &GroupQuantParams {
        &self.groups[col / self.group_size]
    }

    pub fn dequantize(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |r, c| {
            self.group_of(c).dequant(self.code(r, c))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let maxq = max_code(self.bits);
        if self.codes.len() != self.rows * self.cols {
            return Err(Error::Format(format!(
                "layer '{}': {} codes for {}x{}",
                self.layer_id,
                self.codes.len(),
                self.rows,
                self.cols
            )));
        }
        if self.groups.len() != Self::group_count(self.cols, self.group_size) {
            return Err(Error::Format(format!(
                "layer '{}': {} groups for {} columns",
                self.layer_id,
                self.groups.len(),
                self.cols
            )));
        }
        if let Some(c) = self.codes.iter().find(|&&c| c > maxq) {
            return Err(Error::Format(format!(
                "layer '{}': code {c} exceeds {maxq}",
                self.layer_id
            )));
        }
        for g in &self.groups {
            if !g.scale.is_finite() || g.scale <= 0.0 || g.zero_point > maxq {
                return Err(Error::Format(format!(
                    "layer '{}': invalid group {}",
                    self.layer_id, g.group_index
                )));
            }
        }
        Ok(())
    }
}

/// What the loop saw and did at one column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTrace {
    pub column: usize,
    /// Column values at quantization time, with all earlier compensation applied.
    pub weights: Vec<f64>,
    /// Per-row `E = (w - q) / [H⁻¹]_jj`.
    pub errors: Vec<f64>,
    /// `[H⁻¹]_{j, j..}` of the inverse restricted to the remaining columns.
    pub hinv_row: Vec<f64>,
}

fn check_inputs(w: &DenseMatrix, h: &HessianState, cfg: &QuantConfig) -> Result<()> {
    cfg.validate()?;
    if h.dim() != w.cols() {
        return Err(Error::shape(
            "quantize_layer",
            format!(
                "weight has {} columns, hessian dim is {}",
                w.cols(),
                h.dim()
            ),
        ));
    }
    if !w.is_finite() {
        return Err(Error::NonFinite(format!("weights of '{}'", h.layer_id)));
    }
    Ok(())
}

pub fn quantize_layer(
    w: &DenseMatrix,
    h: &HessianState,
    cfg: &QuantConfig,
) -> Result<QuantizedLayer> {
    check_inputs(w, h, cfg)?;
    let u = h.inverse_upper_factor()?;
    run_columns(w, &u, cfg, &h.layer_id, None)
}

/// [`quantize_layer`] that also returns the per-column record.
pub fn quantize_layer_traced(
    w: &DenseMatrix,
    h: &HessianState,
    cfg: &QuantConfig,
) -> Result<(QuantizedLayer, Vec<ColumnTrace>)> {
    check_inputs(w, h, cfg)?;
    let u = h.inverse_upper_factor()?;
    let mut trace = Vec::with_capacity(w.cols());
    let layer = run_columns(w, &u, cfg, &h.layer_id, Some(&mut trace))?;
    Ok((layer, trace))
}

fn run_columns(
    w: &DenseMatrix,
    u: &DenseMatrix,
    cfg: &QuantConfig,
    layer_id: &str,
    mut trace: Option<&mut Vec<ColumnTrace>>,
) -> Result<QuantizedLayer> {
    let (rows, cols) = w.shape();
    let gs = cfg.group_size;
    let mut w = w.clone();
    let mut codes = vec![0u8; rows * cols];
    let mut groups: Vec<GroupQuantParams> =
        Vec::with_capacity(QuantizedLayer::group_count(cols, gs));
    let mut recon = 0.0;
    let mut e = vec![0.0; rows];

    let mut start = 0;
    while start < cols {
        // blocks never straddle a group boundary, so a group is always fit
        // from weights carrying every earlier update
        let end = (start + cfg.block_size)
            .min(cols)
            .min((start / gs + 1) * gs);
        let width = end - start;
        let mut scaled_err = DenseMatrix::zeros(rows, width);

        for j in start..end {
            if j % gs == 0 {
                let slice = w.col_range(j, (j + gs).min(cols));
                groups.push(cfg.fit(slice.data(), j / gs));
            }
            let p = groups[j / gs];
            let d = u[(j, j)];
            let hinv_jj = d * d;
            let before = trace.as_ref().map(|_| w.column(j));
            for r in 0..rows {
                let wv = w[(r, j)];
                let (code, q) = quant_dequant(wv, &p, cfg.bits);
                codes[r * cols + j] = code;
                e[r] = (wv - q) / hinv_jj;
                recon += e[r] * e[r] * hinv_jj;
                scaled_err[(r, j - start)] = e[r] * d;
            }
            for k in j + 1..end {
                let f = d * u[(j, k)];
                if f != 0.0 {
                    for r in 0..rows {
                        w[(r, k)] -= e[r] * f;
                    }
                }
            }
            if let (Some(t), Some(before)) = (trace.as_deref_mut(), before) {
                t.push(ColumnTrace {
                    column: j,
                    weights: before,
                    errors: e.clone(),
                    hinv_row: (j..cols).map(|k| d * u[(j, k)]).collect(),
                });
            }
        }

        if end < cols {
            let u_tail = u.row_range(start, end).col_range(end, cols);
            let update = matmul(&scaled_err, &u_tail)?;
            for r in 0..rows {
                for k in end..cols {
                    w[(r, k)] -= update[(r, k - end)];
                }
            }
        }
        start = end;
    }

    if !recon.is_finite() {
        return Err(Error::NonFinite(format!(
            "quantization error of '{layer_id}'"
        )));
    }
    Ok(QuantizedLayer {
        layer_id: layer_id.to_string(),
        bits: cfg.bits,
        group_size: gs,
        rows,
        cols,
        codes,
        groups,
        recon_error: recon,
    })
}

/// Round-to-nearest with groups fit on the original weights and no
/// compensation. `recon_error` holds the plain squared rounding error.
pub fn rtn(w: &DenseMatrix, layer_id: &str, cfg: &QuantConfig) -> Result<QuantizedLayer> {
    cfg.validate()?;
    let (rows, cols) = w.shape();
    let gs = cfg.group_size;
    let mut codes = vec![0u8; rows * cols];
    let mut groups = Vec::new();
    let mut err = 0.0;
    for (gi, g0) in (0..cols).step_by(gs).enumerate() {
        let g1 = (g0 + gs).min(cols);
        let p = cfg.fit(w.col_range(g0, g1).data(), gi);
        for r in 0..rows {
            for c in g0..g1 {
                let (code, q) = quant_dequant(w[(r, c)], &p, cfg.bits);
                codes[r * cols + c] = code;
                err += (w[(r, c)] - q).powi(2);
            }
        }
        groups.push(p);
    }
    Ok(QuantizedLayer {
        layer_id: layer_id.to_string(),
        bits: cfg.bits,
        group_size: gs,
        rows,
        cols,
        codes,
        groups,
        recon_error: err,
    })
}

/// `tr(ΔW H ΔWᵀ)` with `ΔW = w - w_hat`.
pub fn proxy_objective(w: &DenseMatrix, w_hat: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    let delta = w.sub(w_hat)?;
    let dh = matmul(&delta, h)?;
    dh.dot(&delta)
}

/// `Σ_batches ||Attn(X; W) - Attn(X; Ŵ)||²`.
pub fn attention_reconstruction_error(
    original: &AttentionLayerWeights,
    quantized: &AttentionLayerWeights,
    batches: &[CalibrationBatch],
    causal: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        let f = attention_forward(original, &b.x, causal)?;
        let g = attention_forward(quantized, &b.x, causal)?;
        total += f.sub(&g)?.frobenius_sq();
    }
    Ok(total)
}

/// `Σ_batches ||FFN(X; W) - FFN(X; Ŵ)||²`.
pub fn feedforward_reconstruction_error(
    original: &FeedForwardWeights,
    quantized: &FeedForwardWeights,
    batches: &[CalibrationBatch],
) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        let f = feedforward_forward(original, &b.x)?;
        let g = feedforward_forward(quantized, &b.x)?;
        total += f.sub(&g)?.frobenius_sq();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::invert_spd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn damped_identity(dim: usize) -> HessianState {
        let mut h = HessianState::from_matrix("l", DenseMatrix::identity(dim)).unwrap();
        h.damp(1e-300).unwrap();
        h
    }

    fn gram_hessian(x_tokens: &DenseMatrix) -> HessianState {
        let mut h = HessianState::new("l", x_tokens.cols());
        h.accumulate_tokens(x_tokens).unwrap();
        h.damp(0.01).unwrap();
        h
    }

    #[test]
    fn fit_examples() {
        let v: Vec<f64> = (0..16).map(f64::from).collect();
        let p = fit_group_params(&v, 4);
        assert_eq!((p.scale, p.zero_point), (1.0, 0));
        for &x in &v {
            assert_eq!(quant_dequant(x, &p, 4).1, x);
        }

        let p = fit_group_params(&[-1.0, 1.0], 2);
        assert!((p.scale - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.zero_point, 2);

        for bits in [2, 4] {
            let p = fit_group_params(&[3.7, 3.7, 3.7], bits);
            assert!(p.zero_point > 0 && p.zero_point < max_code(bits));
            assert!((quant_dequant(3.7, &p, bits).1 - 3.7).abs() < 1e-9);
            let p = fit_group_params(&[-0.25], bits);
            assert!((quant_dequant(-0.25, &p, bits).1 + 0.25).abs() < 1e-9);
            let p = fit_group_params(&[0.0, 0.0], bits);
            assert_eq!(p.scale, SCALE_FLOOR);
            assert_eq!(quant_dequant(0.0, &p, bits).1, 0.0);
        }
    }

    #[test]
    fn one_sided_slice_stays_on_grid() {
        let v = [2.0, 3.0, 4.0];
        let p = fit_group_params(&v, 4);
        for &x in &v {
            assert!((quant_dequant(x, &p, 4).1 - x).abs() <= p.scale / 2.0 + 1e-15);
        }
    }

    #[test]
    fn quant_dequant_examples() {
        let p = GroupQuantParams {
            scale: 1.0,
            zero_point: 0,
            group_index: 0,
        };
        assert_eq!(quant_dequant(7.3, &p, 4), (7, 7.0));
        assert_eq!(quant_dequant(5.0, &p, 4), (5, 5.0));
        assert_eq!(quant_dequant(1e6, &p, 4).0, 15);
        assert_eq!(quant_dequant(-1e6, &p, 2).0, 0);
    }

    #[test]
    fn clip_search_never_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut v: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            v[0] = 6.0;
            let plain = QuantConfig::with_bits(2);
            let clip = QuantConfig {
                clip_grid_search: true,
                ..plain
            };
            let e_plain = group_sq_error(&v, &plain.fit(&v, 0), 2);
            let e_clip = group_sq_error(&v, &clip.fit(&v, 0), 2);
            assert!(e_clip <= e_plain);
        }
    }

    #[test]
    fn symmetric_zero_is_mid_grid() {
        let cfg = QuantConfig {
            symmetric: true,
            ..QuantConfig::with_bits(4)
        };
        let p = cfg.fit(&[-2.0, 0.5, 1.0], 0);
        assert_eq!(p.zero_point, 8);
        assert!((p.scale - 4.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn identity_hessian_is_round_to_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random(6, 10, &mut rng);
        let cfg = QuantConfig {
            group_size: 4,
            block_size: 3,
            ..QuantConfig::with_bits(2)
        };
        let q = quantize_layer(&w, &damped_identity(10), &cfg).unwrap();
        let r = rtn(&w, "l", &cfg).unwrap();
        assert_eq!(q.codes, r.codes);
        assert_eq!(q.groups, r.groups);
        assert!((q.recon_error - r.recon_error).abs() < 1e-12);
    }

    #[test]
    fn on_grid_weights_are_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // every group spans the full grid so the min-max fit recovers scale 0.25
        let w = DenseMatrix::from_fn(16, 8, |r, c| {
            let code = if r == 0 {
                0
            } else if r == 1 {
                15
            } else {
                rng.random_range(0..16)
            };
            (code as f64 - 4.0) * 0.25 + 0.0 * c as f64
        });
        let x = random(20, 8, &mut rng);
        let cfg = QuantConfig {
            group_size: 4,
            block_size: 2,
            ..QuantConfig::with_bits(4)
        };
        let q = quantize_layer(&w, &gram_hessian(&x), &cfg).unwrap();
        assert_eq!(q.dequantize(), w);
        assert_eq!(q.recon_error, 0.0);
    }

    /// Independent replay: explicit inverse Hessian, immediate updates and a
    /// rank-one downdate after each column.
    fn replay(w0: &DenseMatrix, h: &HessianState, cfg: &QuantConfig, trace: &[ColumnTrace]) -> f64 {
        let cols = w0.cols();
        let mut w = w0.clone();
        let mut hinv = invert_spd(h.h()).unwrap();
        let mut params = None;
        let mut worst: f64 = 0.0;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        for j in 0..cols {
            if j % cfg.group_size == 0 {
                let g1 = (j + cfg.group_size).min(cols);
                params = Some(cfg.fit(w.col_range(j, g1).data(), j / cfg.group_size));
            }
            let p = params.unwrap();
            let t = &trace[j];
            for r in 0..w.rows() {
                worst = worst.max(rel(w[(r, j)], t.weights[r]));
                let (_, q) = quant_dequant(w[(r, j)], &p, cfg.bits);
                let e = (w[(r, j)] - q) / hinv[(j, j)];
                worst = worst.max(rel(e, t.errors[r]));
                for k in j + 1..cols {
                    let step = e * hinv[(j, k)];
                    let applied = t.errors[r] * t.hinv_row[k - j];
                    worst = worst.max(rel(step, applied));
                    w[(r, k)] -= step;
                }
            }
            for k in j..cols {
                worst = worst.max(rel(hinv[(j, k)], t.hinv_row[k - j]));
            }
            let pivot = hinv[(j, j)];
            let row: Vec<f64> = (0..cols).map(|k| hinv[(j, k)]).collect();
            for a in 0..cols {
                for b in 0..cols {
                    hinv[(a, b)] -= row[a] * row[b] / pivot;
                }
            }
        }
        worst
    }

    #[test]
    fn compensation_matches_replay() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (rows, cols) = (4 + seed as usize % 5, 6 + seed as usize % 7);
            let w = random(rows, cols, &mut rng);
            let x = random(3 * cols, cols, &mut rng);
            let h = gram_hessian(&x);
            for (gs, bs) in [(4, 2), (3, 5), (128, 128)] {
                let cfg = QuantConfig {
                    group_size: gs,
                    block_size: bs,
                    ..QuantConfig::with_bits(2)
                };
                let (_, trace) = quantize_layer_traced(&w, &h, &cfg).unwrap();
                let worst = replay(&w, &h, &cfg, &trace);
                assert!(worst < 1e-10, "seed {seed} gs {gs} bs {bs}: {worst:e}");
            }
        }
    }

    #[test]
    fn recon_error_is_damped_proxy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random(5, 12, &mut rng);
        let x = random(30, 12, &mut rng);
        let h = gram_hessian(&x);
        let cfg = QuantConfig {
            group_size: 4,
            block_size: 3,
            ..QuantConfig::with_bits(2)
        };
        let q = quantize_layer(&w, &h, &cfg).unwrap();
        let proxy = proxy_objective(&w, &q.dequantize(), h.h()).unwrap();
        assert!((q.recon_error - proxy).abs() < 1e-9 * proxy.max(1.0));
    }

    #[test]
    fn beats_round_to_nearest_on_proxy() {
        let mut wins = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random(4, 4, &mut rng);
            let x = random(12, 4, &mut rng);
            let h = gram_hessian(&x);
            let cfg = QuantConfig {
                group_size: 4,
                block_size: 2,
                ..QuantConfig::with_bits(4)
            };
            let q = quantize_layer(&w, &h, &cfg).unwrap();
            let r = rtn(&w, "l", &cfg).unwrap();
            let undamped = h.undamped();
            let pq = proxy_objective(&w, &q.dequantize(), &undamped).unwrap();
            let pr = proxy_objective(&w, &r.dequantize(), &undamped).unwrap();
            if pq <= pr {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}/100");
    }

    #[test]
    fn layer_invariants_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random(7, 11, &mut rng);
        let x = random(25, 11, &mut rng);
        let h = gram_hessian(&x);
        let cfg = QuantConfig {
            group_size: 5,
            block_size: 4,
            ..QuantConfig::with_bits(4)
        };
        let a = quantize_layer(&w, &h, &cfg).unwrap();
        let b = quantize_layer(&w, &h, &cfg).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.groups.len(), 3);
        let deq = a.dequantize();
        for r in 0..7 {
            for c in 0..11 {
                let p = a.group_of(c);
                assert_eq!(
                    deq[(r, c)],
                    (a.code(r, c) as f64 - p.zero_point as f64) * p.scale
                );
            }
        }
    }

    #[test]
    fn input_errors() {
        let w = DenseMatrix::zeros(3, 4);
        let cfg = QuantConfig::default();
        assert!(matches!(
            quantize_layer(&w, &damped_identity(5), &cfg),
            Err(Error::Shape { .. })
        ));
        let undamped = HessianState::from_matrix("l", DenseMatrix::identity(4)).unwrap();
        assert!(quantize_layer(&w, &undamped, &cfg).is_err());
        assert!(quantize_layer(&w, &damped_identity(4), &QuantConfig::with_bits(3)).is_err());
        let mut bad = w.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(
            quantize_layer(&bad, &damped_identity(4), &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn reconstruction_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 8;
        let w = AttentionLayerWeights::new(
            random(d, d, &mut rng),
            random(d, d, &mut rng),
            random(d, d, &mut rng),
            random(d, d, &mut rng),
            2,
        )
        .unwrap();
        let batches: Vec<_> = (0..3)
            .map(|i| CalibrationBatch::new(random(5, d, &mut rng), format!("b{i}")))
            .collect();
        assert_eq!(
            attention_reconstruction_error(&w, &w, &batches, true).unwrap(),
            0.0
        );

        let delta = random(d, d, &mut rng).scale(0.1);
        let mut perturbed = w.clone();
        perturbed.wo = w.wo.add(&delta).unwrap();
        let got = attention_reconstruction_error(&w, &perturbed, &batches, false).unwrap();
        let mut want = 0.0;
        for b in &batches {
            let c = crate::transformer::attention_intermediates(&w, &b.x, false)
                .unwrap()
                .concat;
            want += matmul(&c, &delta).unwrap().frobenius_sq();
        }
        assert!((got - want).abs() < 1e-10 * want.max(1.0));

        let f = FeedForwardWeights::new(
            random(d, 12, &mut rng),
            random(12, d, &mut rng),
            Default::default(),
        )
        .unwrap();
        assert_eq!(
            feedforward_reconstruction_error(&f, &f, &batches).unwrap(),
            0.0
        );
        let mut g = f.clone();
        g.w2 = g.w2.scale(1.1);
        assert!(feedforward_reconstruction_error(&f, &g, &batches).unwrap() > 0.0);
    }
}
