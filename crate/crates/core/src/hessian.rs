//! Proxy Hessians: accumulation, damping, the inverse factor consumed by the
//! quantization loop, and the average-trace sensitivity statistic.
//!
//! A Hessian is kept as a per-token mean: each contribution `2·Σ G Gᵀ` is
//! weighted by the number of tokens it came from and the running matrix is
//! the weighted average. For a linear layer with token-major input `X` this
//! gives exactly `2 XᵀX / tokens`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{grad_family, GradientWorkspace, SensitivitySeed, WeightFamily};
use crate::linalg::{cholesky, invert_spd, matmul_nt, DenseMatrix};
use crate::transformer::AttentionLayerWeights;

/// Default damping: 1% of the mean diagonal.
pub const DEFAULT_DAMP_PERCENT: f64 = 0.01;
/// Largest `n · d_out` the Gauss-Newton oracle accepts.
pub const ORACLE_MAX_OUTPUTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct HessianState {
    pub layer_id: String,
    dim: usize,
    h: DenseMatrix,
    nsamples: usize,
    damped: bool,
    /// Amount added to every diagonal entry by [`HessianState::damp`].
    damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub layer_id: String,
    pub avg_trace: f64,
    pub param_count: usize,
}

impl HessianState {
    pub fn new(layer_id: impl Into<String>, dim: usize) -> Self {
        Self {
            layer_id: layer_id.into(),
            dim,
            h: DenseMatrix::zeros(dim, dim),
            nsamples: 0,
            damped: false,
            damping: 0.0,
        }
    }

    /// Wraps an existing matrix as a one-sample state. Used for tests and
    /// externally supplied Hessians.
    pub fn from_matrix(layer_id: impl Into<String>, h: DenseMatrix) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::shape("HessianState", "matrix is not square"));
        }
        let asym = h.asymmetry();
        if asym > crate::linalg::SYMMETRY_TOL {
            return Err(Error::shape(
                "HessianState",
                format!("matrix is not symmetric (relative asymmetry {asym:e})"),
            ));
        }
        Ok(Self {
            layer_id: layer_id.into(),
            dim: h.rows(),
            h,
            nsamples: 1,
            damped: false,
            damping: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn nsamples(&self) -> usize {
        self.nsamples
    }

    pub fn is_damped(&self) -> bool {
        self.damped
    }

    /// The accumulated matrix without the damping term.
    pub fn undamped(&self) -> DenseMatrix {
        let mut h = self.h.clone();
        for i in 0..self.dim {
            h[(i, i)] -= self.damping;
        }
        h
    }

    fn add_contribution(&mut self, mut gram_sum: DenseMatrix, tokens: usize) -> Result<()> {
        if self.damped {
            return Err(Error::Config(format!(
                "hessian '{}' already damped; accumulate before damping",
                self.layer_id
            )));
        }
        if !gram_sum.is_finite() {
            return Err(Error::NonFinite(format!(
                "hessian contribution for '{}'",
                self.layer_id
            )));
        }
        let total = self.nsamples + tokens;
        if total == 0 {
            return Ok(());
        }
        // h ← (h·n + 2·Σ) / (n + t)
        gram_sum.scale_in_place(2.0 / total as f64);
        self.h.scale_in_place(self.nsamples as f64 / total as f64);
        self.h.add_scaled(&gram_sum, 1.0)?;
        self.h.symmetrize();
        self.nsamples = total;
        Ok(())
    }

    /// Adds `2·x·xᵀ` for `x` in features × tokens orientation.
    pub fn accumulate_linear(&mut self, x: &DenseMatrix) -> Result<()> {
        if x.rows() != self.dim {
            return Err(Error::shape(
                "accumulate_linear",
                format!(
                    "input has {} features, hessian dim is {}",
                    x.rows(),
                    self.dim
                ),
            ));
        }
        self.add_contribution(matmul_nt(x, x)?, x.cols())
    }

    /// Same as [`accumulate_linear`](Self::accumulate_linear) for token-major input (`tokens × features`).
    pub fn accumulate_tokens(&mut self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::shape(
                "accumulate_tokens",
                format!(
                    "input has {} features, hessian dim is {}",
                    x.cols(),
                    self.dim
                ),
            ));
        }
        self.add_contribution(x.gram(), x.rows())
    }

    /// Adds `2·Σ G Gᵀ` over gradients that together stand for `tokens` tokens.
    pub fn accumulate_attention(&mut self, grads: &[DenseMatrix], tokens: usize) -> Result<()> {
        let mut sum = DenseMatrix::zeros(self.dim, self.dim);
        for g in grads {
            if g.rows() != self.dim {
                return Err(Error::shape(
                    "accumulate_attention",
                    format!(
                        "gradient has {} rows, hessian dim is {}",
                        g.rows(),
                        self.dim
                    ),
                ));
            }
            sum.add_scaled(&matmul_nt(g, g)?, 1.0)?;
        }
        self.add_contribution(sum, tokens)
    }

    /// Weighted merge of two partial accumulations over disjoint data.
    pub fn merge(&mut self, other: &HessianState) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::shape("merge", "hessian dimensions differ"));
        }
        if self.damped || other.damped {
            return Err(Error::Config("cannot merge damped hessians".into()));
        }
        let total = self.nsamples + other.nsamples;
        if total == 0 {
            return Ok(());
        }
        self.h.scale_in_place(self.nsamples as f64 / total as f64);
        self.h
            .add_scaled(&other.h, other.nsamples as f64 / total as f64)?;
        self.h.symmetrize();
        self.nsamples = total;
        Ok(())
    }

    /// `h += percent · mean(diag h) · I`, or `percent · I` when the diagonal is all zero.
    pub fn damp(&mut self, percent: f64) -> Result<()> {
        if !percent.is_finite() || percent <= 0.0 {
            return Err(Error::Config(format!(
                "damping percent {percent} must be > 0"
            )));
        }
        let mean_diag = self.h.trace() / self.dim.max(1) as f64;
        let lambda = if mean_diag > 0.0 {
            percent * mean_diag
        } else {
            percent
        };
        for i in 0..self.dim {
            self.h[(i, i)] += lambda;
        }
        self.damping += lambda;
        self.damped = true;
        Ok(())
    }

    /// Upper-triangular `U` with `H⁻¹ = Uᵀ U`.
    ///
    /// Row `j` of `U` scaled by `U[j][j]` is row `j` of the inverse Hessian
    /// after columns `0..j` have been eliminated, which is what the
    /// column loop needs.
    pub fn inverse_upper_factor(&self) -> Result<DenseMatrix> {
        if !self.damped {
            return Err(Error::Config(format!(
                "hessian '{}' must be damped before factorization",
                self.layer_id
            )));
        }
        let h_inv = invert_spd(&self.h)?;
        Ok(cholesky(&h_inv)?.to_dense().transpose())
    }

    /// Average trace of the undamped accumulation.
    pub fn avg_trace(&self, param_count: usize) -> Result<SensitivityRecord> {
        if self.nsamples == 0 {
            return Err(Error::Config(format!(
                "hessian '{}' has no samples",
                self.layer_id
            )));
        }
        let trace = self.h.trace() - self.damping * self.dim as f64;
        Ok(SensitivityRecord {
            layer_id: self.layer_id.clone(),
            avg_trace: trace / self.dim as f64,
            param_count,
        })
    }
}

/// True when `h + shift·I` admits a Cholesky factorization, i.e. the smallest
/// eigenvalue of `h` exceeds `-shift`.
pub fn psd_probe(h: &DenseMatrix, shift: f64) -> bool {
    let mut shifted = h.clone();
    for i in 0..h.rows() {
        shifted[(i, i)] += shift;
    }
    cholesky(&shifted).is_ok()
}

fn gauss_newton_sum<F>(
    n: usize,
    d_model: usize,
    d_in: usize,
    d_out: usize,
    grad: F,
) -> Result<DenseMatrix>
where
    F: Fn(&SensitivitySeed) -> Result<DenseMatrix>,
{
    if n * d_model > ORACLE_MAX_OUTPUTS {
        return Err(Error::Config(format!(
            "Gauss-Newton oracle limited to {ORACLE_MAX_OUTPUTS} outputs, got {n}x{d_model}"
        )));
    }
    let mut sum = DenseMatrix::zeros(d_in, d_in);
    for index in 0..n * d_model {
        let e = SensitivitySeed::basis(n, d_model, index)?;
        let g = grad(&e)?;
        sum.add_scaled(&matmul_nt(&g, &g)?, 1.0)?;
    }
    sum.scale_in_place(2.0 / d_out as f64);
    Ok(sum)
}

/// Reference Gauss-Newton Hessian for one attention weight matrix.
///
/// Seeds every output basis direction `e` and returns
/// `(2 / d_out) · Σ_e G(e) G(e)ᵀ`: the exact `2·JᵀJ` diagonal blocks averaged
/// over the weight's output columns. For `Wo` this equals `2 CᵀC`, which is
/// `n` times the per-token production Hessian built with identity seeds.
/// Tiny problems only.
pub fn gauss_newton_oracle(
    w: &AttentionLayerWeights,
    x: &DenseMatrix,
    family: WeightFamily,
    causal: bool,
) -> Result<DenseMatrix> {
    let ws = GradientWorkspace::new(w, x, causal)?;
    let d = w.d_model();
    gauss_newton_sum(x.rows(), d, d, d, |s| grad_family(&ws, s, w, family))
}

/// Reference Gauss-Newton Hessian of `F = X·W` for a linear weight `W` (`d_in x d_out`).
pub fn gauss_newton_oracle_linear(w: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != w.rows() {
        return Err(Error::shape(
            "gauss_newton_oracle_linear",
            "input width mismatch",
        ));
    }
    let (n, d_out) = (x.rows(), w.cols());
    gauss_newton_sum(n, d_out, w.rows(), d_out, |s| {
        crate::linalg::matmul_tn(x, &s.s)
    })
}

/// Serializes sensitivity records as tab-separated `layer_id avg_trace param_count`
/// lines sorted by layer id, after a `#` header line.
pub fn write_sensitivity_table(records: &[SensitivityRecord]) -> String {
    let mut sorted: Vec<&SensitivityRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.layer_id.cmp(&b.layer_id));
    let mut out = String::from("# layer_id\tavg_trace\tparam_count\n");
    for r in sorted {
        out.push_str(&format!(
            "{}\t{:e}\t{}\n",
            r.layer_id, r.avg_trace, r.param_count
        ));
    }
    out
}

pub fn parse_sensitivity_table(text: &str) -> Result<Vec<SensitivityRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Format(format!("sensitivity table line {}: '{line}'", lineno + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let avg_trace: f64 = fields[1].parse().map_err(|_| bad())?;
        if !avg_trace.is_finite() {
            return Err(bad());
        }
        records.push(SensitivityRecord {
            layer_id: fields[0].to_string(),
            avg_trace,
            param_count: fields[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::grad_wo;
    use crate::linalg::matmul_tn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_attention(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> AttentionLayerWeights {
        AttentionLayerWeights::new(
            random(d, d, rng),
            random(d, d, rng),
            random(d, d, rng),
            random(d, d, rng),
            heads,
        )
        .unwrap()
    }

    #[test]
    fn zero_input_contributes_nothing() {
        let mut st = HessianState::new("l", 3);
        st.accumulate_linear(&DenseMatrix::zeros(3, 4)).unwrap();
        assert_eq!(st.h(), &DenseMatrix::zeros(3, 3));
        assert_eq!(st.nsamples(), 4);
    }

    #[test]
    fn single_token_outer_product() {
        let mut st = HessianState::new("l", 2);
        st.accumulate_linear(&DenseMatrix::from_rows(&[[1.0], [2.0]]))
            .unwrap();
        assert_eq!(st.h(), &DenseMatrix::from_rows(&[[2.0, 4.0], [4.0, 8.0]]));
    }

    #[test]
    fn equal_batches_match_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(4, 5, &mut rng);
        let mut twice = HessianState::new("l", 4);
        twice.accumulate_linear(&x).unwrap();
        twice.accumulate_linear(&x).unwrap();
        let mut once = HessianState::new("l", 4);
        once.accumulate_linear(&DenseMatrix::hconcat(&[x.clone(), x]).unwrap())
            .unwrap();
        assert!(twice.h().sub(once.h()).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn token_major_and_feature_major_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(6, 3, &mut rng);
        let mut a = HessianState::new("l", 3);
        a.accumulate_tokens(&x).unwrap();
        let mut b = HessianState::new("l", 3);
        b.accumulate_linear(&x.transpose()).unwrap();
        assert!(a.h().sub(b.h()).unwrap().max_abs() < 1e-12);
        assert!(a.accumulate_tokens(&DenseMatrix::zeros(2, 4)).is_err());
        assert!(a.accumulate_linear(&DenseMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn zero_gradients_contribute_nothing() {
        let mut st = HessianState::new("l", 3);
        st.accumulate_attention(&[DenseMatrix::zeros(3, 2), DenseMatrix::zeros(3, 2)], 4)
            .unwrap();
        assert_eq!(st.h(), &DenseMatrix::zeros(3, 3));
        assert!(st
            .accumulate_attention(&[DenseMatrix::zeros(2, 2)], 1)
            .is_err());
    }

    #[test]
    fn output_weight_reduces_to_effective_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_attention(8, 2, &mut rng);
        let x = random(6, 8, &mut rng);
        let ws = GradientWorkspace::new(&w, &x, false).unwrap();
        let mut attn = HessianState::new("wo", 8);
        let grads: Vec<DenseMatrix> = SensitivitySeed::identity_padded_family(6, 8)
            .iter()
            .map(|s| grad_wo(&ws, s).unwrap())
            .collect();
        attn.accumulate_attention(&grads, 6).unwrap();
        let mut expected = matmul_tn(&ws.inter.concat, &ws.inter.concat).unwrap();
        expected.scale_in_place(2.0 / 6.0);
        let rel = attn.h().sub(&expected).unwrap().frobenius_norm() / expected.frobenius_norm();
        assert!(rel < 1e-10, "{rel:e}");
    }

    #[test]
    fn single_gradient_gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random(5, 2, &mut rng);
        let mut st = HessianState::new("l", 5);
        st.accumulate_attention(&[g], 1).unwrap();
        assert!(psd_probe(st.h(), 1e-10));
        // rank 2 in dimension 5: not strictly definite without a shift
        assert!(!psd_probe(st.h(), -1e-6));
    }

    #[test]
    fn damping_cases() {
        let mut st = HessianState::from_matrix("l", DenseMatrix::identity(3)).unwrap();
        st.damp(0.01).unwrap();
        for i in 0..3 {
            assert!((st.h()[(i, i)] - 1.01).abs() < 1e-15);
        }
        let mut zero = HessianState::from_matrix("l", DenseMatrix::zeros(2, 2)).unwrap();
        zero.damp(0.01).unwrap();
        assert_eq!(zero.h(), &DenseMatrix::diag(&[0.01, 0.01]));
        assert!(zero.damp(0.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random(4, 1, &mut rng);
        let mut rank_one = HessianState::new("l", 4);
        rank_one.accumulate_attention(&[g], 1).unwrap();
        assert!(cholesky(rank_one.h()).is_err());
        rank_one.damp(DEFAULT_DAMP_PERCENT).unwrap();
        assert!(cholesky(rank_one.h()).is_ok());
        assert!(rank_one
            .accumulate_tokens(&DenseMatrix::zeros(1, 4))
            .is_err());
    }

    #[test]
    fn inverse_factor_cases() {
        let mut st = HessianState::from_matrix("l", DenseMatrix::identity(3)).unwrap();
        assert!(st.inverse_upper_factor().is_err());
        st.damp(1e-300).unwrap();
        let u = st.inverse_upper_factor().unwrap();
        assert!(u.sub(&DenseMatrix::identity(3)).unwrap().max_abs() < 1e-12);

        let mut st = HessianState::from_matrix("l", DenseMatrix::diag(&[4.0, 1.0])).unwrap();
        st.damp(1e-300).unwrap();
        let u = st.inverse_upper_factor().unwrap();
        let recon = matmul_tn(&u, &u).unwrap();
        assert!(
            recon
                .sub(&DenseMatrix::diag(&[0.25, 1.0]))
                .unwrap()
                .max_abs()
                < 1e-12
        );

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(8, 20, &mut rng);
        let mut st = HessianState::new("l", 8);
        st.accumulate_linear(&x).unwrap();
        st.damp(DEFAULT_DAMP_PERCENT).unwrap();
        let u = st.inverse_upper_factor().unwrap();
        for i in 0..8 {
            for j in 0..i {
                assert_eq!(u[(i, j)], 0.0);
            }
        }
        let recon = matmul_tn(&u, &u).unwrap();
        let inv = invert_spd(st.h()).unwrap();
        assert!(recon.sub(&inv).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn avg_trace_cases() {
        let st = HessianState::from_matrix("l", DenseMatrix::identity(4)).unwrap();
        assert_eq!(st.avg_trace(16).unwrap().avg_trace, 1.0);

        let mut st = HessianState::new("l", 2);
        st.accumulate_linear(&DenseMatrix::from_rows(&[[1.0], [2.0]]))
            .unwrap();
        assert_eq!(st.h().trace(), 10.0);
        let rec = st.avg_trace(6).unwrap();
        assert_eq!((rec.avg_trace, rec.param_count), (5.0, 6));
        // damping does not leak into the statistic
        st.damp(0.5).unwrap();
        assert!((st.avg_trace(6).unwrap().avg_trace - 5.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(3, 7, &mut rng);
        let alpha = 1.7;
        let mut a = HessianState::new("l", 3);
        a.accumulate_linear(&x).unwrap();
        let mut b = HessianState::new("l", 3);
        b.accumulate_linear(&x.scale(alpha)).unwrap();
        let ra = a.avg_trace(1).unwrap().avg_trace;
        let rb = b.avg_trace(1).unwrap().avg_trace;
        assert!((rb - alpha * alpha * ra).abs() < 1e-12 * rb);

        assert!(HessianState::new("l", 2).avg_trace(1).is_err());
    }

    #[test]
    fn oracle_linear_collapses_to_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(5, 3, &mut rng);
        let w = random(3, 4, &mut rng);
        let oracle = gauss_newton_oracle_linear(&w, &x).unwrap();
        let mut expected = x.gram();
        expected.scale_in_place(2.0);
        assert!(oracle.sub(&expected).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn oracle_output_weight_is_scaled_concat_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_attention(4, 2, &mut rng);
        let x = random(5, 4, &mut rng);
        let oracle = gauss_newton_oracle(&w, &x, WeightFamily::Output, false).unwrap();
        let ws = GradientWorkspace::new(&w, &x, false).unwrap();
        let mut expected = ws.inter.concat.gram();
        expected.scale_in_place(2.0);
        assert!(oracle.sub(&expected).unwrap().max_abs() < 1e-12);

        // production path with identity seeds is the per-token mean of the same thing
        let mut st = HessianState::new("wo", 4);
        let grads: Vec<_> = SensitivitySeed::identity_padded_family(5, 4)
            .iter()
            .map(|s| grad_wo(&ws, s).unwrap())
            .collect();
        st.accumulate_attention(&grads, 5).unwrap();
        assert!(st.h().scale(5.0).sub(&oracle).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn oracle_zero_input_and_size_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = random_attention(4, 2, &mut rng);
        for fam in WeightFamily::ALL {
            let h = gauss_newton_oracle(&w, &DenseMatrix::zeros(3, 4), fam, false).unwrap();
            assert_eq!(h, DenseMatrix::zeros(4, 4));
        }
        assert!(matches!(
            gauss_newton_oracle(&w, &DenseMatrix::zeros(17, 4), WeightFamily::Query, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn batch_order_and_merge_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batches: Vec<DenseMatrix> = (0..6).map(|_| random(5, 4, &mut rng)).collect();
        let mut forward = HessianState::new("l", 5);
        for b in &batches {
            forward.accumulate_linear(b).unwrap();
        }
        let mut backward = HessianState::new("l", 5);
        for b in batches.iter().rev() {
            backward.accumulate_linear(b).unwrap();
        }
        let rel =
            forward.h().sub(backward.h()).unwrap().frobenius_norm() / forward.h().frobenius_norm();
        assert!(rel < 1e-10);

        let mut left = HessianState::new("l", 5);
        let mut right = HessianState::new("l", 5);
        for (i, b) in batches.iter().enumerate() {
            if i % 2 == 0 { &mut left } else { &mut right }
                .accumulate_linear(b)
                .unwrap();
        }
        left.merge(&right).unwrap();
        let rel =
            forward.h().sub(left.h()).unwrap().frobenius_norm() / forward.h().frobenius_norm();
        assert!(rel < 1e-10);
        assert_eq!(left.nsamples(), forward.nsamples());
        assert!(forward.h().asymmetry() < 1e-9);
    }

    #[test]
    fn sensitivity_table_is_sorted_and_parses() {
        let records = vec![
            SensitivityRecord {
                layer_id: "b".into(),
                avg_trace: 3.25,
                param_count: 10,
            },
            SensitivityRecord {
                layer_id: "a".into(),
                avg_trace: 1.0e-7,
                param_count: 4,
            },
        ];
        let text = write_sensitivity_table(&records);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("a\t"));
        let parsed = parse_sensitivity_table(&text).unwrap();
        assert_eq!(parsed[0], records[1]);
        assert_eq!(parsed[1], records[0]);
        assert!(parse_sensitivity_table("a\tnope\t3\n").is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut h = HessianState::new("l", 2);
        let x = DenseMatrix::from_rows(&[vec![1.0, f64::NAN]]);
        assert!(matches!(h.accumulate_tokens(&x), Err(Error::NonFinite(_))));
        assert_eq!(h.nsamples(), 0);
    }
}
