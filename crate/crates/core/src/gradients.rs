//! Closed-form gradients of the attention output with respect to each of its
//! four weight matrices, plus the finite-difference oracle that checks them.
//!
//! The output `F` is a matrix, so every gradient here is taken of the scalar
//! `<S, F>` for an upstream sensitivity seed `S` shaped like `F`. With seed
//! `S` the backward pass is:
//!
//! ```text
//! dC      = S Woᵀ                       dWo   = Cᵀ S
//! dhead_h = S Wo_hᵀ                     dWv_h = (P_h X)ᵀ S Wo_hᵀ
//! B_h     = dhead_h (X Wv_h)ᵀ           T_h   = P_h ⊙ (B_h − rowsum(P_h ⊙ B_h))
//! dWq_h   = Xᵀ T_h X Wk_h / √d_k        dWk_h = Xᵀ T_hᵀ X Wq_h / √d_k
//! ```
//!
//! Head selection is done by slicing head blocks; no selector matrix is built.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, DenseMatrix};
use crate::transformer::{attention_intermediates, AttentionIntermediates, AttentionLayerWeights};

/// Central-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedKind {
    /// Ones on the diagonal `(offset + i, i)`; `offset` tiles sequences longer than `d_model`.
    IdentityPadded {
        offset: usize,
    },
    RandomGaussian {
        seed: u64,
    },
    /// A single one at flat row-major position `index`.
    Basis {
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySeed {
    pub s: DenseMatrix,
    pub kind: SeedKind,
}

impl SensitivitySeed {
    /// `n x d_model` matrix with ones on the main diagonal.
    pub fn identity_padded(n: usize, d_model: usize) -> Self {
        Self::identity_tile(n, d_model, 0)
    }

    fn identity_tile(n: usize, d_model: usize, offset: usize) -> Self {
        let s = DenseMatrix::from_fn(n, d_model, |r, c| if r == offset + c { 1.0 } else { 0.0 });
        Self {
            s,
            kind: SeedKind::IdentityPadded { offset },
        }
    }

    /// Identity-padded seeds covering every token: `Σ S Sᵀ = I_n`.
    ///
    /// One seed when `n <= d_model`; otherwise `⌈n / d_model⌉` seeds whose
    /// diagonals are shifted down by multiples of `d_model`.
    pub fn identity_padded_family(n: usize, d_model: usize) -> Vec<Self> {
        (0..n.div_ceil(d_model))
            .map(|k| Self::identity_tile(n, d_model, k * d_model))
            .collect()
    }

    pub fn random_gaussian(n: usize, d_model: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = DenseMatrix::from_fn(n, d_model, |_, _| StandardNormal.sample(&mut rng));
        Self {
            s,
            kind: SeedKind::RandomGaussian { seed },
        }
    }

    pub fn basis(n: usize, d_model: usize, index: usize) -> Result<Self> {
        if index >= n * d_model {
            return Err(Error::shape(
                "SensitivitySeed::basis",
                format!("index {index} outside {n}x{d_model}"),
            ));
        }
        let mut s = DenseMatrix::zeros(n, d_model);
        s.data_mut()[index] = 1.0;
        Ok(Self {
            s,
            kind: SeedKind::Basis { index },
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            s: self.s.scale(alpha),
            kind: self.kind,
        }
    }
}

/// How the production Hessian picks its sensitivity seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedPolicy {
    #[default]
    IdentityPadded,
    /// `count` independent Gaussian seeds. `E[S Sᵀ]`-weighted, so the
    /// accumulated Hessian is an unbiased (scaled) estimate of the full
    /// Gauss-Newton block sum.
    RandomGaussian { count: usize, seed: u64 },
    /// Every output basis direction: the exact Gauss-Newton sum. Tiny shapes only.
    FullBasis,
}

impl SeedPolicy {
    pub fn seeds(&self, n: usize, d_model: usize, sample: u64) -> Vec<SensitivitySeed> {
        match *self {
            SeedPolicy::IdentityPadded => SensitivitySeed::identity_padded_family(n, d_model),
            SeedPolicy::RandomGaussian { count, seed } => (0..count as u64)
                .map(|k| {
                    let mixed = crate::rng::mix(seed, sample.wrapping_mul(0x9e37_79b9) ^ k);
                    SensitivitySeed::random_gaussian(n, d_model, mixed)
                })
                .collect(),
            SeedPolicy::FullBasis => (0..n * d_model)
                .map(|i| SensitivitySeed::basis(n, d_model, i).expect("index in range"))
                .collect(),
        }
    }

    /// Same policy with its random stream (if any) replaced.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            SeedPolicy::RandomGaussian { count, .. } => SeedPolicy::RandomGaussian { count, seed },
            other => other,
        }
    }

    /// Scale applied so `Σ S Sᵀ` averages to the identity over the seed set.
    pub fn normalization(&self, d_model: usize) -> f64 {
        match *self {
            SeedPolicy::IdentityPadded => 1.0,
            SeedPolicy::RandomGaussian { count, .. } => 1.0 / (count.max(1) * d_model) as f64,
            SeedPolicy::FullBasis => 1.0 / d_model as f64,
        }
    }
}

impl std::fmt::Display for SeedPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeedPolicy::IdentityPadded => write!(f, "identity"),
            SeedPolicy::RandomGaussian { count, .. } => write!(f, "gaussian:{count}"),
            SeedPolicy::FullBasis => write!(f, "basis"),
        }
    }
}

/// Parses `identity`, `basis` or `gaussian:<count>`; the Gaussian stream seed is left at 0.
impl std::str::FromStr for SeedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(SeedPolicy::IdentityPadded),
            "basis" => Ok(SeedPolicy::FullBasis),
            _ => {
                let count = s
                    .strip_prefix("gaussian:")
                    .and_then(|c| c.parse::<usize>().ok())
                    .filter(|&c| c > 0)
                    .ok_or_else(|| Error::Config(format!("unknown seed policy '{s}'")))?;
                Ok(SeedPolicy::RandomGaussian { count, seed: 0 })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightFamily {
    Query,
    Key,
    Value,
    Output,
}

impl WeightFamily {
    pub const ALL: [WeightFamily; 4] = [
        WeightFamily::Query,
        WeightFamily::Key,
        WeightFamily::Value,
        WeightFamily::Output,
    ];

    pub fn weight<'a>(&self, w: &'a AttentionLayerWeights) -> &'a DenseMatrix {
        match self {
            WeightFamily::Query => &w.wq,
            WeightFamily::Key => &w.wk,
            WeightFamily::Value => &w.wv,
            WeightFamily::Output => &w.wo,
        }
    }

    pub fn weight_mut<'a>(&self, w: &'a mut AttentionLayerWeights) -> &'a mut DenseMatrix {
        match self {
            WeightFamily::Query => &mut w.wq,
            WeightFamily::Key => &mut w.wk,
            WeightFamily::Value => &mut w.wv,
            WeightFamily::Output => &mut w.wo,
        }
    }
}

/// Which matrix multiplies the softmax in the value-path gradient.
///
/// `Input` (default) uses `M_h = P_h X`, which is the correct chain rule for
/// `Wv`. `Projected` keeps the literal alternative `M_h = P_h (X Wv)` for
/// comparison; it is not a gradient of the attention output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValuePath {
    #[default]
    Input,
    Projected,
}

/// Forward intermediates frozen for the backward formulas.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    pub x: DenseMatrix,
    pub inter: AttentionIntermediates,
}

impl GradientWorkspace {
    pub fn new(w: &AttentionLayerWeights, x: &DenseMatrix, causal: bool) -> Result<Self> {
        Ok(Self {
            x: x.clone(),
            inter: attention_intermediates(w, x, causal)?,
        })
    }

    fn check_seed(&self, s: &SensitivitySeed) -> Result<()> {
        if s.s.shape() != self.inter.output.shape() {
            return Err(Error::shape(
                "sensitivity seed",
                format!(
                    "seed is {}x{}, output is {}x{}",
                    s.s.rows(),
                    s.s.cols(),
                    self.inter.output.rows(),
                    self.inter.output.cols()
                ),
            ));
        }
        if !s.s.is_finite() {
            return Err(Error::NonFinite("sensitivity seed".into()));
        }
        Ok(())
    }

    fn check_weights(&self, w: &AttentionLayerWeights) -> Result<()> {
        if w.d_model() != self.inter.shape.d_model || w.heads != self.inter.shape.heads {
            return Err(Error::shape(
                "gradient workspace",
                "weights do not match the forward pass",
            ));
        }
        Ok(())
    }

    fn check_head(&self, h: usize) -> Result<()> {
        if h >= self.inter.shape.heads {
            return Err(Error::shape(
                "head index",
                format!("head {h} out of range ({} heads)", self.inter.shape.heads),
            ));
        }
        Ok(())
    }
}

/// `∂<S,F>/∂Wo = Cᵀ S`
pub fn grad_wo(ws: &GradientWorkspace, s: &SensitivitySeed) -> Result<DenseMatrix> {
    ws.check_seed(s)?;
    matmul_tn(&ws.inter.concat, &s.s)
}

/// `∂<S,F>/∂Wv`, head blocks placed side by side in `Wv`'s layout.
pub fn grad_wv(
    ws: &GradientWorkspace,
    s: &SensitivitySeed,
    w: &AttentionLayerWeights,
) -> Result<DenseMatrix> {
    grad_wv_with(ws, s, w, ValuePath::Input)
}

pub fn grad_wv_with(
    ws: &GradientWorkspace,
    s: &SensitivitySeed,
    w: &AttentionLayerWeights,
    path: ValuePath,
) -> Result<DenseMatrix> {
    ws.check_seed(s)?;
    ws.check_weights(w)?;
    let projected = match path {
        ValuePath::Input => None,
        ValuePath::Projected => Some(matmul(&ws.x, &w.wv)?),
    };
    let blocks = (0..ws.inter.shape.heads)
        .map(|h| {
            let m = match &projected {
                None => matmul(&ws.inter.probs[h], &ws.x)?,
                Some(xv) => matmul(&ws.inter.probs[h], xv)?,
            };
            let d_head = matmul_nt(&s.s, &w.output_head(h))?;
            matmul_tn(&m, &d_head)
        })
        .collect::<Result<Vec<_>>>()?;
    DenseMatrix::hconcat(&blocks)
}

/// Score-space sensitivity `T_h = ∂<S,F>/∂N_h` through the row softmax.
pub fn score_sensitivity(
    ws: &GradientWorkspace,
    s: &SensitivitySeed,
    w: &AttentionLayerWeights,
    h: usize,
) -> Result<DenseMatrix> {
    ws.check_seed(s)?;
    ws.check_weights(w)?;
    ws.check_head(h)?;
    let d_head = matmul_nt(&s.s, &w.output_head(h))?;
    let b = matmul_nt(&d_head, &ws.inter.values[h])?;
    let p = &ws.inter.probs[h];
    let mut t = DenseMatrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let pr = p.row(r);
        let br = b.row(r);
        let inner: f64 = pr.iter().zip(br).map(|(pi, bi)| pi * bi).sum();
        for (c, tv) in t.row_mut(r).iter_mut().enumerate() {
            *tv = pr[c] * (br[c] - inner);
        }
    }
    Ok(t)
}

/// `∂<S,F>/∂Wq_h`, shape `d_model x d_k`.
pub fn grad_wq(
    ws: &GradientWorkspace,
    s: &SensitivitySeed,
    w: &AttentionLayerWeights,
    h: usize,
) -> Result<DenseMatrix> {
    let t = score_sensitivity(ws, s, w, h)?;
    let scale = 1.0 / (ws.inter.shape.d_k as f64).sqrt();
    // Xᵀ T (X Wk_h)
    let mut g = matmul_tn(&ws.x, &matmul(&t, &ws.inter.keys[h])?)?;
    g.scale_in_place(scale);
    Ok(g)
}

/// `∂<S,F>/∂Wk_h`, shape `d_model x d_k`.
pub fn grad_wk(
    ws: &GradientWorkspace,
    s: &SensitivitySeed,
    w: &AttentionLayerWeights,
    h: usize,
) -> Result<DenseMatrix> {
    let t = score_sensitivity(ws, s, w, h)?;
    let scale = 1.0 / (ws.inter.shape.d_k as f64).sqrt();
    // Xᵀ Tᵀ (X Wq_h)
    let mut g = matmul_tn(&ws.x, &matmul_tn(&t, &ws.inter.queries[h])?)?;
    g.scale_in_place(scale);
    Ok(g)
}

/// Gradient for a whole weight matrix; per-head pieces are assembled by columns.
pub fn grad_family(
    ws: &GradientWorkspace,
    s: &SensitivitySeed,
    w: &AttentionLayerWeights,
    family: WeightFamily,
) -> Result<DenseMatrix> {
    match family {
        WeightFamily::Output => grad_wo(ws, s),
        WeightFamily::Value => grad_wv(ws, s, w),
        WeightFamily::Query => {
            let parts = (0..w.heads)
                .map(|h| grad_wq(ws, s, w, h))
                .collect::<Result<Vec<_>>>()?;
            DenseMatrix::hconcat(&parts)
        }
        WeightFamily::Key => {
            let parts = (0..w.heads)
                .map(|h| grad_wk(ws, s, w, h))
                .collect::<Result<Vec<_>>>()?;
            DenseMatrix::hconcat(&parts)
        }
    }
}

/// `<S, F(W, X)>`
pub fn seeded_objective(
    w: &AttentionLayerWeights,
    x: &DenseMatrix,
    s: &SensitivitySeed,
    causal: bool,
) -> Result<f64> {
    crate::transformer::attention_forward(w, x, causal)?.dot(&s.s)
}

/// Central differences `(f(w + εE_ij) − f(w − εE_ij)) / 2ε` for every entry.
pub fn finite_diff_grad<F>(f: F, w0: &DenseMatrix, step: f64) -> Result<DenseMatrix>
where
    F: Fn(&DenseMatrix) -> Result<f64>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step {step} must be > 0"
        )));
    }
    let mut w = w0.clone();
    let mut grad = DenseMatrix::zeros(w0.rows(), w0.cols());
    for i in 0..w0.data().len() {
        let orig = w.data()[i];
        w.data_mut()[i] = orig + step;
        let plus = f(&w)?;
        w.data_mut()[i] = orig - step;
        let minus = f(&w)?;
        w.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite-difference evaluation at entry {i}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Largest entrywise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &DenseMatrix, b: &DenseMatrix, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
