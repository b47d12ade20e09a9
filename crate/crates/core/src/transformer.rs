//! Self-attention and feed-forward blocks used as the functions the quantizer
//! has to preserve.
//!
//! Self-attention only: queries, keys and values are all projections of the
//! same token matrix `X`. Per head `h`:
//!
//! ```text
//! N_h    = (X Wq_h)(X Wk_h)ᵀ / √d_k
//! P_h    = softmax_rows(N_h)            (upper triangle masked when causal)
//! head_h = P_h (X Wv_h)
//! F      = [head_1 … head_H] · Wo
//! ```
//!
//! `Wq`, `Wk`, `Wv` are split into head slices by columns, `Wo` by rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, softmax_rows, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionShape {
    pub n: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
}

impl AttentionShape {
    pub fn new(n: usize, d_model: usize, heads: usize) -> Result<Self> {
        if n == 0 || d_model == 0 || heads == 0 {
            return Err(Error::shape(
                "AttentionShape",
                format!("counts must be >= 1 (n={n}, d_model={d_model}, heads={heads})"),
            ));
        }
        if !d_model.is_multiple_of(heads) {
            return Err(Error::shape(
                "AttentionShape",
                format!("d_model {d_model} is not divisible by {heads} heads"),
            ));
        }
        Ok(Self {
            n,
            d_model,
            heads,
            d_k: d_model / heads,
        })
    }

    /// Per-head value width; always equal to `d_k`.
    pub fn d_v(&self) -> usize {
        self.d_k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayerWeights {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub wo: DenseMatrix,
    pub heads: usize,
}

impl AttentionLayerWeights {
    pub fn new(
        wq: DenseMatrix,
        wk: DenseMatrix,
        wv: DenseMatrix,
        wo: DenseMatrix,
        heads: usize,
    ) -> Result<Self> {
        let w = Self {
            wq,
            wk,
            wv,
            wo,
            heads,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn d_model(&self) -> usize {
        self.wq.rows()
    }

    pub fn d_k(&self) -> usize {
        self.d_model() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.wq.rows();
        AttentionShape::new(1, d, self.heads)?;
        for (name, m) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ] {
            if m.shape() != (d, d) {
                return Err(Error::shape(
                    "AttentionLayerWeights",
                    format!("{name} is {}x{}, expected {d}x{d}", m.rows(), m.cols()),
                ));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("attention weight {name}")));
            }
        }
        Ok(())
    }

    pub fn shape_for(&self, n: usize) -> Result<AttentionShape> {
        AttentionShape::new(n, self.d_model(), self.heads)
    }

    pub fn query_head(&self, h: usize) -> DenseMatrix {
        let dk = self.d_k();
        self.wq.col_range(h * dk, (h + 1) * dk)
    }

    pub fn key_head(&self, h: usize) -> DenseMatrix {
        let dk = self.d_k();
        self.wk.col_range(h * dk, (h + 1) * dk)
    }

    pub fn value_head(&self, h: usize) -> DenseMatrix {
        let dk = self.d_k();
        self.wv.col_range(h * dk, (h + 1) * dk)
    }

    /// Row slice of `Wo` that consumes head `h`.
    pub fn output_head(&self, h: usize) -> DenseMatrix {
        let dk = self.d_k();
        self.wo.row_range(h * dk, (h + 1) * dk)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBatch {
    pub x: DenseMatrix,
    pub id: String,
}

impl CalibrationBatch {
    pub fn new(x: DenseMatrix, id: impl Into<String>) -> Self {
        Self { x, id: id.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardWeights {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub activation: Activation,
}

impl FeedForwardWeights {
    pub fn new(w1: DenseMatrix, w2: DenseMatrix, activation: Activation) -> Result<Self> {
        if w1.cols() != w2.rows() || w1.rows() != w2.cols() {
            return Err(Error::shape(
                "FeedForwardWeights",
                format!(
                    "w1 {}x{} and w2 {}x{} do not chain back to d_model",
                    w1.rows(),
                    w1.cols(),
                    w2.rows(),
                    w2.cols()
                ),
            ));
        }
        Ok(Self { w1, w2, activation })
    }

    /// `activation(x · w1)`, the input seen by `w2`.
    pub fn hidden(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut hidden = matmul(x, &self.w1)?;
        let act = self.activation;
        hidden
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = act.apply(*v));
        Ok(hidden)
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct AttentionIntermediates {
    pub shape: AttentionShape,
    pub causal: bool,
    /// `X Wq_h`, `X Wk_h`, `X Wv_h` per head.
    pub queries: Vec<DenseMatrix>,
    pub keys: Vec<DenseMatrix>,
    pub values: Vec<DenseMatrix>,
    /// Scaled scores `N_h` before masking.
    pub scores: Vec<DenseMatrix>,
    pub probs: Vec<DenseMatrix>,
    pub heads_out: Vec<DenseMatrix>,
    pub concat: DenseMatrix,
    pub output: DenseMatrix,
}

fn check_input(w: &AttentionLayerWeights, x: &DenseMatrix) -> Result<AttentionShape> {
    if x.cols() != w.d_model() {
        return Err(Error::shape(
            "attention",
            format!(
                "input has {} features, weights expect {}",
                x.cols(),
                w.d_model()
            ),
        ));
    }
    w.shape_for(x.rows())
}

pub fn attention_intermediates(
    w: &AttentionLayerWeights,
    x: &DenseMatrix,
    causal: bool,
) -> Result<AttentionIntermediates> {
    let shape = check_input(w, x)?;
    let q_all = matmul(x, &w.wq)?;
    let k_all = matmul(x, &w.wk)?;
    let v_all = matmul(x, &w.wv)?;
    let inv_sqrt_dk = 1.0 / (shape.d_k as f64).sqrt();

    let mut queries = Vec::with_capacity(shape.heads);
    let mut keys = Vec::with_capacity(shape.heads);
    let mut values = Vec::with_capacity(shape.heads);
    let mut scores = Vec::with_capacity(shape.heads);
    let mut probs = Vec::with_capacity(shape.heads);
    let mut heads_out = Vec::with_capacity(shape.heads);
    for h in 0..shape.heads {
        let (lo, hi) = (h * shape.d_k, (h + 1) * shape.d_k);
        let q = q_all.col_range(lo, hi);
        let k = k_all.col_range(lo, hi);
        let v = v_all.col_range(lo, hi);
        let mut n_h = matmul_nt(&q, &k)?;
        n_h.scale_in_place(inv_sqrt_dk);
        let p = if causal {
            let mut masked = n_h.clone();
            for i in 0..shape.n {
                for j in (i + 1)..shape.n {
                    masked[(i, j)] = f64::NEG_INFINITY;
                }
            }
            softmax_rows(&masked)
        } else {
            softmax_rows(&n_h)
        };
        heads_out.push(matmul(&p, &v)?);
        queries.push(q);
        keys.push(k);
        values.push(v);
        scores.push(n_h);
        probs.push(p);
    }
    let concat = DenseMatrix::hconcat(&heads_out)?;
    let output = matmul(&concat, &w.wo)?;
    Ok(AttentionIntermediates {
        shape,
        causal,
        queries,
        keys,
        values,
        scores,
        probs,
        heads_out,
        concat,
        output,
    })
}

/// Multi-head self-attention output, `n x d_model`.
pub fn attention_forward(
    w: &AttentionLayerWeights,
    x: &DenseMatrix,
    causal: bool,
) -> Result<DenseMatrix> {
    Ok(attention_intermediates(w, x, causal)?.output)
}

/// `activation(x · w1) · w2`
pub fn feedforward_forward(w: &FeedForwardWeights, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != w.w1.rows() {
        return Err(Error::shape(
            "feedforward",
            format!(
                "input has {} features, w1 expects {}",
                x.cols(),
                w.w1.rows()
            ),
        ));
    }
    matmul(&w.hidden(x)?, &w.w2)
}
