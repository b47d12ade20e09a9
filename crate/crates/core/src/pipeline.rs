//! End-to-end flow over a model and a calibration set: full-precision
//! activations, per-layer Hessians, sensitivity, planning, quantization and
//! evaluation.
//!
//! Every block is calibrated on the activations of the full-precision model.
//! Work fans out over segments, blocks and layers with rayon; results are
//! always collected in model order so outputs do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gptq::{proxy_objective, quantize_layer, rtn, QuantConfig, QuantizedLayer};
use crate::gradients::{grad_family, GradientWorkspace, SeedPolicy};
use crate::hessian::{HessianState, SensitivityRecord};
use crate::linalg::matmul;
use crate::model::{parse_layer_id, BlockActivations, LayerRef, Model};
use crate::planner::{allocate_bits, manual_blockwise_plan, uniform_plan, PrecisionPlan};
use crate::rng::{mix, stream_rng, stream_seed, streams};
use crate::store::{fnv1a64, CalibrationSet};
use crate::transformer::{attention_forward, feedforward_forward};

/// Gaussian seeds per block and segment in attention mode.
pub const DEFAULT_SEED_COUNT: usize = 8;
/// Held-out sequences for toy perplexity.
pub const DEFAULT_EVAL_SEQUENCES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianMode {
    /// Attention weights from attention-output gradients, feed-forward from inputs.
    #[default]
    Attention,
    /// Every weight from its own input, `2XXᵀ`.
    Layerwise,
}

impl fmt::Display for HessianMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HessianMode::Attention => "attention",
            HessianMode::Layerwise => "layerwise",
        })
    }
}

impl FromStr for HessianMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(HessianMode::Attention),
            "layerwise" => Ok(HessianMode::Layerwise),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub mode: HessianMode,
    pub seed_policy: SeedPolicy,
    pub causal: bool,
    /// Bits are taken from the plan per layer; the rest applies to all layers.
    pub quant: QuantConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: HessianMode::Attention,
            seed_policy: SeedPolicy::RandomGaussian {
                count: DEFAULT_SEED_COUNT,
                seed: 0,
            },
            causal: true,
            quant: QuantConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlanSpec {
    /// Trace-ranked, `r` = fraction of parameters at 4 bits.
    Ratio(f64),
    Uniform(u8),
    /// First `⌈r · blocks⌉` blocks at 4 bits.
    ManualBlockwise(f64),
}

impl fmt::Display for PlanSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanSpec::Ratio(r) => write!(f, "ratio:{r}"),
            PlanSpec::Uniform(b) => write!(f, "bits:{b}"),
            PlanSpec::ManualBlockwise(r) => write!(f, "manual-blockwise:{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantizer {
    Gptq,
    RoundToNearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Aptq,
    LayerwiseHessian,
    Rtn,
    ManualBlockwise,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Aptq,
        Method::LayerwiseHessian,
        Method::Rtn,
        Method::ManualBlockwise,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Aptq => "aptq",
            Method::LayerwiseHessian => "layerwise-hessian",
            Method::Rtn => "rtn",
            Method::ManualBlockwise => "manual-blockwise",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Undamped Hessians of every quantizable layer, in model order.
#[derive(Debug, Clone)]
pub struct LayerHessians {
    pub mode: HessianMode,
    pub layers: Vec<(LayerRef, HessianState)>,
}

impl LayerHessians {
    pub fn get(&self, id: &str) -> Option<&HessianState> {
        self.layers.iter().find(|(l, _)| l.id == id).map(|(_, h)| h)
    }

    pub fn sensitivity(&self) -> Result<Vec<SensitivityRecord>> {
        self.layers
            .iter()
            .map(|(l, h)| h.avg_trace(l.param_count()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockError {
    pub block: usize,
    pub attention: f64,
    pub ffn: f64,
}

impl BlockError {
    pub fn total(&self) -> f64 {
        self.attention + self.ffn
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub blocks: Vec<BlockError>,
    /// `Σ_segments ||X ΔW||²` with `X` the layer's full-precision input.
    pub layer_errors: BTreeMap<String, f64>,
}

impl Evaluation {
    /// Sum of the attention and feed-forward output errors over blocks.
    pub fn total(&self) -> f64 {
        self.blocks.iter().map(BlockError::total).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeOutcome {
    pub records: Vec<SensitivityRecord>,
    pub plan: PrecisionPlan,
    pub layers: Vec<QuantizedLayer>,
}

/// A model, its calibration set and the cached full-precision activations.
pub struct Session<'a> {
    pub model: &'a Model,
    pub calib: &'a CalibrationSet,
    pub cfg: PipelineConfig,
    /// `[segment][block]`.
    acts: Vec<Vec<BlockActivations>>,
}

impl<'a> Session<'a> {
    pub fn new(model: &'a Model, calib: &'a CalibrationSet, cfg: PipelineConfig) -> Result<Self> {
        model.validate()?;
        calib.check_for(&model.config)?;
        cfg.quant.validate()?;
        let acts = calib
            .batches
            .par_iter()
            .map(|b| {
                model
                    .activations(&b.x, cfg.causal)
                    .map_err(|e| e.context(b.id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            calib,
            cfg,
            acts,
        })
    }

    pub fn activations(&self) -> &[Vec<BlockActivations>] {
        &self.acts
    }

    fn block_seed_policy(&self, block: usize) -> SeedPolicy {
        let base = stream_seed(self.cfg.seed, streams::SENSITIVITY);
        self.cfg.seed_policy.with_seed(mix(base, block as u64))
    }

    fn block_hessians(
        &self,
        block: usize,
        mode: HessianMode,
    ) -> Result<Vec<(LayerRef, HessianState)>> {
        let layers: Vec<LayerRef> = self
            .model
            .layers()
            .into_iter()
            .filter(|l| l.block == block)
            .collect();
        let mut states: Vec<HessianState> = layers
            .iter()
            .map(|l| HessianState::new(l.id.clone(), l.rows))
            .collect();
        let attn = &self.model.blocks[block].attn;
        let policy = self.block_seed_policy(block);
        let d = self.model.config.d_model;

        for (batch, seg) in self.calib.batches.iter().zip(&self.acts) {
            let acts = &seg[block];
            let tokens = acts.attn_in.rows();
            // Seeds follow the batch, not its position, so batch order does not matter.
            let sample = fnv1a64(batch.id.as_bytes());
            let ws = match mode {
                HessianMode::Attention => Some(GradientWorkspace::new(
                    attn,
                    &acts.attn_in,
                    self.cfg.causal,
                )?),
                HessianMode::Layerwise => None,
            };
            let seeds = ws.as_ref().map(|_| policy.seeds(tokens, d, sample));
            let norm = policy.normalization(d).sqrt();
            for (layer, state) in layers.iter().zip(states.iter_mut()) {
                match (layer.role.family(), &ws, &seeds) {
                    (Some(family), Some(ws), Some(seeds)) => {
                        let grads = seeds
                            .iter()
                            .map(|seed| Ok(grad_family(ws, seed, attn, family)?.scale(norm)))
                            .collect::<Result<Vec<_>>>()?;
                        state.accumulate_attention(&grads, tokens)?;
                    }
                    _ => state.accumulate_tokens(Model::layer_input(acts, layer.role))?,
                }
            }
        }
        Ok(layers.into_iter().zip(states).collect())
    }

    pub fn hessians(&self, mode: HessianMode) -> Result<LayerHessians> {
        let per_block = (0..self.model.config.blocks)
            .into_par_iter()
            .map(|b| self.block_hessians(b, mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerHessians {
            mode,
            layers: per_block.into_iter().flatten().collect(),
        })
    }

    pub fn plan(&self, records: &[SensitivityRecord], spec: PlanSpec) -> Result<PrecisionPlan> {
        make_plan(records, spec)
    }

    /// Quantizes every layer at its planned width, in parallel.
    pub fn quantize(
        &self,
        hessians: &LayerHessians,
        plan: &PrecisionPlan,
        quantizer: Quantizer,
    ) -> Result<Vec<QuantizedLayer>> {
        hessians
            .layers
            .par_iter()
            .map(|(layer, h)| {
                let run = || {
                    let bits = plan
                        .bits(&layer.id)
                        .ok_or_else(|| Error::MissingLayer(layer.id.clone()))?;
                    let cfg = QuantConfig {
                        bits,
                        ..self.cfg.quant
                    };
                    let w = self.model.weight(layer.block, layer.role)?.transpose();
                    match quantizer {
                        Quantizer::Gptq => {
                            let mut h = h.clone();
                            h.damp(cfg.damp_percent)?;
                            quantize_layer(&w, &h, &cfg)
                        }
                        Quantizer::RoundToNearest => rtn(&w, &layer.id, &cfg),
                    }
                };
                let started = std::time::Instant::now();
                let out = run().map_err(|e| e.context(layer.id.clone()));
                if let Ok(q) = &out {
                    tracing::debug!(
                        layer = %layer.id,
                        bits = q.bits,
                        proxy = q.recon_error,
                        seconds = started.elapsed().as_secs_f64(),
                        "quantized"
                    );
                }
                out
            })
            .collect()
    }

    pub fn run(&self, spec: PlanSpec, quantizer: Quantizer) -> Result<QuantizeOutcome> {
        let hessians = self.hessians(self.cfg.mode)?;
        let records = hessians.sensitivity()?;
        let plan = self.plan(&records, spec)?;
        let layers = self.quantize(&hessians, &plan, quantizer)?;
        Ok(QuantizeOutcome {
            records,
            plan,
            layers,
        })
    }

    /// Output errors of `quantized` against the original model, each sublayer
    /// fed with full-precision inputs.
    pub fn evaluate(&self, quantized: &Model) -> Result<Evaluation> {
        if quantized.config != self.model.config {
            return Err(Error::shape("evaluate", "model configurations differ"));
        }
        let blocks = (0..self.model.config.blocks)
            .into_par_iter()
            .map(|b| {
                let (orig, quant) = (&self.model.blocks[b], &quantized.blocks[b]);
                let mut err = BlockError {
                    block: b,
                    attention: 0.0,
                    ffn: 0.0,
                };
                for seg in &self.acts {
                    let a = &seg[b];
                    let qa = attention_forward(&quant.attn, &a.attn_in, self.cfg.causal)?;
                    let oa = attention_forward(&orig.attn, &a.attn_in, self.cfg.causal)?;
                    err.attention += oa.sub(&qa)?.frobenius_sq();
                    let qf = feedforward_forward(&quant.ffn, &a.ffn_in)?;
                    let of = feedforward_forward(&orig.ffn, &a.ffn_in)?;
                    err.ffn += of.sub(&qf)?.frobenius_sq();
                }
                Ok(err)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut layer_errors = BTreeMap::new();
        for layer in self.model.layers() {
            let delta = self
                .model
                .weight(layer.block, layer.role)?
                .sub(quantized.weight(layer.block, layer.role)?)?;
            let mut e = 0.0;
            for seg in &self.acts {
                e += matmul(Model::layer_input(&seg[layer.block], layer.role), &delta)?
                    .frobenius_sq();
            }
            layer_errors.insert(layer.id, e);
        }
        Ok(Evaluation {
            blocks,
            layer_errors,
        })
    }

    /// `Σ_layers tr(ΔW H ΔWᵀ)` against the given undamped Hessians.
    pub fn proxy_total(&self, hessians: &LayerHessians, layers: &[QuantizedLayer]) -> Result<f64> {
        let mut total = 0.0;
        for q in layers {
            let (layer, h) = hessians
                .layers
                .iter()
                .find(|(l, _)| l.id == q.layer_id)
                .ok_or_else(|| Error::MissingLayer(q.layer_id.clone()))?;
            let w = self.model.weight(layer.block, layer.role)?.transpose();
            total += proxy_objective(&w, &q.dequantize(), &h.undamped())?;
        }
        Ok(total)
    }
}

/// Builds a plan from sensitivity records. Manual block-wise plans group
/// layers by the block index in their ids.
pub fn make_plan(records: &[SensitivityRecord], spec: PlanSpec) -> Result<PrecisionPlan> {
    match spec {
        PlanSpec::Ratio(r) => allocate_bits(records, r),
        PlanSpec::Uniform(bits) => uniform_plan(records, bits),
        PlanSpec::ManualBlockwise(r) => {
            let mut blocks: Vec<Vec<SensitivityRecord>> = Vec::new();
            for rec in records {
                let (b, _) = parse_layer_id(&rec.layer_id)?;
                if blocks.len() <= b {
                    blocks.resize(b + 1, Vec::new());
                }
                blocks[b].push(rec.clone());
            }
            manual_blockwise_plan(&blocks, r)
        }
    }
}

/// Held-out sequences sampled from the full-precision model.
pub fn eval_sequences(model: &Model, seed: u64, count: usize) -> Result<Vec<Vec<usize>>> {
    let mut rng = stream_rng(seed, streams::EVAL);
    (0..count)
        .map(|_| model.sample_sequence(model.config.seq_len, &mut rng))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareRow {
    pub method: Method,
    pub ratio: f64,
    pub achieved_avg_bits: f64,
    pub total_error: f64,
    /// Proxy objective under the attention-mode Hessians.
    pub proxy_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy_ppl: Option<f64>,
}

/// Method x ratio grid, rows ordered by method list then ratio list.
pub fn compare(
    session: &Session<'_>,
    methods: &[Method],
    ratios: &[f64],
    ppl_sequences: Option<&[Vec<usize>]>,
) -> Result<Vec<CompareRow>> {
    let attention = session.hessians(HessianMode::Attention)?;
    let attention_records = attention.sensitivity()?;
    let layerwise = if methods.contains(&Method::LayerwiseHessian) {
        let h = session.hessians(HessianMode::Layerwise)?;
        let records = h.sensitivity()?;
        Some((h, records))
    } else {
        None
    };

    let mut rows = Vec::with_capacity(methods.len() * ratios.len());
    for &method in methods {
        for &r in ratios {
            let (hessians, records, spec, quantizer) = match method {
                Method::Aptq => (
                    &attention,
                    &attention_records,
                    PlanSpec::Ratio(r),
                    Quantizer::Gptq,
                ),
                Method::Rtn => (
                    &attention,
                    &attention_records,
                    PlanSpec::Ratio(r),
                    Quantizer::RoundToNearest,
                ),
                Method::ManualBlockwise => (
                    &attention,
                    &attention_records,
                    PlanSpec::ManualBlockwise(r),
                    Quantizer::Gptq,
                ),
                Method::LayerwiseHessian => {
                    let (h, rec) = layerwise.as_ref().expect("computed above");
                    (h, rec, PlanSpec::Ratio(r), Quantizer::Gptq)
                }
            };
            let plan = session.plan(records, spec)?;
            let layers = session.quantize(hessians, &plan, quantizer)?;
            let qmodel = session.model.with_quantized(&layers)?;
            let eval = session.evaluate(&qmodel)?;
            let toy_ppl = ppl_sequences
                .map(|seqs| crate::model::toy_perplexity(&qmodel, seqs))
                .transpose()?;
            rows.push(CompareRow {
                method,
                ratio: r,
                achieved_avg_bits: plan.achieved_avg_bits,
                total_error: eval.total(),
                proxy_error: session.proxy_total(&attention, &layers)?,
                toy_ppl,
            });
        }
    }
    Ok(rows)
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut out = String::from("method\tratio\tavg_bits\ttotal_error\tproxy_error\ttoy_ppl\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.6e}\t{:.6e}\t{}\n",
            r.method,
            r.ratio,
            r.achieved_avg_bits,
            r.total_error,
            r.proxy_error,
            r.toy_ppl.map_or("-".to_string(), |p| format!("{p:.6}"))
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub command: String,
    pub mode: String,
    pub seed_policy: String,
    pub causal: bool,
    pub group_size: usize,
    pub block_size: usize,
    pub damp: f64,
    pub seed: u64,
    pub plan: String,
}

impl ConfigEcho {
    pub fn new(command: &str, cfg: &PipelineConfig, plan: &str) -> Self {
        Self {
            command: command.to_string(),
            mode: cfg.mode.to_string(),
            seed_policy: cfg.seed_policy.to_string(),
            causal: cfg.causal,
            group_size: cfg.quant.group_size,
            block_size: cfg.quant.block_size,
            damp: cfg.quant.damp_percent,
            seed: cfg.seed,
            plan: plan.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRecord {
    pub layer_id: String,
    pub bits: u8,
    pub avg_trace: f64,
    pub param_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy_error: Option<f64>,
    pub recon_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub ratio_r: f64,
    pub achieved_avg_bits: f64,
    pub total_recon_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy_ppl_original: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy_ppl_quantized: Option<f64>,
}

/// Everything a quantize or eval run reports. Wall times are kept apart so
/// the rest is a pure function of inputs, flags and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ConfigEcho,
    pub layers: Vec<LayerRecord>,
    pub blocks: Vec<BlockError>,
    pub totals: Totals,
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    /// `proxies` maps layer id to the quantizer's proxy error when known.
    pub fn new(
        config: ConfigEcho,
        plan: &PrecisionPlan,
        proxies: &BTreeMap<String, f64>,
        eval: &Evaluation,
        toy_ppl: Option<(f64, f64)>,
    ) -> Result<Self> {
        let mut ranking: Vec<&SensitivityRecord> = plan.ranking.iter().collect();
        ranking.sort_by(|a, b| a.layer_id.cmp(&b.layer_id));
        let layers = ranking
            .into_iter()
            .map(|r| {
                Ok(LayerRecord {
                    layer_id: r.layer_id.clone(),
                    bits: plan
                        .bits(&r.layer_id)
                        .ok_or_else(|| Error::MissingLayer(r.layer_id.clone()))?,
                    avg_trace: r.avg_trace,
                    param_count: r.param_count,
                    proxy_error: proxies.get(&r.layer_id).copied(),
                    recon_error: eval.layer_errors.get(&r.layer_id).copied().unwrap_or(0.0),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            layers,
            blocks: eval.blocks.clone(),
            totals: Totals {
                ratio_r: plan.ratio_r,
                achieved_avg_bits: plan.achieved_avg_bits,
                total_recon_error: eval.total(),
                toy_ppl_original: toy_ppl.map(|p| p.0),
                toy_ppl_quantized: toy_ppl.map(|p| p.1),
            },
            timings: Vec::new(),
        })
    }

    pub fn to_text(&self, with_timings: bool) -> String {
        let c = &self.config;
        let mut out = format!(
            "{} mode={} seeds={} causal={} group={} block={} damp={} seed={} plan={}\n\n",
            c.command,
            c.mode,
            c.seed_policy,
            c.causal,
            c.group_size,
            c.block_size,
            c.damp,
            c.seed,
            c.plan
        );
        out.push_str("layer_id\tbits\tavg_trace\tparams\tproxy_error\trecon_error\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{}\t{}\t{:.6e}\t{}\t{}\t{:.6e}\n",
                l.layer_id,
                l.bits,
                l.avg_trace,
                l.param_count,
                l.proxy_error
                    .map_or("-".to_string(), |p| format!("{p:.6e}")),
                l.recon_error
            ));
        }
        out.push_str("\nblock\tattention_error\tffn_error\n");
        for b in &self.blocks {
            out.push_str(&format!(
                "{}\t{:.6e}\t{:.6e}\n",
                b.block, b.attention, b.ffn
            ));
        }
        let t = &self.totals;
        out.push_str(&format!(
            "\nratio_r {}\nachieved_avg_bits {:.4}\ntotal_recon_error {:.6e}\n",
            t.ratio_r, t.achieved_avg_bits, t.total_recon_error
        ));
        if let (Some(o), Some(q)) = (t.toy_ppl_original, t.toy_ppl_quantized) {
            out.push_str(&format!(
                "toy_ppl_original {o:.6}\ntoy_ppl_quantized {q:.6}\n"
            ));
        }
        if with_timings {
            for (name, secs) in &self.timings {
                out.push_str(&format!("time_{name} {secs:.3}s\n"));
            }
        }
        out
    }

    /// One JSON object per line, each tagged with `record`.
    pub fn to_jsonl(&self, with_timings: bool) -> String {
        fn line<T: Serialize>(kind: &str, value: &T) -> String {
            let mut v = serde_json::to_value(value).expect("report records serialize");
            if let serde_json::Value::Object(map) = &mut v {
                map.insert("record".into(), kind.into());
            }
            format!("{v}\n")
        }
        let mut out = line("config", &self.config);
        for l in &self.layers {
            out.push_str(&line("layer", l));
        }
        for b in &self.blocks {
            out.push_str(&line("block", b));
        }
        out.push_str(&line("totals", &self.totals));
        if with_timings {
            for (name, secs) in &self.timings {
                out.push_str(&line(
                    "timing",
                    &serde_json::json!({ "stage": name, "seconds": secs }),
                ));
            }
        }
        out
    }
}
