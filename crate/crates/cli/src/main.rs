use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use attnquant::gptq::QuantConfig;
use attnquant::gradients::SeedPolicy;
use attnquant::hessian::{parse_sensitivity_table, write_sensitivity_table};
use attnquant::model::{toy_perplexity, Model, ModelConfig};
use attnquant::pipeline::{
    compare, compare_table, eval_sequences, make_plan, ConfigEcho, HessianMode, Method,
    PipelineConfig, PlanSpec, Quantizer, RunReport, Session, DEFAULT_EVAL_SEQUENCES,
};
use attnquant::planner::write_plan_table;
use attnquant::store::calib::CALIB_MAGIC;
use attnquant::store::model_file::MODEL_MAGIC;
use attnquant::store::packed::PACKED_MAGIC;
use attnquant::store::{
    generate_synthetic, load_calibration, load_model, load_packed, model_checksum,
    save_calibration, save_model, save_packed, CalibrationSet, SyntheticSpec,
};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "attnquant",
    version,
    about = "Attention-aware mixed-precision quantization of toy transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded toy model and calibration set.
    Generate(GenerateArgs),
    /// Compute per-layer Hessian trace sensitivities.
    Sensitivity(SensitivityArgs),
    /// Turn a sensitivity table into a bit plan.
    Plan(PlanArgs),
    /// Sensitivity, plan and quantization in one run; writes a packed file.
    Quantize(QuantizeArgs),
    /// Reconstruction error (and optionally toy perplexity) of a packed model.
    Eval(EvalArgs),
    /// Method x ratio comparison grid.
    Compare(CompareArgs),
    /// Summarize a model, calibration or packed file.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    d_ff: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 64)]
    vocab: usize,
    /// Tokens per calibration segment.
    #[arg(long, default_value_t = 32)]
    seq_len: usize,
    #[arg(long, default_value_t = 16)]
    segments: usize,
}

#[derive(Args, Clone)]
struct Inputs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long, default_value = "attention")]
    mode: HessianMode,
    /// identity, gaussian:K or basis.
    #[arg(long, default_value = "gaussian:8")]
    seed_policy: SeedPolicy,
    #[arg(long, default_value_t = 128)]
    group_size: usize,
    #[arg(long, default_value_t = 128)]
    block_size: usize,
    #[arg(long, default_value_t = 0.01)]
    damp: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Symmetric quantization grid.
    #[arg(long)]
    symmetric: bool,
    /// Search shrunken clipping ranges per group.
    #[arg(long)]
    clip_search: bool,
    /// Disable the causal attention mask.
    #[arg(long)]
    no_causal: bool,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            seed_policy: self.seed_policy,
            causal: !self.no_causal,
            quant: QuantConfig {
                group_size: self.group_size,
                block_size: self.block_size,
                damp_percent: self.damp,
                symmetric: self.symmetric,
                clip_grid_search: self.clip_search,
                ..QuantConfig::default()
            },
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanKind {
    /// Rank layers by Hessian trace.
    Trace,
    /// Leading blocks at 4 bits.
    ManualBlockwise,
}

#[derive(Args, Clone)]
struct PlanChoice {
    /// Fraction of parameters at 4 bits.
    #[arg(long, conflicts_with = "bits", required_unless_present = "bits")]
    ratio: Option<f64>,
    /// Uniform bit width (2 or 4).
    #[arg(long)]
    bits: Option<u8>,
    #[arg(long, value_enum, default_value = "trace")]
    plan: PlanKind,
}

impl PlanChoice {
    fn spec(&self) -> Result<PlanSpec> {
        Ok(match (self.ratio, self.bits, self.plan) {
            (Some(r), None, PlanKind::Trace) => PlanSpec::Ratio(r),
            (Some(r), None, PlanKind::ManualBlockwise) => PlanSpec::ManualBlockwise(r),
            (None, Some(b), PlanKind::Trace) => PlanSpec::Uniform(b),
            (None, Some(_), PlanKind::ManualBlockwise) => {
                bail!(input("--plan manual-blockwise needs --ratio"))
            }
            _ => bail!(input("give exactly one of --ratio or --bits")),
        })
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Write the text report here and structured records to `<path>.jsonl`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Include wall-clock times.
    #[arg(long)]
    timings: bool,
    /// Report toy perplexity of the original and quantized models.
    #[arg(long)]
    toy_ppl: bool,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    sensitivity: PathBuf,
    #[command(flatten)]
    choice: PlanChoice,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    choice: PlanChoice,
    /// Round to nearest instead of error-compensated quantization.
    #[arg(long)]
    rtn: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    packed: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "aptq,layerwise-hessian,rtn,manual-blockwise"
    )]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,0.9,1.0")]
    ratios: Vec<f64>,
    #[arg(long)]
    toy_ppl: bool,
    /// Write the table here and records to `<path>.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Marks a CLI-level input problem.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input(msg: &str) -> InputError {
    InputError(msg.to_string())
}

fn jsonl_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".jsonl");
    PathBuf::from(s)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_inputs(inputs: &Inputs) -> Result<(Model, CalibrationSet)> {
    Ok((load_model(&inputs.model)?, load_calibration(&inputs.calib)?))
}

struct Timer(Vec<(String, f64)>, Instant);

impl Timer {
    fn new() -> Self {
        Self(Vec::new(), Instant::now())
    }

    fn lap(&mut self, stage: &str) {
        self.0
            .push((stage.to_string(), self.1.elapsed().as_secs_f64()));
        self.1 = Instant::now();
    }
}

fn toy_ppl(model: &Model, quantized: &Model, seed: u64) -> Result<(f64, f64)> {
    let seqs = eval_sequences(model, seed, DEFAULT_EVAL_SEQUENCES)?;
    Ok((
        toy_perplexity(model, &seqs)?,
        toy_perplexity(quantized, &seqs)?,
    ))
}

fn emit(report: &RunReport, args: &ReportArgs) -> Result<()> {
    let text = report.to_text(args.timings);
    print!("{text}");
    if let Some(path) = &args.report {
        write(path, &text)?;
        write(&jsonl_path(path), &report.to_jsonl(args.timings))?;
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = SyntheticSpec {
        config: ModelConfig {
            d_model: a.d_model,
            heads: a.heads,
            d_ff: a.d_ff,
            blocks: a.blocks,
            vocab: a.vocab,
            seq_len: a.seq_len,
        },
        calib_segments: a.segments,
    };
    let (model, calib) = generate_synthetic(a.seed, &spec)?;
    save_model(&model, &a.model)?;
    save_calibration(&calib, &a.calib)?;
    println!(
        "model {} ({} layers, checksum {:016x})\ncalib {} ({} segments x {} tokens)",
        a.model.display(),
        model.layers().len(),
        model_checksum(&model)?,
        a.calib.display(),
        calib.n_segments,
        calib.tokens_per_segment
    );
    Ok(())
}

fn sensitivity(a: SensitivityArgs) -> Result<()> {
    let (model, calib) = load_inputs(&a.inputs)?;
    let cfg = a.pipeline.config();
    let session = Session::new(&model, &calib, cfg)?;
    let records = session.hessians(cfg.mode)?.sensitivity()?;
    let table = write_sensitivity_table(&records);
    write(&a.out, &table)?;
    print!("{table}");
    Ok(())
}

fn plan(a: PlanArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.sensitivity)
        .with_context(|| format!("reading {}", a.sensitivity.display()))?;
    let records = parse_sensitivity_table(&text)?;
    let plan = make_plan(&records, a.choice.spec()?)?;
    let table = write_plan_table(&plan);
    write(&a.out, &table)?;
    print!("{table}");
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let mut timer = Timer::new();
    let (model, calib) = load_inputs(&a.inputs)?;
    let spec = a.choice.spec()?;
    let cfg = a.pipeline.config();
    let session = Session::new(&model, &calib, cfg)?;
    timer.lap("activations");
    let hessians = session.hessians(cfg.mode)?;
    let records = hessians.sensitivity()?;
    timer.lap("sensitivity");
    let plan = session.plan(&records, spec)?;
    let quantizer = if a.rtn {
        Quantizer::RoundToNearest
    } else {
        Quantizer::Gptq
    };
    let layers = session.quantize(&hessians, &plan, quantizer)?;
    timer.lap("quantize");
    save_packed(&plan, &layers, &a.out)?;
    let quantized = model.with_quantized(&layers)?;
    let eval = session.evaluate(&quantized)?;
    let ppl = a
        .report
        .toy_ppl
        .then(|| toy_ppl(&model, &quantized, cfg.seed))
        .transpose()?;
    timer.lap("evaluate");

    let proxies: BTreeMap<String, f64> = layers
        .iter()
        .map(|q| (q.layer_id.clone(), q.recon_error))
        .collect();
    let mut report = RunReport::new(
        ConfigEcho::new("quantize", &cfg, &spec.to_string()),
        &plan,
        &proxies,
        &eval,
        ppl,
    )?;
    report.timings = timer.0;
    emit(&report, &a.report)
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut timer = Timer::new();
    let (model, calib) = load_inputs(&a.inputs)?;
    let packed = load_packed(&a.packed)?;
    let quantized = packed.apply_to(&model)?;
    let cfg = a.pipeline.config();
    let session = Session::new(&model, &calib, cfg)?;
    let eval = session.evaluate(&quantized)?;
    let ppl = a
        .report
        .toy_ppl
        .then(|| toy_ppl(&model, &quantized, cfg.seed))
        .transpose()?;
    timer.lap("evaluate");
    let label = format!("packed:{}", a.packed.display());
    let mut report = RunReport::new(
        ConfigEcho::new("eval", &cfg, &label),
        &packed.plan,
        &BTreeMap::new(),
        &eval,
        ppl,
    )?;
    report.timings = timer.0;
    emit(&report, &a.report)
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let (model, calib) = load_inputs(&a.inputs)?;
    let cfg = a.pipeline.config();
    let session = Session::new(&model, &calib, cfg)?;
    let seqs = if a.toy_ppl {
        Some(eval_sequences(&model, cfg.seed, DEFAULT_EVAL_SEQUENCES)?)
    } else {
        None
    };
    let rows = compare(&session, &a.methods, &a.ratios, seqs.as_deref())?;
    let table = compare_table(&rows);
    print!("{table}");
    if let Some(path) = &a.out {
        write(path, &table)?;
        let jsonl: String = rows
            .iter()
            .map(|r| format!("{}\n", serde_json::to_string(r).expect("rows serialize")))
            .collect();
        write(&jsonl_path(path), &jsonl)?;
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let magic = bytes.get(..8).unwrap_or_default();
    if magic == MODEL_MAGIC {
        let m = load_model(path)?;
        let c = m.config;
        println!(
            "model d_model={} heads={} d_ff={} blocks={} vocab={} seq_len={} checksum={:016x}",
            c.d_model,
            c.heads,
            c.d_ff,
            c.blocks,
            c.vocab,
            c.seq_len,
            model_checksum(&m)?
        );
        for l in m.layers() {
            println!("{}\t{}x{}", l.id, l.rows, l.cols);
        }
    } else if magic == CALIB_MAGIC {
        let c = load_calibration(path)?;
        println!(
            "calibration segments={} tokens={} d_model={} source={}",
            c.n_segments,
            c.tokens_per_segment,
            c.d_model(),
            serde_json::to_string(&c.source)?
        );
    } else if magic == PACKED_MAGIC {
        let p = load_packed(path)?;
        print!("{}", write_plan_table(&p.plan));
        for q in &p.layers {
            println!(
                "{}\t{} bits\t{}x{}\t{} groups",
                q.layer_id,
                q.bits,
                q.rows,
                q.cols,
                q.groups.len()
            );
        }
    } else {
        bail!(input(&format!(
            "{}: not a model, calibration or packed file",
            path.display()
        )));
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| {
        e.downcast_ref::<attnquant::Error>()
            .is_some_and(attnquant::Error::is_numeric)
    });
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Plan(a) => plan(a),
        Command::Quantize(a) => quantize(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Inspect { path } => inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
