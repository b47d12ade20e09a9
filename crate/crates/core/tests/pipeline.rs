use attnquant::gptq::QuantConfig;
use attnquant::gradients::SeedPolicy;
use attnquant::hessian::{
    gauss_newton_oracle, gauss_newton_oracle_linear, psd_probe, write_sensitivity_table,
};
use attnquant::model::{Block, LayerRole, Model, ModelConfig};
use attnquant::pipeline::{
    compare, eval_sequences, HessianMode, Method, PipelineConfig, PlanSpec, Quantizer, Session,
};
use attnquant::store::{
    generate_synthetic, save_packed, CalibrationSet, CalibrationSource, SyntheticSpec,
};
use attnquant::transformer::{
    Activation, AttentionLayerWeights, CalibrationBatch, FeedForwardWeights,
};
use attnquant::{DenseMatrix, Error};

fn small() -> SyntheticSpec {
    SyntheticSpec {
        config: ModelConfig {
            d_model: 8,
            heads: 2,
            d_ff: 16,
            blocks: 2,
            vocab: 16,
            seq_len: 8,
        },
        calib_segments: 4,
    }
}

fn cfg(mode: HessianMode, seed_policy: SeedPolicy) -> PipelineConfig {
    PipelineConfig {
        mode,
        seed_policy,
        quant: QuantConfig {
            group_size: 8,
            block_size: 8,
            ..QuantConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

fn identity_model(config: ModelConfig, embed_seed: u64) -> Model {
    let (base, _) = generate_synthetic(
        embed_seed,
        &SyntheticSpec {
            config,
            calib_segments: 1,
        },
    )
    .unwrap();
    let eye =
        |r: usize, c: usize| DenseMatrix::from_fn(r, c, |i, j| if i == j { 1.0 } else { 0.0 });
    let d = config.d_model;
    let blocks = (0..config.blocks)
        .map(|_| Block {
            attn: AttentionLayerWeights::new(
                eye(d, d),
                eye(d, d),
                eye(d, d),
                eye(d, d),
                config.heads,
            )
            .unwrap(),
            ffn: FeedForwardWeights::new(
                eye(d, config.d_ff),
                eye(config.d_ff, d),
                Activation::Relu,
            )
            .unwrap(),
        })
        .collect();
    Model::new(config, base.embed.clone(), blocks).unwrap()
}

#[test]
fn linear_layers_reproduce_input_gram() {
    let (model, calib) = generate_synthetic(3, &small()).unwrap();
    let s = Session::new(
        &model,
        &calib,
        cfg(HessianMode::Attention, SeedPolicy::default()),
    )
    .unwrap();
    let h = s.hessians(HessianMode::Attention).unwrap();
    let tokens = (calib.n_segments * calib.tokens_per_segment) as f64;
    for layer in model
        .layers()
        .into_iter()
        .filter(|l| l.role.family().is_none())
    {
        // Σ_t 2 x_t x_tᵀ, one outer product per token.
        let mut oracle = DenseMatrix::zeros(layer.rows, layer.rows);
        for seg in s.activations() {
            let x = Model::layer_input(&seg[layer.block], layer.role);
            for t in 0..x.rows() {
                for i in 0..x.cols() {
                    for j in 0..x.cols() {
                        oracle[(i, j)] += 2.0 * x[(t, i)] * x[(t, j)];
                    }
                }
            }
        }
        oracle.scale_in_place(1.0 / tokens);
        assert!(
            rel(h.get(&layer.id).unwrap().h(), &oracle) < 1e-12,
            "{}",
            layer.id
        );
    }
}

#[test]
fn output_projection_with_identity_seeds_reduces_to_concat_gram() {
    let (model, calib) = generate_synthetic(4, &small()).unwrap();
    let s = Session::new(
        &model,
        &calib,
        cfg(HessianMode::Attention, SeedPolicy::IdentityPadded),
    )
    .unwrap();
    let att = s.hessians(HessianMode::Attention).unwrap();
    let lw = s.hessians(HessianMode::Layerwise).unwrap();
    for b in 0..model.config.blocks {
        let id = attnquant::model::layer_id(b, LayerRole::Wo);
        assert!(
            rel(att.get(&id).unwrap().h(), lw.get(&id).unwrap().h()) < 1e-10,
            "{id}"
        );
    }
}

#[test]
fn identity_model_matches_exact_gauss_newton() {
    let config = ModelConfig {
        d_model: 8,
        heads: 2,
        d_ff: 8,
        blocks: 2,
        vocab: 16,
        seq_len: 8,
    };
    let model = identity_model(config, 11);
    let calib = attnquant::store::synthetic::generate_calibration(11, &model, 3).unwrap();
    let s = Session::new(
        &model,
        &calib,
        cfg(HessianMode::Attention, SeedPolicy::FullBasis),
    )
    .unwrap();
    let h = s.hessians(HessianMode::Attention).unwrap();
    let tokens = (calib.n_segments * calib.tokens_per_segment) as f64;

    let mut golden = Vec::new();
    for layer in model.layers() {
        let mut oracle = DenseMatrix::zeros(layer.rows, layer.rows);
        for seg in s.activations() {
            let a = &seg[layer.block];
            let part = match layer.role.family() {
                Some(f) => {
                    gauss_newton_oracle(&model.blocks[layer.block].attn, &a.attn_in, f, true)
                        .unwrap()
                }
                None => gauss_newton_oracle_linear(
                    model.weight(layer.block, layer.role).unwrap(),
                    Model::layer_input(a, layer.role),
                )
                .unwrap(),
            };
            oracle = oracle.add(&part).unwrap();
        }
        oracle.scale_in_place(1.0 / tokens);
        assert!(
            rel(h.get(&layer.id).unwrap().h(), &oracle) < 1e-10,
            "{}",
            layer.id
        );
        golden.push(attnquant::hessian::SensitivityRecord {
            layer_id: layer.id.clone(),
            avg_trace: oracle.trace() / layer.rows as f64,
            param_count: layer.param_count(),
        });
    }
    let produced = h.sensitivity().unwrap();
    for (p, g) in produced.iter().zip(&golden) {
        assert!(
            (p.avg_trace - g.avg_trace).abs() <= 1e-10 * g.avg_trace.abs().max(1.0),
            "{}",
            p.layer_id
        );
    }
    let rounded = |t: String| {
        t.lines()
            .map(|l| l.split('\t').next().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        rounded(write_sensitivity_table(&produced)),
        rounded(write_sensitivity_table(&golden))
    );
}

#[test]
fn feedforward_rows_identical_across_modes() {
    let (model, calib) = generate_synthetic(5, &small()).unwrap();
    let s = Session::new(
        &model,
        &calib,
        cfg(HessianMode::Attention, SeedPolicy::default()),
    )
    .unwrap();
    let rows = |mode| {
        write_sensitivity_table(&s.hessians(mode).unwrap().sensitivity().unwrap())
            .lines()
            .filter(|l| l.contains("ffn"))
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    let a = rows(HessianMode::Attention);
    assert_eq!(a.len(), 4);
    assert_eq!(a, rows(HessianMode::Layerwise));
}

#[test]
fn empty_calibration_is_rejected() {
    let (model, _) = generate_synthetic(6, &small()).unwrap();
    let empty = CalibrationSet::new(vec![], CalibrationSource::Synthetic { seed: 0 }).unwrap();
    let err = Session::new(&model, &empty, PipelineConfig::default())
        .err()
        .unwrap();
    assert!(matches!(err, Error::Config(_)));
    let wide = CalibrationSet::new(
        vec![CalibrationBatch::new(DenseMatrix::zeros(8, 5), "seg0000")],
        CalibrationSource::Synthetic { seed: 0 },
    )
    .unwrap();
    assert!(matches!(
        Session::new(&model, &wide, PipelineConfig::default()),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn identical_runs_produce_identical_bytes() {
    let (model, calib) = generate_synthetic(7, &small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for i in 0..2 {
        let s = Session::new(
            &model,
            &calib,
            PipelineConfig {
                seed: 9,
                ..cfg(HessianMode::Attention, SeedPolicy::default())
            },
        )
        .unwrap();
        let out = s.run(PlanSpec::Ratio(0.75), Quantizer::Gptq).unwrap();
        let path = dir.path().join(format!("run{i}.bin"));
        save_packed(&out.plan, &out.layers, &path).unwrap();
        files.push(std::fs::read(path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn ratio_one_matches_uniform_four_bits() {
    let (model, calib) = generate_synthetic(8, &small()).unwrap();
    let s = Session::new(
        &model,
        &calib,
        cfg(HessianMode::Attention, SeedPolicy::default()),
    )
    .unwrap();
    let h = s.hessians(HessianMode::Attention).unwrap();
    let rec = h.sensitivity().unwrap();
    let full = s.plan(&rec, PlanSpec::Ratio(1.0)).unwrap();
    let four = s.plan(&rec, PlanSpec::Uniform(4)).unwrap();
    assert_eq!(full.achieved_avg_bits, 4.0);
    assert_eq!(full.assignments, four.assignments);
    let manual = s.plan(&rec, PlanSpec::ManualBlockwise(0.5)).unwrap();
    assert!(manual
        .assignments
        .iter()
        .all(|(id, &b)| (b == 4) == id.starts_with("blocks.00")));
}

#[test]
fn unchanged_weights_have_zero_error() {
    let (model, calib) = generate_synthetic(9, &small()).unwrap();
    let s = Session::new(&model, &calib, PipelineConfig::default()).unwrap();
    let e = s.evaluate(&model).unwrap();
    assert_eq!(e.total(), 0.0);
    assert!(e.layer_errors.values().all(|&v| v == 0.0));
    assert_eq!(e.layer_errors.len(), 12);
}

#[test]
fn two_bit_quantization_raises_toy_perplexity() {
    let mut worse = 0;
    let runs = 20;
    for seed in 0..runs {
        let (model, calib) = generate_synthetic(100 + seed, &small()).unwrap();
        let s = Session::new(
            &model,
            &calib,
            cfg(HessianMode::Attention, SeedPolicy::default()),
        )
        .unwrap();
        let out = s.run(PlanSpec::Uniform(2), Quantizer::Gptq).unwrap();
        let q = model.with_quantized(&out.layers).unwrap();
        let seqs = eval_sequences(&model, 100 + seed, 16).unwrap();
        let (p0, p1) = (
            attnquant::model::toy_perplexity(&model, &seqs).unwrap(),
            attnquant::model::toy_perplexity(&q, &seqs).unwrap(),
        );
        if p1 >= p0 {
            worse += 1;
        }
    }
    assert!(worse * 10 >= runs * 9, "{worse}/{runs}");
}

#[test]
fn compare_grid_is_ordered_and_rtn_loses_on_proxy() {
    let (model, calib) = generate_synthetic(10, &small()).unwrap();
    let s = Session::new(
        &model,
        &calib,
        cfg(HessianMode::Attention, SeedPolicy::default()),
    )
    .unwrap();
    let ratios = [0.5, 0.75, 1.0];
    let rows = compare(&s, &Method::ALL, &ratios, None).unwrap();
    assert_eq!(rows.len(), 12);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.method, Method::ALL[i / 3]);
        assert_eq!(r.ratio, ratios[i % 3]);
    }
    let proxy = |m: Method| {
        rows.iter()
            .filter(|r| r.method == m)
            .map(|r| r.proxy_error)
            .sum::<f64>()
    };
    assert!(proxy(Method::Rtn) >= proxy(Method::Aptq));

    // A single point matches a direct run.
    let single = compare(&s, &[Method::Aptq], &[0.75], None).unwrap();
    let out = s.run(PlanSpec::Ratio(0.75), Quantizer::Gptq).unwrap();
    let eval = s
        .evaluate(&model.with_quantized(&out.layers).unwrap())
        .unwrap();
    assert_eq!(single[0].total_error, eval.total());
}

#[test]
fn hessians_are_healthy_and_order_free() {
    let policy = PipelineConfig::default().seed_policy;
    let (model, calib) = generate_synthetic(12, &small()).unwrap();
    let mut reversed = calib.clone();
    reversed.batches.reverse();
    for mode in [HessianMode::Attention, HessianMode::Layerwise] {
        let c = cfg(mode, policy);
        let a = Session::new(&model, &calib, c)
            .unwrap()
            .hessians(mode)
            .unwrap();
        let b = Session::new(&model, &reversed, c)
            .unwrap()
            .hessians(mode)
            .unwrap();
        for ((layer, ha), (_, hb)) in a.layers.iter().zip(&b.layers) {
            assert!(psd_probe(ha.h(), 1e-8), "{}", layer.id);
            assert!(rel(ha.h(), hb.h()) < 1e-10, "{}", layer.id);
            let mut damped = ha.clone();
            damped.damp(0.01).unwrap();
            damped.inverse_upper_factor().unwrap();
        }
    }
}
