//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array1;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reflectrag::adaptive::{
    write_sweep_csv, write_sweep_json, ConfidenceMethod, DecideOptions,
};
use reflectrag::backend::{Backend, GenParams, HttpBackend, MockBackend};
use reflectrag::datagen::{
    read_pairs_jsonl, run_corpus, Critic, MockCritic, RemoteCritic,
};
use reflectrag::engine::{
    answer_long, answer_short, run_sweep, EngineOptions, FileRetriever, SweepRunConfig,
    TemplateKind,
};
use reflectrag::evalkit::{evaluate_run, write_summary_csv, EvalQuery, MetricKind};
use reflectrag::moe::{
    checkpoint_hash, count_params, grad_check, routing_stats, toy_dense_model, upcycle,
    Activation, DenseModel, MoeLayerSpec, MoeModel, MoePreset, QuadLoss, UpcycleOptions,
};
use reflectrag::reflection::ScoreWeights;

use crate::config::{resolve, resolve_opt, FileConfig};
use crate::{
    BackendArgs, CliError, EvalArgs, InferArgs, MoeCommand, MoeDemoArgs, MoeGradcheckArgs,
    MoeParamsArgs, MoeRoutesArgs, MoeUpcycleArgs, PrepareDataArgs, SweepArgs, WeightArgs,
    TOKEN_ENV_VAR,
};

fn open_input(path: &Path, flag: &str) -> Result<BufReader<std::fs::File>, CliError> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::config(format!("{flag}: cannot open {}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<std::fs::File>, CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))
}

fn build_backend(args: &BackendArgs, cfg: &FileConfig) -> Result<Box<dyn Backend>, CliError> {
    let kind = resolve(
        args.backend.clone(),
        cfg.backend.kind.clone(),
        "mock".to_string(),
    );
    match kind.as_str() {
        "mock" => {
            let script = resolve_opt(args.script.clone(), cfg.backend.script.clone())
                .ok_or_else(|| CliError::config("--script: required when --backend mock"))?;
            let backend = MockBackend::load(&script).map_err(|e| {
                CliError::config(format!("--script {}: {e}", script.display()))
            })?;
            Ok(Box::new(backend))
        }
        "http" => {
            let endpoint = resolve_opt(args.endpoint.clone(), cfg.backend.endpoint.clone())
                .ok_or_else(|| CliError::config("--endpoint: required when --backend http"))?;
            let model = resolve(
                args.model.clone(),
                cfg.backend.model.clone(),
                "default".to_string(),
            );
            let auth = std::env::var(TOKEN_ENV_VAR).ok();
            Ok(Box::new(HttpBackend::new(endpoint, model, auth).with_params(GenParams::default())))
        }
        other => Err(CliError::config(format!(
            "--backend: expected \"mock\" or \"http\", got {other:?}"
        ))),
    }
}

fn parse_template(flag: Option<&str>, cfg: &FileConfig) -> Result<TemplateKind, CliError> {
    let label = resolve(
        flag.map(str::to_string),
        cfg.engine.template.clone(),
        "single-hop".to_string(),
    );
    TemplateKind::parse_label(&label).ok_or_else(|| {
        CliError::config(format!(
            "--template: expected \"single-hop\" or \"multi-hop\", got {label:?}"
        ))
    })
}

fn parse_method(label: &str, flag: &str) -> Result<ConfidenceMethod, CliError> {
    ConfidenceMethod::parse_label(label).ok_or_else(|| {
        CliError::config(format!(
            "{flag}: expected \"minp\", \"meanp\", or \"ret\", got {label:?}"
        ))
    })
}

fn score_weights(args: &WeightArgs, cfg: &FileConfig) -> ScoreWeights {
    let default = ScoreWeights::default();
    ScoreWeights {
        w_rel: resolve(args.w_rel, cfg.weights.relevance, default.w_rel),
        w_grd: resolve(args.w_grd, cfg.weights.grounding, default.w_grd),
        w_utl: resolve(args.w_utl, cfg.weights.utility, default.w_utl),
        include_seq_term: args.include_seq
            || cfg.weights.include_seq.unwrap_or(default.include_seq_term),
    }
}

// ---------------------------------------------------------------------------
// prepare-data
// ---------------------------------------------------------------------------

pub fn prepare_data(args: PrepareDataArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let critic: Box<dyn Critic> = match args.critic.as_str() {
        "mock" => Box::new(MockCritic),
        "remote" => {
            let endpoint = resolve_opt(args.endpoint.clone(), cfg.backend.endpoint.clone())
                .ok_or_else(|| CliError::config("--endpoint: required when --critic remote"))?;
            let model = resolve(
                args.model.clone(),
                cfg.backend.model.clone(),
                "default".to_string(),
            );
            let auth = std::env::var(TOKEN_ENV_VAR).ok();
            Box::new(RemoteCritic::new(Box::new(HttpBackend::new(endpoint, model, auth))))
        }
        other => {
            return Err(CliError::config(format!(
                "--critic: expected \"mock\" or \"remote\", got {other:?}"
            )))
        }
    };
    let input = open_input(&args.input, "--input")?;
    let mut output = create_output(&args.output)?;
    let seed = resolve(args.seed, cfg.seed, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let summary = run_corpus(read_pairs_jsonl(input), critic.as_ref(), &mut rng, &mut output)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    output.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    println!(
        "pairs_seen={} pairs_skipped={} instances_emitted={} rho0={} rho1={} rho2={} rho3={}",
        summary.pairs_seen,
        summary.pairs_skipped,
        summary.instances_emitted,
        summary.rho_counts[0],
        summary.rho_counts[1],
        summary.rho_counts[2],
        summary.rho_counts[3],
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn engine_options(
    weights: &WeightArgs,
    template: Option<&str>,
    adaptive: Option<&str>,
    gamma: Option<f64>,
    flip_gamma: bool,
    workers: Option<usize>,
    continue_expansion: bool,
    cfg: &FileConfig,
) -> Result<EngineOptions, CliError> {
    let adaptive = match resolve_opt(adaptive.map(str::to_string), cfg.adaptive.method.clone()) {
        Some(label) => {
            let method = parse_method(&label, "--adaptive")?;
            let gamma = resolve_opt(gamma, cfg.adaptive.gamma).ok_or_else(|| {
                CliError::config("--gamma: required when --adaptive is set")
            })?;
            Some(DecideOptions {
                method,
                gamma,
                include_reflection_tokens: false,
                flip_comparison: flip_gamma || cfg.adaptive.flip.unwrap_or(false),
            })
        }
        None => None,
    };
    let cumulative_mean = match cfg.engine.cumulative.as_deref() {
        None | Some("sum") => false,
        Some("mean") => true,
        Some(other) => {
            return Err(CliError::config(format!(
                "engine.cumulative: expected \"sum\" or \"mean\", got {other:?}"
            )))
        }
    };
    Ok(EngineOptions {
        weights: score_weights(weights, cfg),
        template: parse_template(template, cfg)?,
        adaptive,
        workers: resolve(workers, cfg.workers, 1),
        eos_marker: cfg.engine.eos.clone().unwrap_or_else(|| "</s>".to_string()),
        enable_continue: continue_expansion
            || cfg.engine.continue_expansion.unwrap_or(false),
        cumulative_mean,
        ..EngineOptions::default()
    })
}

pub fn infer(args: InferArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let queries = read_queries(&args.queries, "--queries")?;
    let retriever = FileRetriever::load(&args.contexts)
        .map_err(|e| CliError::config(format!("--contexts: {e}")))?;
    let backend = build_backend(&args.backend, cfg)?;
    let opts = engine_options(
        &args.weights,
        args.template.as_deref(),
        args.adaptive.as_deref(),
        args.gamma,
        args.flip_gamma,
        args.workers,
        args.continue_expansion,
        cfg,
    )?;
    let top_n = resolve(args.top_n, cfg.engine.top_n, 3);
    let beam = resolve(args.beam, cfg.beam.size, 2);
    let depth = resolve(args.depth, cfg.beam.depth, 7);
    let seed = resolve_opt(args.seed, cfg.seed);

    let mut out = create_output(&args.out)?;
    let mut failures = 0usize;
    for query in &queries {
        let contexts = match retriever.top_n(&query.id, top_n) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("query {}: {e}", query.id);
                failures += 1;
                continue;
            }
        };
        let trace = if args.long {
            answer_long(&query.id, &query.question, &contexts, backend.as_ref(), beam, depth, &opts)
                .map(|r| r.trace)
        } else {
            answer_short(&query.id, &query.question, &contexts, backend.as_ref(), &opts)
                .map(|r| r.trace)
        };
        match trace {
            Ok(mut trace) => {
                trace.seed = seed;
                let line = serde_json::to_string(&trace)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| CliError::runtime(e.to_string()))?;
                // Partial traces survive a later failure.
                out.flush().map_err(|e| CliError::runtime(e.to_string()))?;
            }
            Err(e) => {
                eprintln!("query {}: {e}", query.id);
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(CliError::runtime(format!(
            "{failures} of {} queries failed; partial trace written to {}",
            queries.len(),
            args.out.display()
        )));
    }
    println!("traced {} queries to {}", queries.len(), args.out.display());
    Ok(())
}

fn read_queries(path: &Path, flag: &str) -> Result<Vec<EvalQuery>, CliError> {
    let reader = open_input(path, flag)?;
    reflectrag::evalkit::read_queries_jsonl(reader)
        .map_err(|e| CliError::config(format!("{flag}: {e}")))
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn parse_gamma_grid(args: &SweepArgs) -> Result<Vec<f64>, CliError> {
    match (&args.gammas, &args.gamma_range) {
        (Some(_), Some(_)) => {
            Err(CliError::config("--gammas and --gamma-range are mutually exclusive"))
        }
        (Some(list), None) => {
            let mut out = Vec::new();
            for piece in list.split(',') {
                let value: f64 = piece.trim().parse().map_err(|e| {
                    CliError::config(format!("--gammas: bad value {piece:?}: {e}"))
                })?;
                out.push(value);
            }
            if out.is_empty() {
                return Err(CliError::config("--gammas: empty grid"));
            }
            Ok(out)
        }
        (None, range) => {
            let spec = range.as_deref().unwrap_or("0:1:0.1");
            let parts: Vec<&str> = spec.split(':').collect();
            if parts.len() != 3 {
                return Err(CliError::config(format!(
                    "--gamma-range: expected start:end:step, got {spec:?}"
                )));
            }
            let parse = |s: &str| -> Result<f64, CliError> {
                s.parse()
                    .map_err(|e| CliError::config(format!("--gamma-range: bad number {s:?}: {e}")))
            };
            let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
            if step <= 0.0 || end < start {
                return Err(CliError::config("--gamma-range: need end >= start and step > 0"));
            }
            let mut out = Vec::new();
            let n = ((end - start) / step).round() as usize;
            for i in 0..=n {
                out.push(start + step * i as f64);
            }
            Ok(out)
        }
    }
}

pub fn sweep(args: SweepArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let queries = read_queries(&args.queries, "--queries")?;
    let retriever = FileRetriever::load(&args.contexts)
        .map_err(|e| CliError::config(format!("--contexts: {e}")))?;
    let backend = build_backend(&args.backend, cfg)?;
    let method_label = resolve(
        args.method.clone(),
        cfg.adaptive.method.clone(),
        "meanp".to_string(),
    );
    let method = parse_method(&method_label, "--method")?;
    let metric = MetricKind::parse_label(&args.metric)
        .ok_or_else(|| CliError::config(format!(
            "--metric: expected \"acc\", \"em\", or \"f1\", got {:?}", args.metric
        )))?;
    let opts = EngineOptions {
        template: parse_template(args.template.as_deref(), cfg)?,
        ..EngineOptions::default()
    };
    let sweep_cfg = SweepRunConfig {
        method,
        gammas: parse_gamma_grid(&args)?,
        flip_comparison: args.flip_gamma || cfg.adaptive.flip.unwrap_or(false),
        metric,
        top_n: resolve(args.top_n, cfg.engine.top_n, 3),
    };
    let (points, _) = run_sweep(&queries, &retriever, backend.as_ref(), &opts, &sweep_cfg)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let csv_path = args
        .out_csv
        .unwrap_or_else(|| args.out_dir.join(format!("sweep_{}.csv", method.label())));
    let json_path = args
        .out_json
        .unwrap_or_else(|| args.out_dir.join(format!("sweep_{}.json", method.label())));
    let mut csv = create_output(&csv_path)?;
    write_sweep_csv(&mut csv, &points).map_err(|e| CliError::runtime(e.to_string()))?;
    csv.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    let mut json = create_output(&json_path)?;
    write_sweep_json(&mut json, &points).map_err(|e| CliError::runtime(e.to_string()))?;
    json.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    println!(
        "swept {} thresholds over {} queries: {} , {}",
        points.len(),
        queries.len(),
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// moe
// ---------------------------------------------------------------------------

pub fn moe(cmd: MoeCommand, cfg: &FileConfig) -> Result<(), CliError> {
    match cmd {
        MoeCommand::Params(args) => moe_params(args),
        MoeCommand::Gradcheck(args) => moe_gradcheck(args, cfg),
        MoeCommand::Upcycle(args) => moe_upcycle(args, cfg),
        MoeCommand::Demo(args) => moe_demo(args, cfg),
        MoeCommand::Routes(args) => moe_routes(args, cfg),
    }
}

fn moe_params(args: MoeParamsArgs) -> Result<(), CliError> {
    let (name, spec, base) = match &args.preset {
        Some(name) => {
            let preset = MoePreset::by_name(name).ok_or_else(|| {
                CliError::config(format!("--preset: expected \"7b\", \"13b\", or \"toy\", got {name:?}"))
            })?;
            (preset.name.to_string(), preset.spec, preset.base_params)
        }
        None => {
            let missing = |flag: &str| CliError::config(format!("{flag}: required without --preset"));
            let spec = MoeLayerSpec {
                d_model: args.dmodel.ok_or_else(|| missing("--dmodel"))?,
                d_adapter: args.dadapter.ok_or_else(|| missing("--dadapter"))?,
                n_experts: args.experts.ok_or_else(|| missing("--experts"))?,
                top_k: args.k.ok_or_else(|| missing("--k"))?,
                n_layers: args.layers.ok_or_else(|| missing("--layers"))?,
            };
            (
                "custom".to_string(),
                spec,
                args.base_params.ok_or_else(|| missing("--base-params"))?,
            )
        }
    };
    let counts = count_params(&spec, base).map_err(|e| CliError::config(e.to_string()))?;
    println!("preset: {name}");
    println!(
        "spec: layers={} d_model={} d_adapter={} experts={} k={}",
        spec.n_layers, spec.d_model, spec.d_adapter, spec.n_experts, spec.top_k
    );
    println!("base_params: {base}");
    println!("per_expert_adapter: {}", counts.per_expert_adapter);
    println!("router: {}", counts.router);
    println!("total: {}", counts.total);
    println!("active: {}", counts.active);
    Ok(())
}

fn moe_gradcheck(args: MoeGradcheckArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let sigma = Activation::parse_label(&args.sigma).ok_or_else(|| {
        CliError::config(format!(
            "--sigma: expected \"silu\", \"tanh\", \"relu\", or \"linear\", got {:?}",
            args.sigma
        ))
    })?;
    if !sigma.is_smooth() {
        return Err(CliError::config(
            "--sigma: finite-difference checking needs a smooth activation".to_string(),
        ));
    }
    if args.k == 0 || args.k > args.experts {
        return Err(CliError::config(format!(
            "--k: must be in 1..={}, got {}",
            args.experts, args.k
        )));
    }
    let seed = resolve(args.seed, cfg.seed, 0);
    let layer = build_toy_layer(args.experts, args.k, args.dmodel, args.dff, args.dadapter, sigma, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Array1::from_shape_fn(args.dmodel, |_| rng.random_range(-1.0..1.0));
    let report = grad_check(&layer, x.view(), x.view(), &QuadLoss, args.eps)
        .map_err(|e| CliError::config(e.to_string()))?;
    println!(
        "max_rel_error: {:e}\nchecked: {}\nskipped: {}\ntolerance: {:e}",
        report.max_rel_error, report.checked, report.skipped, args.tol
    );
    if report.max_rel_error >= args.tol {
        return Err(CliError::runtime(format!(
            "gradient check failed: max relative error {:e} >= tolerance {:e}",
            report.max_rel_error, args.tol
        )));
    }
    println!("gradcheck: ok");
    Ok(())
}

fn build_toy_layer(
    n_experts: usize,
    top_k: usize,
    d_model: usize,
    d_ff: usize,
    d_adapter: usize,
    sigma: Activation,
    seed: u64,
) -> reflectrag::moe::MoeLayer {
    use reflectrag::moe::{ExpertAdapter, MoeLayer, RouterWeights, SharedFfn};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |r: usize, c: usize| {
        ndarray::Array2::from_shape_fn((r, c), |_| rng.random_range(-0.5..0.5))
    };
    let ffn = SharedFfn { w1: mat(d_model, d_ff), w2: mat(d_ff, d_model), activation: Activation::Silu };
    let router = RouterWeights { w: mat(n_experts, d_model) };
    let adapters = (0..n_experts)
        .map(|_| ExpertAdapter { w_down: mat(d_model, d_adapter), w_up: mat(d_adapter, d_model) })
        .collect();
    MoeLayer::new(router, ffn, adapters, top_k, sigma).expect("validated dimensions")
}

fn moe_upcycle(args: MoeUpcycleArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let dense = DenseModel::load(&args.checkpoint)
        .map_err(|e| CliError::config(format!("--checkpoint: {e}")))?;
    let opts = UpcycleOptions {
        n_experts: args.experts,
        top_k: args.k,
        d_adapter: args.dadapter,
        sigma: Activation::Silu,
    };
    let seed = resolve(args.seed, cfg.seed, 0);
    let moe = upcycle(&dense, &opts, seed).map_err(|e| CliError::config(e.to_string()))?;
    moe.save(&args.out).map_err(|e| CliError::runtime(e.to_string()))?;
    let hash = checkpoint_hash(&args.out).map_err(|e| CliError::runtime(e.to_string()))?;
    let spec = moe.spec().expect("upcycled model has layers");
    let counts = count_params(&spec, dense.param_count() as u64)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    println!("upcycled: {}", args.out.display());
    println!("seed: {seed}");
    println!("total_params: {}", counts.total);
    println!("active_params: {}", counts.active);
    println!("manifest_hash: {hash}");
    Ok(())
}

fn moe_demo(args: MoeDemoArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let seed = resolve(args.seed, cfg.seed, 0);
    let dense = toy_dense_model(args.layers, args.dmodel, args.dff, Activation::Silu, seed);
    let opts = UpcycleOptions {
        n_experts: args.experts,
        top_k: args.k,
        d_adapter: args.dadapter,
        sigma: Activation::Silu,
    };
    let moe_model =
        upcycle(&dense, &opts, seed ^ 0x9d30).map_err(|e| CliError::config(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70c5);
    let mut max_gap = 0.0f64;
    for _ in 0..8 {
        let x = Array1::from_shape_fn(args.dmodel, |_| rng.random_range(-1.0..1.0));
        let yd = dense.forward(x.view()).map_err(|e| CliError::runtime(e.to_string()))?;
        let ym = moe_model.forward(x.view()).map_err(|e| CliError::runtime(e.to_string()))?;
        for (a, b) in yd.iter().zip(ym.iter()) {
            max_gap = max_gap.max((a - b).abs());
        }
    }
    let spec = moe_model.spec().expect("model has layers");
    let counts = count_params(&spec, dense.param_count() as u64)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    println!(
        "toy model: layers={} d_model={} d_ff={} experts={} k={} d_adapter={}",
        args.layers, args.dmodel, args.dff, args.experts, args.k, args.dadapter
    );
    println!("dense_params: {}", dense.param_count());
    println!("moe_total_params: {}", counts.total);
    println!("moe_active_params: {}", counts.active);
    println!("upcycle_forward_gap: {max_gap:e}");
    let tokens: Vec<Array1<f64>> = (0..64)
        .map(|_| Array1::from_shape_fn(args.dmodel, |_| rng.random_range(-1.0..1.0)))
        .collect();
    let stats = routing_stats(&moe_model, &tokens).map_err(|e| CliError::runtime(e.to_string()))?;
    for layer in 0..args.layers {
        let freqs: Vec<String> = (0..args.experts)
            .map(|e| format!("{:.3}", stats.frequency(layer, e)))
            .collect();
        println!("layer {layer} expert frequencies: [{}]", freqs.join(", "));
    }
    if let Some(dir) = &args.out_dense {
        dense.save(dir).map_err(|e| CliError::runtime(e.to_string()))?;
        println!("dense checkpoint: {}", dir.display());
    }
    if let Some(dir) = &args.out_moe {
        moe_model.save(dir).map_err(|e| CliError::runtime(e.to_string()))?;
        println!("moe checkpoint: {}", dir.display());
    }
    Ok(())
}

fn moe_routes(args: MoeRoutesArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let model = MoeModel::load(&args.checkpoint)
        .map_err(|e| CliError::config(format!("--checkpoint: {e}")))?;
    if args.tokens == 0 {
        return Err(CliError::config("--tokens: must be >= 1".to_string()));
    }
    let seed = resolve(args.seed, cfg.seed, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.d_model;
    let tokens: Vec<Array1<f64>> = (0..args.tokens)
        .map(|_| Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)))
        .collect();
    let stats = routing_stats(&model, &tokens).map_err(|e| CliError::runtime(e.to_string()))?;
    match &args.out {
        Some(path) => {
            let mut out = create_output(path)?;
            stats.write_csv(&mut out).map_err(|e| CliError::runtime(e.to_string()))?;
            out.flush().map_err(|e| CliError::runtime(e.to_string()))?;
            println!("routing stats: {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            stats
                .write_csv(stdout.lock())
                .map_err(|e| CliError::runtime(e.to_string()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn eval(args: EvalArgs, _cfg: &FileConfig) -> Result<(), CliError> {
    let golds = read_queries(&args.gold, "--gold")?;
    if golds.is_empty() {
        return Err(CliError::config("--gold: query file is empty".to_string()));
    }
    let trace = open_input(&args.trace, "--trace")?;
    let mut predictions: BTreeMap<String, String> = BTreeMap::new();
    for (i, line) in trace.lines().enumerate() {
        let line = line.map_err(|e| CliError::runtime(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
            CliError::config(format!("--trace: line {}: {e}", i + 1))
        })?;
        let id = value.get("id").and_then(|v| v.as_str()).ok_or_else(|| {
            CliError::config(format!("--trace: line {} has no id", i + 1))
        })?;
        let answer = value.get("answer").and_then(|v| v.as_str()).unwrap_or_default();
        predictions.insert(id.to_string(), answer.to_string());
    }
    let (summary, per_query) = evaluate_run(&predictions, &golds).map_err(|e| match e {
        reflectrag::evalkit::EvalError::IdMismatch { .. }
        | reflectrag::evalkit::EvalError::EmptyGolds => CliError::config(e.to_string()),
        other => CliError::runtime(other.to_string()),
    })?;
    if let Some(path) = &args.out_table {
        let mut out = create_output(path)?;
        write_summary_csv(&mut out, &summary).map_err(|e| CliError::runtime(e.to_string()))?;
        out.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    }
    if let Some(path) = &args.out_json {
        let mut out = create_output(path)?;
        serde_json::to_writer_pretty(&mut out, &summary)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        out.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    }
    if let Some(path) = &args.out_per_query {
        let mut out = create_output(path)?;
        for record in &per_query {
            let line =
                serde_json::to_string(record).map_err(|e| CliError::runtime(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| CliError::runtime(e.to_string()))?;
        }
        out.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    }
    println!(
        "n={} missing={} em={:.4} f1={:.4} acc={:.4}",
        summary.n, summary.missing, summary.mean_em, summary.mean_f1, summary.mean_acc
    );
    Ok(())
}
