//! Command-line driver: data preparation, inference, threshold sweeps,
//! MoE utilities, and evaluation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable read for the HTTP backend bearer token.
pub const TOKEN_ENV_VAR: &str = "REFLECTRAG_TOKEN";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config; exits 2 with a field-level message.
    Config(String),
    /// Anything that failed at run time; exits 1.
    Runtime(String),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> CliError {
        CliError::Config(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> CliError {
        CliError::Runtime(message.into())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "reflectrag",
    version,
    about = "Reflection-token guided retrieval-augmented generation at desk scale"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build reflection-token training instances from a QA corpus.
    PrepareData(PrepareDataArgs),
    /// Answer a query file and write a trace.
    Infer(InferArgs),
    /// Sweep the adaptive-retrieval threshold and write the trade-off curve.
    Sweep(SweepArgs),
    /// Mixture-of-experts utilities.
    #[command(subcommand)]
    Moe(MoeCommand),
    /// Score a trace against gold answers.
    Eval(EvalArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Backend kind: mock or http.
    #[arg(long)]
    backend: Option<String>,
    /// Scenario file for the mock backend.
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Completion endpoint URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the http backend.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct WeightArgs {
    /// Relevance weight.
    #[arg(long)]
    w_rel: Option<f64>,
    /// Grounding weight.
    #[arg(long)]
    w_grd: Option<f64>,
    /// Utility weight.
    #[arg(long)]
    w_utl: Option<f64>,
    /// Add the mean answer-token log-probability to the rank score.
    #[arg(long)]
    include_seq: bool,
}

#[derive(Args)]
struct PrepareDataArgs {
    /// Input JSONL of QA pairs with supporting/nonsupporting contexts.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Output JSONL of training instances.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Critic: mock or remote.
    #[arg(long, default_value = "mock")]
    critic: String,
    /// Completion endpoint for the remote critic.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for the remote critic.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct InferArgs {
    /// Query file (JSONL: id, question, gold_answers).
    #[arg(long, value_name = "FILE")]
    queries: PathBuf,
    /// Context store (JSONL: query_id, contexts).
    #[arg(long, value_name = "FILE")]
    contexts: PathBuf,
    /// Trace output path (JSONL, one line per query).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    weights: WeightArgs,
    /// Prompt template: single-hop or multi-hop.
    #[arg(long)]
    template: Option<String>,
    /// Adaptive retrieval method: minp, meanp, or ret. Omit to always
    /// retrieve.
    #[arg(long)]
    adaptive: Option<String>,
    /// Retrieval threshold gamma.
    #[arg(long)]
    gamma: Option<f64>,
    /// Trigger retrieval above gamma instead of below.
    #[arg(long)]
    flip_gamma: bool,
    /// Long-form mode: segment-level beam search.
    #[arg(long)]
    long: bool,
    /// Beam size for long-form mode.
    #[arg(long)]
    beam: Option<usize>,
    /// Maximum search depth for long-form mode.
    #[arg(long)]
    depth: Option<usize>,
    /// Expand beam states with a continuation of the previous context.
    #[arg(long)]
    continue_expansion: bool,
    /// Contexts per query taken from the store.
    #[arg(long)]
    top_n: Option<usize>,
    /// Candidate-generation worker bound.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed recorded in trace metadata.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_name = "FILE")]
    queries: PathBuf,
    #[arg(long, value_name = "FILE")]
    contexts: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Confidence method: minp, meanp, or ret.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated gamma grid, e.g. "0,0.1,0.2".
    #[arg(long)]
    gammas: Option<String>,
    /// Gamma grid as start:end:step, e.g. "0:1:0.1".
    #[arg(long)]
    gamma_range: Option<String>,
    /// Trigger retrieval above gamma instead of below.
    #[arg(long)]
    flip_gamma: bool,
    /// Correctness metric: acc, em, or f1.
    #[arg(long, default_value = "acc")]
    metric: String,
    /// Contexts per query.
    #[arg(long)]
    top_n: Option<usize>,
    /// Prompt template: single-hop or multi-hop.
    #[arg(long)]
    template: Option<String>,
    /// Output directory; files are named sweep_<method>.csv/.json.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Explicit CSV output path (overrides --out-dir naming).
    #[arg(long, value_name = "FILE")]
    out_csv: Option<PathBuf>,
    /// Explicit JSON output path (overrides --out-dir naming).
    #[arg(long, value_name = "FILE")]
    out_json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MoeCommand {
    /// Print the parameter-accounting table for a preset or custom spec.
    Params(MoeParamsArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(MoeGradcheckArgs),
    /// Wrap a dense checkpoint's FFN layers into MoE blocks.
    Upcycle(MoeUpcycleArgs),
    /// Build a toy dense model, upcycle it, and run a few tokens.
    Demo(MoeDemoArgs),
    /// Emit per-layer expert activation statistics as CSV.
    Routes(MoeRoutesArgs),
}

#[derive(Args)]
struct MoeParamsArgs {
    /// Preset name: 7b, 13b, or toy.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dmodel: Option<usize>,
    #[arg(long)]
    dadapter: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Dense base parameter count.
    #[arg(long)]
    base_params: Option<u64>,
}

#[derive(Args)]
struct MoeGradcheckArgs {
    #[arg(long, default_value_t = 16)]
    dmodel: usize,
    #[arg(long, default_value_t = 20)]
    dff: usize,
    #[arg(long, default_value_t = 4)]
    experts: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 6)]
    dadapter: usize,
    /// Adapter nonlinearity: silu, tanh, or linear.
    #[arg(long, default_value = "silu")]
    sigma: String,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Fail (exit 1) when the max relative error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MoeUpcycleArgs {
    /// Dense checkpoint directory.
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Output directory for the MoE checkpoint.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    experts: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 512)]
    dadapter: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MoeDemoArgs {
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    dmodel: usize,
    #[arg(long, default_value_t = 32)]
    dff: usize,
    #[arg(long, default_value_t = 4)]
    experts: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    dadapter: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the toy dense checkpoint here.
    #[arg(long, value_name = "DIR")]
    out_dense: Option<PathBuf>,
    /// Write the upcycled MoE checkpoint here.
    #[arg(long, value_name = "DIR")]
    out_moe: Option<PathBuf>,
}

#[derive(Args)]
struct MoeRoutesArgs {
    /// MoE checkpoint directory.
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Number of random tokens to stream.
    #[arg(long, default_value_t = 1000)]
    tokens: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trace JSONL produced by `infer`.
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
    /// Gold query file (JSONL: id, question, gold_answers).
    #[arg(long, value_name = "FILE")]
    gold: PathBuf,
    /// Summary table CSV path.
    #[arg(long, value_name = "FILE")]
    out_table: Option<PathBuf>,
    /// Summary JSON path.
    #[arg(long, value_name = "FILE")]
    out_json: Option<PathBuf>,
    /// Per-query JSONL path.
    #[arg(long, value_name = "FILE")]
    out_per_query: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file_config = match config::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return report(e),
    };
    let result = match cli.command {
        Command::PrepareData(args) => commands::prepare_data(args, &file_config),
        Command::Infer(args) => commands::infer(args, &file_config),
        Command::Sweep(args) => commands::sweep(args, &file_config),
        Command::Moe(cmd) => commands::moe(cmd, &file_config),
        Command::Eval(args) => commands::eval(args, &file_config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    match e {
        CliError::Config(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        CliError::Runtime(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
