//! `ivqa`: data generation, training, question generation, ranking
//! evaluation, metric reports, gradient checks and a rating session.

mod commands;
mod failure;
mod manifest;
mod rate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ivqa_core::model::{Variant, DEFAULT_HIDDEN, DEFAULT_MAX_LEN};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ivqa", version, about = "Answer-conditioned question generation and its evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a micro-world dataset (train/val/test JSONL plus scenes).
    GenData(GenDataArgs),
    /// Train a question generator.
    Train(TrainArgs),
    /// Beam-search or sample questions for every image-answer pair of a file.
    Generate(GenerateArgs),
    /// Build distractor pools and report ranking accuracy.
    Rank(RankArgs),
    /// Full report: ranking accuracy plus BLEU, ROUGE-L and CIDEr.
    Metrics(MetricsArgs),
    /// Rank-1 source-label table for one or more models.
    Breakdown(BreakdownArgs),
    /// Train prior, language-only and language+visual models and compare.
    BiasAudit(BiasAuditArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Interactive 0-4 rating of generated questions.
    Rate(RateArgs),
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 1000)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 4)]
    grid: usize,
    /// Questions per scene.
    #[arg(long, default_value_t = 4)]
    qa_per_scene: usize,
    /// Train/val/test fractions, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.75, 0.125, 0.125])]
    split: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr0: f64,
    #[arg(long, default_value_t = 0.83)]
    decay: f64,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Training JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    /// One of full, a, i, iat, sat, noattn.
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[command(flatten)]
    flags: TrainFlags,
    /// Output directory for checkpoints, loss log and final model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// JSONL of image-answer pairs (dataset format).
    #[arg(long = "in")]
    input: PathBuf,
    /// Scenes file for the rating view; defaults to scenes.jsonl beside the input.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    /// Hypotheses kept per pair.
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Sample with this temperature instead of beam search.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct PoolFlags {
    /// Evaluation split JSONL.
    #[arg(long)]
    test: PathBuf,
    /// Training split for question popularity; defaults to train.jsonl beside --test.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Scene file for the answering oracle; defaults to scenes.jsonl beside --test.
    #[arg(long)]
    scenes: Option<PathBuf>,
    /// Pool construction seed.
    #[arg(long, default_value_t = 0)]
    pool_seed: u64,
    /// Divide log-likelihoods by the number of scored tokens.
    #[arg(long)]
    normalize: bool,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum, Serialize)]
enum ScorerKind {
    Model,
    Prior,
    Oracle,
}

#[derive(Args, Serialize)]
struct RankArgs {
    /// Checkpoint, required for the model scorer.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    pools: PoolFlags,
    #[arg(long, value_enum, default_value_t = ScorerKind::Model)]
    scorer: ScorerKind,
    /// Also write the pools as JSONL.
    #[arg(long)]
    dump_pools: Option<PathBuf>,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct MetricsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    pools: PoolFlags,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BreakdownArgs {
    /// One or more checkpoints.
    #[arg(long, required = true)]
    ckpt: Vec<PathBuf>,
    #[command(flatten)]
    pools: PoolFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BiasAuditArgs {
    #[command(flatten)]
    pools: PoolFlags,
    #[command(flatten)]
    flags: TrainFlags,
    /// Output directory for the trained models and the comparison.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// One of full, a, i, iat, sat, noattn.
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[arg(long, default_value_t = 2)]
    grid: usize,
    /// Feature depth per location.
    #[arg(long, default_value_t = 8)]
    depth: usize,
    #[arg(long, default_value_t = 20)]
    vocab: usize,
    #[arg(long, default_value_t = 8)]
    mlb: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RateArgs {
    /// Generation JSONL from `ivqa generate`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Ratings JSONL, appended to; defaults to ratings.jsonl beside the input.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rater: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Rank(a) => commands::rank(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Breakdown(a) => commands::breakdown(a),
        Command::BiasAudit(a) => commands::bias_audit(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Rate(a) => rate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ivqa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
