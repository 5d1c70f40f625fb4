//! `tsmin`: test-suite minimization from the command line.
//!
//! ```text
//! tsmin generate --tests 10 --stmts 20 --faults 5 --density 0.3 --seed 7 -o a.json
//! tsmin reduce a.json --solver rl --steps 10000 --seed 0 --out-dir out/
//! tsmin oracle a.json --objective trip
//! tsmin evaluate a.json out/solution.json
//! ```
//!
//! Exit codes: 0 success, 2 usage, 3 invalid or infeasible input, 4 solver
//! failure or fallback result, 5 internal error.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tsmin_core::embed::{SimilarityMode, DEFAULT_K};
use tsmin_core::env::BonusVariant;
use tsmin_core::model::{ObjectiveKind, DEFAULT_EXHAUSTIVE_LIMIT, DEFAULT_NODE_BUDGET};

#[derive(Parser, Debug)]
#[command(name = "tsmin", version, about = "Coverage-preserving test-suite minimization")]
struct Cli {
    /// Worker threads for parallel solvers.
    #[arg(long, global = true, env = "TSMIN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random valid instance.
    Generate(GenerateArgs),
    /// Reduce a suite and write the solution plus a metrics report.
    Reduce(ReduceArgs),
    /// Solve exactly and print the optimal selection.
    Oracle(OracleArgs),
    /// Recompute metrics for a solution file against an instance.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    tests: usize,
    #[arg(long)]
    stmts: usize,
    #[arg(long)]
    faults: usize,
    #[arg(long)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SolverKind {
    Rl,
    Oracle,
    Greedy,
}

/// Embedding and objective options shared by every solving command.
#[derive(Args, Debug, Clone, Serialize)]
struct ProblemArgs {
    /// Root seed; every random component derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding dimension (clamped to the graph size).
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// `cosine` or `constant:<value>`.
    #[arg(long, default_value = "cosine")]
    #[serde(serialize_with = "as_display")]
    similarity: SimilarityMode,
    /// `trip` or `bicriteria`.
    #[arg(long, default_value = "trip")]
    #[serde(serialize_with = "as_display")]
    objective: ObjectiveKind,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ExactArgs {
    /// Use branch-and-bound instead of enumeration, lifting the size limit.
    #[arg(long)]
    force_bnb: bool,
    #[arg(long, default_value_t = DEFAULT_EXHAUSTIVE_LIMIT)]
    exhaustive_limit: usize,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    node_budget: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TrainArgs {
    /// Total environment steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_envs: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    clip_range: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gae_lambda: Option<f64>,
    #[arg(long)]
    ent_coef: Option<f64>,
    #[arg(long)]
    vf_coef: Option<f64>,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    /// Iterations without improvement before stopping (0 disables).
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    no_normalize: bool,
    /// Per-episode step limit (default |U|).
    #[arg(long)]
    max_episode_steps: Option<usize>,
    /// Termination bonus sign: `intent` or `literal`.
    #[arg(long, default_value = "intent")]
    bonus: BonusVariant,
    /// Also write the trained policy.
    #[arg(long)]
    save_checkpoint: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ReduceArgs {
    instance: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverKind::Rl)]
    solver: SolverKind,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    exact: ExactArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Directory for solution, report and logs.
    #[arg(long, env = "TSMIN_OUT_DIR", default_value = "tsmin-out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct OracleArgs {
    instance: PathBuf,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    exact: ExactArgs,
    /// Also write the solution file here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct EvaluateArgs {
    instance: PathBuf,
    solution: PathBuf,
    #[command(flatten)]
    problem: ProblemArgs,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Reduce(a) => commands::reduce(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
