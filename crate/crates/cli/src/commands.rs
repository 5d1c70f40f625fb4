use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tsmin_core::agent::{train, write_training_log, Checkpoint, TrainConfig, TrainResult};
use tsmin_core::embed::{compute_embeddings, compute_similarity, EmbeddingSet, SimilarityMatrix, SvdMethod};
use tsmin_core::evalkit::{compute_metrics, SolutionMetrics};
use tsmin_core::graph::build_graph;
use tsmin_core::instance::{generate_synthetic, load_instance, save_instance, validate, TsmInstance};
use tsmin_core::model::{
    is_feasible, solve_branch_and_bound, solve_greedy, solve_oracle, ObjectiveConfig, ObjectiveKind, Selection,
    Solution, SolverInfo,
};

use crate::exit::CliError;
use crate::{EvaluateArgs, ExactArgs, GenerateArgs, OracleArgs, ProblemArgs, ReduceArgs, SolverKind, TrainArgs};

/// On-disk solution. Holds no timing so repeated runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub objective_kind: String,
    pub selected_ids: Vec<String>,
    pub selected: Vec<usize>,
    pub objective: f64,
    pub feasible: bool,
    pub fallback: bool,
    pub solver: SolverInfo,
}

impl SolutionFile {
    fn new(sol: &Solution, prepared: &Prepared, fallback: bool) -> Self {
        let sel = sol.selection(prepared.inst.num_tests());
        Self {
            objective_kind: prepared.objective.kind().to_string(),
            selected_ids: sol.selected.iter().map(|&i| prepared.inst.test_ids()[i].clone()).collect(),
            selected: sol.selected.clone(),
            objective: sol.objective,
            feasible: is_feasible(&sel, &prepared.inst, prepared.objective.constraint_mode()).feasible,
            fallback,
            solver: sol.solver.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct EmbeddingInfo {
    k: usize,
    method: SvdMethod,
    singular_values: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct TrainingSummary {
    iterations: usize,
    timesteps: usize,
    episodes: usize,
    feasible_trajectories: usize,
    early_stopped: bool,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a ReduceArgs,
    train_config: Option<&'a TrainConfig>,
    similarity_mode: String,
    ablation: bool,
    embedding: EmbeddingInfo,
    solution: &'a SolutionFile,
    metrics: SolutionMetrics,
    training: Option<TrainingSummary>,
}

struct Prepared {
    inst: TsmInstance,
    emb: EmbeddingSet,
    sim: SimilarityMatrix,
    objective: ObjectiveConfig,
}

fn prepare(path: &Path, problem: &ProblemArgs) -> Result<Prepared> {
    let inst = load_instance(path).with_context(|| format!("loading {}", path.display()))?;
    for w in validate(&inst).warnings {
        log::warn!("{}: {w:?}", path.display());
    }
    let emb = compute_embeddings(&build_graph(&inst), problem.k, problem.seed).context("embedding")?;
    let sim = compute_similarity(&emb, problem.similarity);
    let objective = match problem.objective {
        ObjectiveKind::Trip => ObjectiveConfig::trip(sim.clone()),
        ObjectiveKind::Bicriteria => ObjectiveConfig::bicriteria(&inst),
    };
    Ok(Prepared { inst, emb, sim, objective })
}

fn solve_exact(p: &Prepared, exact: &ExactArgs) -> Result<Solution> {
    let sol = if exact.force_bnb {
        solve_branch_and_bound(&p.inst, &p.objective, exact.node_budget)
    } else {
        solve_oracle(&p.inst, &p.objective, exact.exhaustive_limit)
    }
    .context("exact solver")?;
    if !sol.solver.proven_optimal {
        log::warn!("node budget exhausted; solution is not proven optimal");
    }
    Ok(sol)
}

fn train_config(args: &TrainArgs, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        total_timesteps: args.steps.unwrap_or(d.total_timesteps),
        n_envs: args.n_envs.unwrap_or(d.n_envs),
        n_steps: args.n_steps.unwrap_or(d.n_steps),
        learning_rate: args.learning_rate.unwrap_or(d.learning_rate),
        minibatch_size: args.minibatch_size.unwrap_or(d.minibatch_size),
        n_epochs: args.epochs.unwrap_or(d.n_epochs),
        clip_range: args.clip_range.unwrap_or(d.clip_range),
        gamma: args.gamma.unwrap_or(d.gamma),
        gae_lambda: args.gae_lambda.unwrap_or(d.gae_lambda),
        ent_coef: args.ent_coef.unwrap_or(d.ent_coef),
        vf_coef: args.vf_coef.unwrap_or(d.vf_coef),
        max_grad_norm: args.max_grad_norm.unwrap_or(d.max_grad_norm),
        early_stop_patience: args.patience.unwrap_or(d.early_stop_patience),
        normalize: !args.no_normalize,
        max_episode_steps: args.max_episode_steps,
        bonus: args.bonus,
        seed,
        ..d
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let inst = generate_synthetic(a.tests, a.stmts, a.faults, a.density, a.seed)?;
    save_instance(&inst, &a.output)?;
    println!(
        "wrote {} ({} tests, {} statements, {} faults)",
        a.output.display(),
        inst.num_tests(),
        inst.num_stmts(),
        inst.num_faults()
    );
    Ok(())
}

pub fn reduce(a: &ReduceArgs) -> Result<()> {
    if a.solver == SolverKind::Rl && a.problem.objective != ObjectiveKind::Trip {
        return Err(CliError::Usage("the rl solver only supports --objective trip".into()).into());
    }
    let start = Instant::now();
    let p = prepare(&a.instance, &a.problem)?;
    let cfg = train_config(&a.train, a.problem.seed);
    let mut trained: Option<TrainResult> = None;
    let (sol, fallback) = match a.solver {
        SolverKind::Oracle => (solve_exact(&p, &a.exact)?, false),
        SolverKind::Greedy => (solve_greedy(&p.inst, &p.objective).context("greedy")?, false),
        SolverKind::Rl => {
            let res = train(&p.inst, &p.emb, &p.sim, &cfg).context("training")?;
            let out = (res.outcome.solution().clone(), res.outcome.is_fallback());
            trained = Some(res);
            out
        }
    };
    let wall = start.elapsed().as_secs_f64();

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let file = SolutionFile::new(&sol, &p, fallback);
    write_json(&a.out_dir.join("solution.json"), &file)?;

    let sel = sol.selection(p.inst.num_tests());
    let metrics = compute_metrics(&sel, &p.inst, &p.sim)?.with_wall_time(wall);
    let report = Report {
        tool: "tsmin",
        version: env!("CARGO_PKG_VERSION"),
        command: "reduce",
        config: a,
        train_config: trained.as_ref().map(|_| &cfg),
        similarity_mode: a.problem.similarity.to_string(),
        ablation: a.problem.similarity.is_ablation(),
        embedding: EmbeddingInfo {
            k: p.emb.k(),
            method: p.emb.method,
            singular_values: p.emb.singular_values.iter().copied().collect(),
        },
        solution: &file,
        metrics: metrics.clone(),
        training: trained.as_ref().map(|r| TrainingSummary {
            iterations: r.log.len(),
            timesteps: r.timesteps,
            episodes: r.episodes.len(),
            feasible_trajectories: r.solutions.len(),
            early_stopped: r.early_stopped,
        }),
    };
    write_json(&a.out_dir.join("report.json"), &report)?;

    let mut text = format!(
        "command: reduce\ninstance: {}\nsolver: {}\nobjective: {}\nsimilarity: {}{}\nseed: {}\nselected: {}\n",
        a.instance.display(),
        format!("{:?}", a.solver).to_lowercase(),
        a.problem.objective,
        a.problem.similarity,
        if report.ablation { " (ablation)" } else { "" },
        a.problem.seed,
        file.selected_ids.join(" "),
    );
    text.push_str(&metrics.to_text());
    fs::write(a.out_dir.join("report.txt"), &text).context("writing report.txt")?;
    print!("{text}");

    if let Some(res) = &trained {
        let log_path = a.out_dir.join("training_log.jsonl");
        let f = fs::File::create(&log_path).with_context(|| format!("writing {}", log_path.display()))?;
        write_training_log(&res.log, std::io::BufWriter::new(f))?;
        if a.train.save_checkpoint {
            Checkpoint::new(&cfg, res.policy.clone(), res.normalizer.clone())
                .save(&a.out_dir.join("policy.json"))?;
        }
    }
    if fallback {
        return Err(CliError::Fallback.into());
    }
    Ok(())
}

pub fn oracle(a: &OracleArgs) -> Result<()> {
    let p = prepare(&a.instance, &a.problem)?;
    let sol = solve_exact(&p, &a.exact)?;
    let file = SolutionFile::new(&sol, &p, false);
    if let Some(out) = &a.output {
        write_json(out, &file)?;
    }
    println!("{}", serde_json::to_string_pretty(&file)?);
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let p = prepare(&a.instance, &a.problem)?;
    let text = fs::read_to_string(&a.solution).with_context(|| format!("reading {}", a.solution.display()))?;
    let file: SolutionFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.solution.display()))?;
    let indices = file
        .selected_ids
        .iter()
        .map(|id| p.inst.test_index(id).ok_or_else(|| CliError::UnknownTest(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let sel = Selection::from_indices(p.inst.num_tests(), &indices)?;
    let metrics = compute_metrics(&sel, &p.inst, &p.sim)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&metrics)?);
    } else {
        print!("{}", metrics.to_text());
    }
    Ok(())
}
