//! Maskable actor-critic agent trained with PPO-clip.
//!
//! Each iteration collects `n_envs × n_steps` transitions from the
//! vectorized environment, computes GAE advantages and runs `n_epochs`
//! passes of shuffled minibatch updates. Every feasible episode seen along
//! the way is logged; the best one is the result.

mod buffer;
mod mlp;
mod optim;
mod policy;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbeddingSet, SimilarityMatrix};
use crate::env::{BonusVariant, EnvConfig, EnvError, Normalizer, TsmEnv, VecEnv};
use crate::graph::build_graph;
use crate::instance::TsmInstance;
use crate::model::{is_better, solve_greedy, ModelError, ObjectiveConfig, Solution, SolverInfo};
use crate::seed::{rng_for, Component};

pub use buffer::RolloutBuffer;
pub use mlp::{orthogonal, Layer, Mlp, MlpCache};
pub use optim::{clip_grad_norm, Adam};
pub use policy::{
    entropy, masked_log_softmax, normalized_advantages, ppo_loss_and_grad, sample_masked, LossTerms, Minibatch,
    PolicyParameters, PpoCoefficients,
};

pub const CHECKPOINT_FORMAT: &str = "tsmin-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("all actions are masked")]
    EmptyMask,
    #[error("non-finite values during training: {0}")]
    NonFinite(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_timesteps: usize,
    pub n_envs: usize,
    pub n_steps: usize,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub minibatch_size: usize,
    pub clip_range: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub n_epochs: usize,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    /// Running-statistics normalization of observations and rewards.
    pub normalize: bool,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub bonus: BonusVariant,
    /// Per-episode step limit; `None` means |U|.
    pub max_episode_steps: Option<usize>,
    /// Iterations without a better best objective before stopping; 0
    /// disables early stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 10_000,
            n_envs: 5,
            n_steps: 500,
            learning_rate: 3e-4,
            adam_eps: 1e-5,
            minibatch_size: 32,
            clip_range: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            n_epochs: 10,
            ent_coef: 0.0,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantage: true,
            normalize: true,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![128, 128],
            bonus: BonusVariant::Intent,
            max_episode_steps: None,
            early_stop_patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if self.n_envs == 0 || self.n_steps == 0 || self.minibatch_size == 0 || self.n_epochs == 0 {
            return bad("n_envs, n_steps, minibatch_size and n_epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return bad("clip_range must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.max_grad_norm <= 0.0 || self.vf_coef < 0.0 || self.ent_coef < 0.0 {
            return bad("max_grad_norm must be positive, vf_coef and ent_coef nonnegative");
        }
        if self.max_episode_steps == Some(0) {
            return bad("max_episode_steps must be positive");
        }
        Ok(())
    }

    /// `max(1, total_timesteps / (n_envs · n_steps))`.
    pub fn iterations(&self) -> usize {
        (self.total_timesteps / (self.n_envs * self.n_steps)).max(1)
    }

    pub fn coefficients(&self) -> PpoCoefficients {
        PpoCoefficients {
            clip_range: self.clip_range,
            ent_coef: self.ent_coef,
            vf_coef: self.vf_coef,
            normalize_advantage: self.normalize_advantage,
        }
    }
}

/// A finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    /// Global timestep at which the episode ended.
    pub timestep: usize,
    pub episode_return: f64,
    pub length: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedSolution {
    pub timestep: usize,
    pub selection: Vec<usize>,
    pub objective: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub timesteps: usize,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub best_objective: Option<f64>,
    pub losses: LossTerms,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainOutcome {
    /// Best feasible trajectory found during training.
    Solved(Solution),
    /// No feasible trajectory; carries the greedy solution instead.
    Fallback(Solution),
}

impl TrainOutcome {
    pub fn solution(&self) -> &Solution {
        match self {
            TrainOutcome::Solved(s) | TrainOutcome::Fallback(s) => s,
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, TrainOutcome::Fallback(_))
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub outcome: TrainOutcome,
    pub log: Vec<IterationRecord>,
    pub episodes: Vec<EpisodeStat>,
    pub solutions: Vec<RecordedSolution>,
    pub timesteps: usize,
    pub early_stopped: bool,
    pub policy: PolicyParameters,
    pub normalizer: Option<Normalizer>,
}

impl TrainResult {
    /// Mean episode return over episodes ending in the first and in the last
    /// `fraction` of the timesteps run. `None` where no episode ended.
    pub fn return_progress(&self, fraction: f64) -> (Option<f64>, Option<f64>) {
        let total = self.timesteps as f64;
        let mean = |pred: &dyn Fn(f64) -> bool| {
            let sel: Vec<f64> = self
                .episodes
                .iter()
                .filter(|e| pred(e.timestep as f64))
                .map(|e| e.episode_return)
                .collect();
            (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
        };
        (
            mean(&|t| t <= fraction * total),
            mean(&|t| t > (1.0 - fraction) * total),
        )
    }
}

/// Versioned policy snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: TrainConfig,
    pub params: PolicyParameters,
    pub normalizer: Option<Normalizer>,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, params: PolicyParameters, normalizer: Option<Normalizer>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: config.seed,
            config: config.clone(),
            params,
            normalizer,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let text = serde_json::to_string(self).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        let format = value.get("format").and_then(|f| f.as_str());
        let version = value.get("version").and_then(|v| v.as_u64());
        if format != Some(CHECKPOINT_FORMAT) || version != Some(CHECKPOINT_VERSION as u64) {
            return Err(AgentError::Checkpoint(format!(
                "unsupported header {format:?} v{version:?}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}"
            )));
        }
        serde_json::from_value(value).map_err(|e| AgentError::Checkpoint(e.to_string()))
    }
}

/// Writes iteration records as JSON lines.
pub fn write_training_log<W: Write>(log: &[IterationRecord], mut out: W) -> std::io::Result<()> {
    for rec in log {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn batch_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows[0].len();
    DMatrix::from_fn(k, rows.len(), |i, j| rows[j][i])
}

/// Trains on the trip objective and returns the best feasible selection
/// seen, or the greedy fallback if none was.
pub fn train(
    inst: &TsmInstance,
    emb: &EmbeddingSet,
    sim: &SimilarityMatrix,
    cfg: &TrainConfig,
) -> Result<TrainResult, AgentError> {
    cfg.validate()?;
    let start = Instant::now();
    let graph = Arc::new(build_graph(inst));
    let objective = ObjectiveConfig::trip(sim.clone());
    let greedy = solve_greedy(inst, &objective)?;
    let template = TsmEnv::new(
        graph.clone(),
        Arc::new(emb.clone()),
        Arc::new(objective),
        EnvConfig {
            bonus: cfg.bonus,
            max_episode_steps: cfg.max_episode_steps,
        },
    )?;
    let n_envs = cfg.n_envs;
    let mut venv = VecEnv::new(template, n_envs, greedy.objective);
    let obs_dim = venv.observation_dim();
    let n_actions = venv.num_actions();

    let mut init_rng = rng_for(cfg.seed, Component::PolicyInit);
    let mut shuffle_rng = rng_for(cfg.seed, Component::MinibatchShuffle);
    let mut action_rng = rng_for(cfg.seed, Component::ActionSampling);
    let mut params = PolicyParameters::new(obs_dim, n_actions, &cfg.actor_hidden, &cfg.critic_hidden, &mut init_rng);
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.adam_eps);
    let mut normalizer = cfg.normalize.then(|| Normalizer::new(obs_dim, n_envs, cfg.gamma));
    let coef = cfg.coefficients();

    let (raw_obs, mut masks) = venv.reset();
    let mut obs = match normalizer.as_mut() {
        Some(n) => n.observations(&raw_obs),
        None => raw_obs,
    };

    let mut buffer = RolloutBuffer::new(cfg.n_steps, n_envs, obs_dim);
    let mut episodes = Vec::new();
    let mut solutions: Vec<RecordedSolution> = Vec::new();
    let mut best: Option<usize> = None;
    let mut log = Vec::new();
    let mut timesteps = 0;
    let mut stale = 0;
    let mut early_stopped = false;

    for iteration in 0..cfg.iterations() {
        buffer.clear();
        let episodes_before = episodes.len();
        for _ in 0..cfg.n_steps {
            let x = batch_matrix(&obs);
            let logits = params.actor.forward(&x).output;
            let values = params.critic.forward(&x).output;
            let mut actions = Vec::with_capacity(n_envs);
            let mut log_probs = Vec::with_capacity(n_envs);
            for e in 0..n_envs {
                let logp = masked_log_softmax(logits.column(e).as_slice(), &masks[e])?;
                let a = sample_masked(&logp, &mut action_rng);
                actions.push(a);
                log_probs.push(logp[a]);
            }
            let step = venv.step(&actions)?;
            timesteps += n_envs;
            for info in &step.infos {
                let Some(ep) = &info.terminal else { continue };
                episodes.push(EpisodeStat {
                    timestep: timesteps,
                    episode_return: ep.episode_return,
                    length: ep.length,
                    feasible: ep.feasible,
                });
                if let Some(o) = ep.objective {
                    solutions.push(RecordedSolution {
                        timestep: timesteps,
                        selection: ep.selection.clone(),
                        objective: o,
                    });
                    let last = solutions.len() - 1;
                    if best.is_none_or(|b| {
                        is_better(o, &ep.selection, solutions[b].objective, &solutions[b].selection)
                    }) {
                        best = Some(last);
                    }
                }
            }
            let rewards = match normalizer.as_mut() {
                Some(n) => n.rewards(&step.rewards, &step.dones),
                None => step.rewards.clone(),
            };
            for e in 0..n_envs {
                buffer.push(
                    &obs[e],
                    actions[e],
                    log_probs[e],
                    rewards[e],
                    step.dones[e],
                    std::mem::take(&mut masks[e]),
                    values[(0, e)],
                );
            }
            obs = match normalizer.as_mut() {
                Some(n) => n.observations(&step.observations),
                None => step.observations,
            };
            masks = step.masks;
        }

        let last_values = params.critic.forward(&batch_matrix(&obs)).output;
        buffer.compute_returns_and_advantages(last_values.as_slice(), cfg.gamma, cfg.gae_lambda);

        let mut indices: Vec<usize> = (0..buffer.len()).collect();
        let mut sums = LossTerms::default();
        let mut grad_norm_sum = 0.0;
        let mut updates = 0usize;
        for _ in 0..cfg.n_epochs {
            indices.shuffle(&mut shuffle_rng);
            // the trailing partial minibatch is kept
            for chunk in indices.chunks(cfg.minibatch_size) {
                let mb = buffer.minibatch(chunk);
                let (terms, mut grads) = ppo_loss_and_grad(&params, &mb, &coef)?;
                grad_norm_sum += clip_grad_norm(&mut grads, cfg.max_grad_norm);
                adam.step(&mut params, &grads);
                if !params.is_finite() {
                    return Err(AgentError::NonFinite(format!(
                        "parameters after update {updates} of iteration {iteration}; last losses {terms:?}"
                    )));
                }
                sums.policy_loss += terms.policy_loss;
                sums.value_loss += terms.value_loss;
                sums.entropy += terms.entropy;
                sums.loss += terms.loss;
                sums.clip_fraction += terms.clip_fraction;
                sums.approx_kl += terms.approx_kl;
                updates += 1;
            }
        }
        let u = updates as f64;
        let losses = LossTerms {
            policy_loss: sums.policy_loss / u,
            value_loss: sums.value_loss / u,
            entropy: sums.entropy / u,
            loss: sums.loss / u,
            clip_fraction: sums.clip_fraction / u,
            approx_kl: sums.approx_kl / u,
        };

        let new_eps = &episodes[episodes_before..];
        let mean_return = (!new_eps.is_empty())
            .then(|| new_eps.iter().map(|e: &EpisodeStat| e.episode_return).sum::<f64>() / new_eps.len() as f64);
        let best_objective = best.map(|b| solutions[b].objective);
        let previous_best = log.last().and_then(|r: &IterationRecord| r.best_objective);
        let improved = match (best_objective, previous_best) {
            (Some(now), Some(before)) => now < before,
            (Some(_), None) => true,
            _ => false,
        };
        stale = if improved { 0 } else { stale + 1 };
        log.push(IterationRecord {
            iteration,
            timesteps,
            episodes: new_eps.len(),
            mean_return,
            best_objective,
            losses,
            grad_norm: grad_norm_sum / u,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        log::debug!(
            "iteration {iteration}: {timesteps} steps, mean return {mean_return:?}, best {best_objective:?}"
        );
        if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
            early_stopped = true;
            log::info!("early stop after {} iterations without improvement", stale);
            break;
        }
    }

    let outcome = match best {
        Some(b) => {
            let rec = &solutions[b];
            TrainOutcome::Solved(Solution {
                selected: rec.selection.clone(),
                objective: rec.objective,
                feasible: true,
                solver: SolverInfo {
                    name: "rl".into(),
                    proven_optimal: false,
                    nodes_explored: None,
                },
            })
        }
        None => {
            log::warn!("no feasible trajectory found; returning the greedy solution");
            TrainOutcome::Fallback(greedy)
        }
    };
    if let Some(n) = normalizer.as_mut() {
        n.set_training(false);
    }
    Ok(TrainResult {
        outcome,
        log,
        episodes,
        solutions,
        timesteps,
        early_stopped,
        policy: params,
        normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{compute_embeddings, compute_similarity, SimilarityMode};
    use crate::instance::{generate_synthetic, three_test_example};
    use crate::model::{is_feasible, ConstraintMode};

    fn setup(inst: &TsmInstance) -> (EmbeddingSet, SimilarityMatrix) {
        let emb = compute_embeddings(&build_graph(inst), 128, 0).unwrap();
        let sim = compute_similarity(&emb, SimilarityMode::Cosine);
        (emb, sim)
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            total_timesteps: 1000,
            n_steps: 100,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn worked_example_finds_the_optimum() {
        let inst = three_test_example();
        let (emb, sim) = setup(&inst);
        let res = train(&inst, &emb, &sim, &small_cfg(0)).unwrap();
        let sol = res.outcome.solution();
        assert!(!res.outcome.is_fallback());
        assert_eq!(sol.selected, vec![0, 1]);
        assert!((sol.objective - (2.0 + sim.get(0, 1))).abs() < 1e-12);
        assert_eq!(res.log.len(), 2);
        for rec in &res.solutions {
            assert!(is_feasible(&crate::model::Selection::from_indices(3, &rec.selection).unwrap(), &inst, ConstraintMode::Trip).feasible);
            assert!(sol.objective <= rec.objective);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let inst = generate_synthetic(8, 12, 3, 0.3, 4).unwrap();
        let (emb, sim) = setup(&inst);
        let a = train(&inst, &emb, &sim, &small_cfg(9)).unwrap();
        let b = train(&inst, &emb, &sim, &small_cfg(9)).unwrap();
        assert_eq!(a.outcome, b.outcome);
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.solutions, b.solutions);
        assert_eq!(a.policy, b.policy);
        let strip = |log: &[IterationRecord]| {
            log.iter().map(|r| IterationRecord { wall_time_s: 0.0, ..r.clone() }).collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.log), strip(&b.log));
    }

    #[test]
    fn short_budget_runs_one_iteration() {
        let inst = three_test_example();
        let (emb, sim) = setup(&inst);
        let cfg = TrainConfig { total_timesteps: 10, n_steps: 20, ..TrainConfig::default() };
        assert_eq!(cfg.iterations(), 1);
        let res = train(&inst, &emb, &sim, &cfg).unwrap();
        assert_eq!(res.log.len(), 1);
        assert_eq!(res.timesteps, 100);
    }

    #[test]
    fn unreachable_cover_falls_back_to_greedy() {
        // one step per episode can never cover everything here
        let inst = three_test_example();
        let (emb, sim) = setup(&inst);
        let cfg = TrainConfig { max_episode_steps: Some(1), ..small_cfg(0) };
        let res = train(&inst, &emb, &sim, &cfg).unwrap();
        assert!(res.outcome.is_fallback());
        assert_eq!(res.outcome.solution().solver.name, "greedy");
        assert!(res.episodes.iter().all(|e| !e.feasible && e.length == 1));
    }

    #[test]
    fn early_stop_triggers() {
        let inst = three_test_example();
        let (emb, sim) = setup(&inst);
        let cfg = TrainConfig { total_timesteps: 5000, n_steps: 20, early_stop_patience: 3, ..TrainConfig::default() };
        let res = train(&inst, &emb, &sim, &cfg).unwrap();
        assert!(res.early_stopped);
        assert!(res.log.len() < cfg.iterations());
    }

    #[test]
    fn invalid_config_rejected() {
        let inst = three_test_example();
        let (emb, sim) = setup(&inst);
        let cfg = TrainConfig { clip_range: 0.0, ..TrainConfig::default() };
        assert!(matches!(train(&inst, &emb, &sim, &cfg), Err(AgentError::InvalidConfig(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_header() {
        let mut rng = rng_for(0, Component::PolicyInit);
        let cfg = TrainConfig::default();
        let ck = Checkpoint::new(&cfg, PolicyParameters::new(3, 4, &[5], &[5], &mut rng), Some(Normalizer::new(3, 5, 0.99)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(AgentError::Checkpoint(_))));
    }

    #[test]
    fn training_log_lines() {
        let inst = three_test_example();
        let (emb, sim) = setup(&inst);
        let res = train(&inst, &emb, &sim, &small_cfg(1)).unwrap();
        let mut buf = Vec::new();
        write_training_log(&res.log, &mut buf).unwrap();
        let lines: Vec<IterationRecord> =
            String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines, res.log);
    }
}
