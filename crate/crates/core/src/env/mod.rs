//! Episodic test-selection environment over the bipartite graph.
//!
//! Each step selects one test. Its embedding and the embeddings of the
//! statement/fault nodes it newly covers are removed from running sums, and
//! the observation is `Σ_{u unselected} U[u] + Σ_{v uncovered} V[v]`.
//!
//! Step reward: `−selected/|U| + newly_covered/|V|`. On full coverage the
//! episode ends and a bonus comparing the episode's objective `O(s)` with the
//! best objective seen so far `O(s*)` is added. An episode cut short by the
//! step limit gets `−1` instead.

mod normalize;
mod vec_env;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingSet;
use crate::graph::BipartiteGraph;
use crate::model::ObjectiveConfig;

pub use normalize::{Normalizer, RunningMeanStd};
pub use vec_env::{BatchStep, VecEnv};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("action {action} is masked out (already selected or covers nothing new)")]
    InvalidAction { action: usize },
    #[error("action {action} out of range ({size} tests)")]
    ActionOutOfRange { action: usize, size: usize },
    #[error("episode is over; reset before stepping")]
    EpisodeOver,
    #[error("env {env}: {source}")]
    InEnv {
        env: usize,
        #[source]
        source: Box<EnvError>,
    },
}

/// Sign convention of the termination bonus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BonusVariant {
    /// `max(O(s*) − O(s), 0)`: pays when the episode beats the best so far.
    #[default]
    Intent,
    /// `max(O(s) − O(s*), 0)`, as literally written.
    Literal,
}

impl std::str::FromStr for BonusVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intent" => Ok(BonusVariant::Intent),
            "literal" => Ok(BonusVariant::Literal),
            other => Err(format!("unknown bonus variant {other:?} (expected intent or literal)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EnvConfig {
    pub bonus: BonusVariant,
    /// Episode step limit; `None` means |U|.
    pub max_episode_steps: Option<usize>,
}

/// Best feasible objective seen so far, `O(s*)`. Shared by all copies of a
/// vectorized environment and only written at episode ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestObjective(f64);

impl BestObjective {
    pub fn new(initial: f64) -> Self {
        Self(initial)
    }

    pub fn get(&self) -> f64 {
        self.0
    }

    fn record(&mut self, objective: f64) {
        if objective < self.0 {
            self.0 = objective;
        }
    }
}

/// Mutable per-episode state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub selected: Vec<bool>,
    pub covered: Vec<bool>,
    pub live_u_sum: Vec<f64>,
    pub live_v_sum: Vec<f64>,
    pub step_count: usize,
    pub covered_count: usize,
    /// Uncovered neighbours per test.
    live_degree: Vec<usize>,
    actions: Vec<usize>,
    episode_return: f64,
    done: bool,
}

impl EnvState {
    pub fn observation(&self) -> Vec<f64> {
        self.live_u_sum.iter().zip(&self.live_v_sum).map(|(a, b)| a + b).collect()
    }

    /// Bit `u` is set iff `u` is unselected and has an uncovered neighbour.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.selected
            .iter()
            .zip(&self.live_degree)
            .map(|(&sel, &deg)| !sel && deg > 0)
            .collect()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

/// Summary of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    /// Selected tests, ascending.
    pub selection: Vec<usize>,
    /// Actions in the order taken.
    pub actions: Vec<usize>,
    pub length: usize,
    /// Undiscounted sum of raw rewards, bonus/penalty included.
    pub episode_return: f64,
    pub feasible: bool,
    /// `O(s)`, only for feasible episodes.
    pub objective: Option<f64>,
    pub bonus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub selected_count: usize,
    pub newly_covered: usize,
    pub covered_count: usize,
    pub terminal: Option<EpisodeSummary>,
    /// Observation at the end of the episode, before any auto-reset.
    pub terminal_observation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub mask: Vec<bool>,
    pub info: StepInfo,
}

/// A single environment. Graph, embeddings and objective are shared
/// read-only between copies.
#[derive(Debug, Clone)]
pub struct TsmEnv {
    graph: Arc<BipartiteGraph>,
    emb: Arc<EmbeddingSet>,
    objective: Arc<ObjectiveConfig>,
    cfg: EnvConfig,
    initial_u_sum: Vec<f64>,
    initial_v_sum: Vec<f64>,
    state: EnvState,
}

fn column_sum(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).iter().sum()).collect()
}

impl TsmEnv {
    pub fn new(
        graph: Arc<BipartiteGraph>,
        emb: Arc<EmbeddingSet>,
        objective: Arc<ObjectiveConfig>,
        cfg: EnvConfig,
    ) -> Result<Self, EnvError> {
        if emb.u_vectors.nrows() != graph.u_size() || emb.v_vectors.nrows() != graph.v_size() {
            return Err(EnvError::DimensionMismatch(format!(
                "embeddings cover {}+{} nodes, graph has {}+{}",
                emb.u_vectors.nrows(),
                emb.v_vectors.nrows(),
                graph.u_size(),
                graph.v_size()
            )));
        }
        if objective.num_tests() != graph.u_size() {
            return Err(EnvError::DimensionMismatch(format!(
                "objective sized for {} tests, graph has {}",
                objective.num_tests(),
                graph.u_size()
            )));
        }
        let initial_u_sum = column_sum(&emb.u_vectors);
        let initial_v_sum = column_sum(&emb.v_vectors);
        let state = Self::fresh_state(&graph, &initial_u_sum, &initial_v_sum);
        Ok(Self {
            graph,
            emb,
            objective,
            cfg,
            initial_u_sum,
            initial_v_sum,
            state,
        })
    }

    fn fresh_state(graph: &BipartiteGraph, u_sum: &[f64], v_sum: &[f64]) -> EnvState {
        EnvState {
            selected: vec![false; graph.u_size()],
            covered: vec![false; graph.v_size()],
            live_u_sum: u_sum.to_vec(),
            live_v_sum: v_sum.to_vec(),
            step_count: 0,
            covered_count: 0,
            live_degree: (0..graph.u_size()).map(|u| graph.u_degree(u)).collect(),
            actions: Vec::new(),
            episode_return: 0.0,
            done: false,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.graph.u_size()
    }

    pub fn observation_dim(&self) -> usize {
        self.emb.k()
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.emb
    }

    pub fn max_episode_steps(&self) -> usize {
        self.cfg.max_episode_steps.unwrap_or(self.graph.u_size())
    }

    pub fn reset(&mut self) -> (Vec<f64>, Vec<bool>) {
        self.state = Self::fresh_state(&self.graph, &self.initial_u_sum, &self.initial_v_sum);
        (self.state.observation(), self.state.valid_mask())
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.state.valid_mask()
    }

    pub fn step(&mut self, action: usize, best: &mut BestObjective) -> Result<StepOutcome, EnvError> {
        let n_u = self.graph.u_size();
        if self.state.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= n_u {
            return Err(EnvError::ActionOutOfRange { action, size: n_u });
        }
        if self.state.selected[action] || self.state.live_degree[action] == 0 {
            return Err(EnvError::InvalidAction { action });
        }

        let st = &mut self.state;
        st.selected[action] = true;
        st.step_count += 1;
        st.actions.push(action);
        for (s, x) in st.live_u_sum.iter_mut().zip(self.emb.u_vectors.row(action).iter()) {
            *s -= x;
        }
        let mut newly = 0;
        for &v in self.graph.neighbors(action).expect("action in range") {
            if st.covered[v] {
                continue;
            }
            st.covered[v] = true;
            newly += 1;
            for (s, x) in st.live_v_sum.iter_mut().zip(self.emb.v_vectors.row(v).iter()) {
                *s -= x;
            }
            for &u in self.graph.covering_tests(v).expect("neighbour in range") {
                st.live_degree[u] -= 1;
            }
        }
        st.covered_count += newly;

        let mut reward = -(st.step_count as f64) / n_u as f64 + newly as f64 / self.graph.v_size() as f64;
        let mut terminal = None;
        let all_covered = st.covered_count == self.graph.v_size();
        if all_covered || st.step_count >= self.cfg.max_episode_steps.unwrap_or(n_u) {
            let mut selection: Vec<usize> = st.actions.clone();
            selection.sort_unstable();
            let (objective, bonus) = if all_covered {
                let o = self.objective.evaluate_sorted(&selection);
                let bonus = match self.cfg.bonus {
                    BonusVariant::Intent => (best.get() - o).max(0.0),
                    BonusVariant::Literal => (o - best.get()).max(0.0),
                };
                best.record(o);
                (Some(o), bonus)
            } else {
                (None, -1.0)
            };
            reward += bonus;
            st.done = true;
            terminal = Some(EpisodeSummary {
                selection,
                actions: st.actions.clone(),
                length: st.step_count,
                episode_return: st.episode_return + reward,
                feasible: all_covered,
                objective,
                bonus,
            });
        }
        st.episode_return += reward;

        let observation = st.observation();
        Ok(StepOutcome {
            mask: st.valid_mask(),
            reward,
            done: st.done,
            info: StepInfo {
                selected_count: st.step_count,
                newly_covered: newly,
                covered_count: st.covered_count,
                terminal_observation: terminal.as_ref().map(|_| observation.clone()),
                terminal,
            },
            observation,
        })
    }
}

/// One line of a rollout trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub env: usize,
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

/// Writes trace records as JSON lines.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
