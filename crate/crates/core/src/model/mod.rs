//! Objectives, feasibility, and the exact and greedy solvers.
//!
//! Two objectives are supported:
//!
//! * `trip`: `Σ t_i + Σ_{i<j} c_ij · t_i · t_j`, subject to every statement
//!   and every fault being covered;
//! * `bicriteria`: `Σ t_i − Σ w_o(t_i) · t_i` with `w_o(t_i)` the fraction of
//!   known faults test `i` detects, subject to statement coverage only.
//!
//! Pair indicators `y_ij` are never free variables; they are always derived
//! as `t_i ∧ t_j`.

mod greedy;
mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::SimilarityMatrix;
use crate::instance::TsmInstance;

pub use greedy::{solve_greedy, solve_greedy_with, DEFAULT_LAMBDA};
pub use oracle::{solve_branch_and_bound, solve_exhaustive, solve_oracle, DEFAULT_EXHAUSTIVE_LIMIT, DEFAULT_NODE_BUDGET};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("selection covers {got} tests but the objective is sized for {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("test index {index} out of range ({size} tests)")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("instance is infeasible: {0} columns cannot be covered by any test")]
    Infeasible(usize),
    #[error("{tests} tests exceed the exhaustive-search limit of {limit}")]
    LimitExceeded { tests: usize, limit: usize },
    #[error("branch-and-bound exhausted its budget of {nodes} nodes without a feasible cover")]
    BudgetExhausted { nodes: u64 },
}

/// Decision vector `t` over the tests.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Selection {
    bits: Vec<bool>,
}

impl Selection {
    pub fn empty(num_tests: usize) -> Self {
        Self {
            bits: vec![false; num_tests],
        }
    }

    pub fn from_indices(num_tests: usize, indices: &[usize]) -> Result<Self, ModelError> {
        let mut sel = Self::empty(num_tests);
        for &i in indices {
            if i >= num_tests {
                return Err(ModelError::IndexOutOfRange { index: i, size: num_tests });
            }
            sel.bits[i] = true;
        }
        Ok(sel)
    }

    pub fn num_tests(&self) -> usize {
        self.bits.len()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn insert(&mut self, i: usize) {
        self.bits[i] = true;
    }

    pub fn remove(&mut self, i: usize) {
        self.bits[i] = false;
    }

    /// Selected indices, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    /// `y_ij`: whether both tests are selected.
    pub fn pair(&self, i: usize, j: usize) -> bool {
        self.bits[i] && self.bits[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Trip,
    Bicriteria,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Trip => "trip",
            ObjectiveKind::Bicriteria => "bicriteria",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trip" => Ok(ObjectiveKind::Trip),
            "bicriteria" => Ok(ObjectiveKind::Bicriteria),
            other => Err(format!("unknown objective {other:?} (expected trip or bicriteria)")),
        }
    }
}

/// Which columns must stay covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// Every statement and every fault.
    Trip,
    /// Statements only.
    Bicriteria,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveConfig {
    Trip { similarity: SimilarityMatrix },
    Bicriteria { fault_weights: Vec<f64> },
}

impl ObjectiveConfig {
    pub fn trip(similarity: SimilarityMatrix) -> Self {
        ObjectiveConfig::Trip { similarity }
    }

    /// Bicriteria objective with `w_o(t_i) = (Σ_k f_ik) / |F|` (0 when there
    /// are no faults).
    pub fn bicriteria(inst: &TsmInstance) -> Self {
        let nf = inst.num_faults();
        let fault_weights = (0..inst.num_tests())
            .map(|i| {
                if nf == 0 {
                    0.0
                } else {
                    inst.fault_matrix().row_support(i).count() as f64 / nf as f64
                }
            })
            .collect();
        ObjectiveConfig::Bicriteria { fault_weights }
    }

    pub fn kind(&self) -> ObjectiveKind {
        match self {
            ObjectiveConfig::Trip { .. } => ObjectiveKind::Trip,
            ObjectiveConfig::Bicriteria { .. } => ObjectiveKind::Bicriteria,
        }
    }

    pub fn constraint_mode(&self) -> ConstraintMode {
        match self {
            ObjectiveConfig::Trip { .. } => ConstraintMode::Trip,
            ObjectiveConfig::Bicriteria { .. } => ConstraintMode::Bicriteria,
        }
    }

    pub fn num_tests(&self) -> usize {
        match self {
            ObjectiveConfig::Trip { similarity } => similarity.size(),
            ObjectiveConfig::Bicriteria { fault_weights } => fault_weights.len(),
        }
    }

    /// Objective contribution of selecting test `i` on its own.
    pub(crate) fn linear_cost(&self, i: usize) -> f64 {
        match self {
            ObjectiveConfig::Trip { .. } => 1.0,
            ObjectiveConfig::Bicriteria { fault_weights } => 1.0 - fault_weights[i],
        }
    }

    /// Extra cost when both `i` and `j` are selected.
    pub(crate) fn pair_cost(&self, i: usize, j: usize) -> f64 {
        match self {
            ObjectiveConfig::Trip { similarity } => similarity.get(i, j),
            ObjectiveConfig::Bicriteria { .. } => 0.0,
        }
    }

    /// Objective over an ascending index list, summed in a fixed order so
    /// equal selections always give bit-identical values.
    pub(crate) fn evaluate_sorted(&self, indices: &[usize]) -> f64 {
        match self {
            ObjectiveConfig::Trip { similarity } => {
                let mut pairs = 0.0;
                for (a, &i) in indices.iter().enumerate() {
                    for &j in &indices[a + 1..] {
                        pairs += similarity.get(i, j);
                    }
                }
                indices.len() as f64 + pairs
            }
            ObjectiveConfig::Bicriteria { fault_weights } => {
                let weight: f64 = indices.iter().map(|&i| fault_weights[i]).sum();
                indices.len() as f64 - weight
            }
        }
    }
}

pub fn evaluate_objective(sel: &Selection, cfg: &ObjectiveConfig) -> Result<f64, ModelError> {
    if sel.num_tests() != cfg.num_tests() {
        return Err(ModelError::SizeMismatch {
            expected: cfg.num_tests(),
            got: sel.num_tests(),
        });
    }
    Ok(cfg.evaluate_sorted(&sel.indices()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub uncovered_stmts: Vec<usize>,
    pub uncovered_faults: Vec<usize>,
}

pub fn is_feasible(sel: &Selection, inst: &TsmInstance, mode: ConstraintMode) -> FeasibilityResult {
    let picked = sel.indices();
    let uncovered = |cols: usize, covers: &dyn Fn(usize, usize) -> bool| -> Vec<usize> {
        (0..cols)
            .filter(|&c| !picked.iter().any(|&t| t < inst.num_tests() && covers(t, c)))
            .collect()
    };
    let uncovered_stmts = uncovered(inst.num_stmts(), &|t, c| inst.covers_stmt(t, c));
    let uncovered_faults = match mode {
        ConstraintMode::Trip => uncovered(inst.num_faults(), &|t, c| inst.detects_fault(t, c)),
        ConstraintMode::Bicriteria => Vec::new(),
    };
    FeasibilityResult {
        feasible: uncovered_stmts.is_empty() && uncovered_faults.is_empty(),
        uncovered_stmts,
        uncovered_faults,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub name: String,
    pub proven_optimal: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nodes_explored: Option<u64>,
}

/// A selected subset with its objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Ascending test indices.
    pub selected: Vec<usize>,
    pub objective: f64,
    pub feasible: bool,
    pub solver: SolverInfo,
}

impl Solution {
    pub fn selection(&self, num_tests: usize) -> Selection {
        Selection::from_indices(num_tests, &self.selected).expect("solution indices are in range")
    }

    pub fn size(&self) -> usize {
        self.selected.len()
    }
}

/// Total order used to pick among solutions: objective, then cardinality,
/// then the lexicographically smaller index list.
pub(crate) fn is_better(obj_a: f64, sel_a: &[usize], obj_b: f64, sel_b: &[usize]) -> bool {
    obj_a
        .total_cmp(&obj_b)
        .then(sel_a.len().cmp(&sel_b.len()))
        .then_with(|| sel_a.cmp(sel_b))
        .is_lt()
}
