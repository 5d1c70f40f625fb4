//! Solution metrics and the runtime regression model.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::SimilarityMatrix;
use crate::instance::TsmInstance;
use crate::model::{evaluate_objective, ObjectiveConfig, Selection};

/// Minimum sample count for the runtime fit.
pub const MIN_RUNTIME_SAMPLES: usize = 5;
pub const TESTS_SCALE: f64 = 1e2;
pub const STMTS_SCALE: f64 = 1e3;
pub const EDGES_SCALE: f64 = 1e5;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("selection covers {got} tests, instance has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("need at least {MIN_RUNTIME_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("design matrix is rank deficient")]
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMetrics {
    pub original_size: usize,
    pub reduced_size: usize,
    pub size_ratio: f64,
    pub stmt_coverage_pct: f64,
    pub fault_detection_rate_pct: f64,
    /// Trip objective of the selection.
    pub objective: f64,
    pub wall_time_s: f64,
}

impl SolutionMetrics {
    pub fn with_wall_time(mut self, secs: f64) -> Self {
        self.wall_time_s = secs;
        self
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "original_size: {}", self.original_size);
        let _ = writeln!(s, "reduced_size: {}", self.reduced_size);
        let _ = writeln!(s, "size_ratio: {:.6}", self.size_ratio);
        let _ = writeln!(s, "stmt_coverage_pct: {:.4}", self.stmt_coverage_pct);
        let _ = writeln!(s, "fault_detection_rate_pct: {:.4}", self.fault_detection_rate_pct);
        let _ = writeln!(s, "objective: {:.9}", self.objective);
        let _ = writeln!(s, "wall_time_s: {:.3}", self.wall_time_s);
        s
    }
}

/// Percentage of the original suite's covered columns still covered by
/// `sel`. A matrix with nothing to cover reports 100.
fn retained_pct(inst: &TsmInstance, sel: &Selection, fault: bool) -> f64 {
    let m = if fault { inst.fault_matrix() } else { inst.stmt_matrix() };
    let coverable: Vec<usize> = (0..m.cols()).filter(|&c| m.column_has_one(c)).collect();
    if coverable.is_empty() {
        return 100.0;
    }
    let chosen = sel.indices();
    let kept = coverable
        .iter()
        .filter(|&&c| chosen.iter().any(|&t| m.get(t, c) == 1))
        .count();
    if kept == coverable.len() {
        100.0
    } else {
        100.0 * kept as f64 / coverable.len() as f64
    }
}

pub fn compute_metrics(
    sel: &Selection,
    inst: &TsmInstance,
    sim: &SimilarityMatrix,
) -> Result<SolutionMetrics, EvalError> {
    let n = inst.num_tests();
    if sel.num_tests() != n || sim.size() != n {
        return Err(EvalError::SizeMismatch {
            expected: n,
            got: if sel.num_tests() != n { sel.num_tests() } else { sim.size() },
        });
    }
    let objective = evaluate_objective(sel, &ObjectiveConfig::trip(sim.clone()))
        .map_err(|_| EvalError::SizeMismatch { expected: n, got: sel.num_tests() })?;
    Ok(SolutionMetrics {
        original_size: n,
        reduced_size: sel.count(),
        size_ratio: sel.count() as f64 / n as f64,
        stmt_coverage_pct: retained_pct(inst, sel, false),
        fault_detection_rate_pct: retained_pct(inst, sel, true),
        objective,
        wall_time_s: 0.0,
    })
}

/// One row of a per-trial results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub subject: String,
    pub trial: u64,
    pub metrics: SolutionMetrics,
}

pub fn write_trials_csv<W: Write>(rows: &[TrialRow], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "subject,trial,original_size,reduced_size,size_ratio,stmt_coverage_pct,fault_detection_rate_pct,objective,wall_time_s"
    )?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.subject.replace(',', ";"),
            r.trial,
            m.original_size,
            m.reduced_size,
            m.size_ratio,
            m.stmt_coverage_pct,
            m.fault_detection_rate_pct,
            m.objective,
            m.wall_time_s
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSample {
    pub tests: f64,
    pub stmts: f64,
    pub edges: f64,
    pub runtime_s: f64,
}

/// `runtime ≈ intercept + tests·x₁ + stmts·x₂ + edges·x₃` with
/// `x₁ = tests/10², x₂ = stmts/10³, x₃ = edges/10⁵`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRegression {
    pub intercept: f64,
    pub tests: f64,
    pub stmts: f64,
    pub edges: f64,
    pub r_squared: f64,
}

impl RuntimeRegression {
    pub fn features(tests: f64, stmts: f64, edges: f64) -> [f64; 3] {
        [tests / TESTS_SCALE, stmts / STMTS_SCALE, edges / EDGES_SCALE]
    }

    pub fn predict(&self, tests: f64, stmts: f64, edges: f64) -> f64 {
        let [x1, x2, x3] = Self::features(tests, stmts, edges);
        self.intercept + self.tests * x1 + self.stmts * x2 + self.edges * x3
    }
}

/// Ordinary least squares through an SVD of the design matrix.
pub fn fit_runtime_model(samples: &[RuntimeSample]) -> Result<RuntimeRegression, EvalError> {
    if samples.len() < MIN_RUNTIME_SAMPLES {
        return Err(EvalError::TooFewSamples(samples.len()));
    }
    let n = samples.len();
    let x = DMatrix::from_fn(n, 4, |i, j| {
        let s = &samples[i];
        match j {
            0 => 1.0,
            _ => RuntimeRegression::features(s.tests, s.stmts, s.edges)[j - 1],
        }
    });
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.runtime_s));
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-12 * n as f64 {
        return Err(EvalError::RankDeficient);
    }
    let beta = svd.solve(&y, 0.0).map_err(|_| EvalError::RankDeficient)?;
    let residuals = &y - &x * &beta;
    let ss_res = residuals.norm_squared();
    let mean = y.mean();
    let ss_tot = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RuntimeRegression {
        intercept: beta[0],
        tests: beta[1],
        stmts: beta[2],
        edges: beta[3],
        r_squared,
    })
}
