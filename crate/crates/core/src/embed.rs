//! Node embeddings from a truncated SVD of the bipartite edge-weight matrix,
//! and the pairwise test-similarity matrix derived from them.
//!
//! With `W ≈ P Σ Qᵀ` (rank k), test vectors are the rows of `P Σ^{1/2}` and
//! statement/fault vectors the rows of `Q Σ^{1/2}`, so `U Vᵀ` reproduces the
//! truncated approximation of `W`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::BipartiteGraph;
use crate::seed::{self, Component};

pub const DEFAULT_K: usize = 128;
/// Above this many cells of `W` the randomized SVD is used.
pub const RANDOMIZED_THRESHOLD_CELLS: usize = 4_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("embedding dimension must be at least 1")]
    InvalidDimension,
    #[error("graph has no edges; nothing to embed")]
    DegenerateGraph,
    #[error("invalid similarity mode {0:?}: expected `cosine` or `constant:<value in [0,1]>`")]
    InvalidMode(String),
}

/// Produces the |U|×|V| matrix that gets factored. Alternative (e.g.
/// multi-hop) weightings plug in here.
pub trait WeightMatrixBuilder {
    fn build(&self, g: &BipartiteGraph) -> DMatrix<f64>;
}

/// Plain 0/1 biadjacency matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct Biadjacency;

impl WeightMatrixBuilder for Biadjacency {
    fn build(&self, g: &BipartiteGraph) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(g.u_size(), g.v_size());
        for (u, adj) in g.u_adjacency().iter().enumerate() {
            for &v in adj {
                w[(u, v)] = 1.0;
            }
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvdMethod {
    Dense,
    Randomized,
}

#[derive(Debug, Clone)]
pub struct EmbedConfig {
    pub k: usize,
    pub randomized_threshold: usize,
    pub oversampling: usize,
    pub power_iterations: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            randomized_threshold: RANDOMIZED_THRESHOLD_CELLS,
            oversampling: 10,
            power_iterations: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// Rows are test (U) vectors, |U| × k.
    pub u_vectors: DMatrix<f64>,
    /// Rows are statement/fault (V) vectors, |V| × k.
    pub v_vectors: DMatrix<f64>,
    /// Nonincreasing, length k.
    pub singular_values: Vec<f64>,
    pub method: SvdMethod,
}

impl EmbeddingSet {
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    /// Frobenius norm of `U Vᵀ − W`.
    pub fn reconstruction_error(&self, w: &DMatrix<f64>) -> f64 {
        (&self.u_vectors * self.v_vectors.transpose() - w).norm()
    }
}

struct Truncated {
    left: DMatrix<f64>,
    sigma: Vec<f64>,
    right: DMatrix<f64>,
}

/// Picks the `k` largest singular triplets, in descending order.
fn take_top(u: DMatrix<f64>, s: DVector<f64>, v_t: DMatrix<f64>, k: usize) -> Truncated {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order.truncate(k);
    let left = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    let right = DMatrix::from_fn(v_t.ncols(), k, |r, c| v_t[(order[c], r)]);
    let sigma = order.iter().map(|&i| s[i].max(0.0)).collect();
    Truncated { left, sigma, right }
}

fn dense_svd(w: &DMatrix<f64>, k: usize) -> Truncated {
    let svd = w.clone().svd(true, true);
    take_top(
        svd.u.expect("left vectors requested"),
        svd.singular_values,
        svd.v_t.expect("right vectors requested"),
        k,
    )
}

fn orthonormal_basis(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Range-finder SVD with Gaussian sketching and subspace power iterations.
fn randomized_svd(w: &DMatrix<f64>, k: usize, cfg: &EmbedConfig, seed: u64) -> Truncated {
    let (m, n) = w.shape();
    let l = (k + cfg.oversampling).min(m.min(n));
    let mut rng = seed::rng_for(seed, Component::Svd);
    let omega = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormal_basis(w * omega);
    for _ in 0..cfg.power_iterations {
        let z = orthonormal_basis(w.transpose() * &q);
        q = orthonormal_basis(w * z);
    }
    let b = q.transpose() * w;
    let svd = b.svd(true, true);
    let u = &q * svd.u.expect("left vectors requested");
    take_top(u, svd.singular_values, svd.v_t.expect("right vectors requested"), k)
}

/// Flips each singular pair so the largest-magnitude entry of the left
/// vector is nonnegative.
fn fix_signs(t: &mut Truncated) {
    for j in 0..t.left.ncols() {
        let mut best = 0;
        for i in 1..t.left.nrows() {
            if t.left[(i, j)].abs() > t.left[(best, j)].abs() {
                best = i;
            }
        }
        if t.left.nrows() > 0 && t.left[(best, j)] < 0.0 {
            t.left.column_mut(j).neg_mut();
            t.right.column_mut(j).neg_mut();
        }
    }
}

/// Embeds the graph with the biadjacency weighting and default settings.
pub fn compute_embeddings(g: &BipartiteGraph, k: usize, seed: u64) -> Result<EmbeddingSet, EmbedError> {
    let cfg = EmbedConfig { k, ..EmbedConfig::default() };
    compute_embeddings_with(g, &cfg, &Biadjacency, seed)
}

pub fn compute_embeddings_with(
    g: &BipartiteGraph,
    cfg: &EmbedConfig,
    weights: &dyn WeightMatrixBuilder,
    seed: u64,
) -> Result<EmbeddingSet, EmbedError> {
    if cfg.k < 1 {
        return Err(EmbedError::InvalidDimension);
    }
    if g.edge_count() == 0 {
        return Err(EmbedError::DegenerateGraph);
    }
    let w = weights.build(g);
    let max_k = w.nrows().min(w.ncols());
    let k = if cfg.k > max_k {
        log::warn!("embedding dimension {} clamped to {max_k} (min(|U|, |V|))", cfg.k);
        max_k
    } else {
        cfg.k
    };
    let (mut t, method) = if w.nrows() * w.ncols() > cfg.randomized_threshold {
        (randomized_svd(&w, k, cfg, seed), SvdMethod::Randomized)
    } else {
        (dense_svd(&w, k), SvdMethod::Dense)
    };
    fix_signs(&mut t);

    let root: Vec<f64> = t.sigma.iter().map(|s| s.sqrt()).collect();
    let scale = |mut m: DMatrix<f64>| {
        for (j, r) in root.iter().enumerate() {
            m.column_mut(j).scale_mut(*r);
        }
        m
    };
    Ok(EmbeddingSet {
        u_vectors: scale(t.left),
        v_vectors: scale(t.right),
        singular_values: t.sigma,
        method,
    })
}

/// How pairwise test similarity is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// Absolute cosine of the test embedding vectors.
    Cosine,
    /// Same value for every pair (ablation without similarity information).
    Constant(f64),
}

impl SimilarityMode {
    pub fn is_ablation(&self) -> bool {
        matches!(self, SimilarityMode::Constant(_))
    }
}

impl fmt::Display for SimilarityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimilarityMode::Cosine => f.write_str("cosine"),
            SimilarityMode::Constant(v) => write!(f, "constant:{v}"),
        }
    }
}

impl FromStr for SimilarityMode {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "cosine" {
            return Ok(SimilarityMode::Cosine);
        }
        let value = s
            .strip_prefix("constant:")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| EmbedError::InvalidMode(s.to_string()))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(EmbedError::InvalidMode(s.to_string()));
        }
        Ok(SimilarityMode::Constant(value))
    }
}

/// Upper-triangular similarity `c_ij` (i < j), packed row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    mode: SimilarityMode,
    packed: Vec<f64>,
}

impl SimilarityMatrix {
    fn offset(n: usize, i: usize) -> usize {
        // entries before row i: sum_{r<i} (n - 1 - r)
        i * (2 * n - i - 1) / 2
    }

    /// Builds a matrix from an arbitrary pair function; values are clamped
    /// into [0, 1].
    pub fn from_fn(n: usize, mode: SimilarityMode, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut packed = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                packed.push(f(i, j).clamp(0.0, 1.0));
            }
        }
        Self { n, mode, packed }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self::from_fn(n, SimilarityMode::Constant(value), |_, _| value)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> SimilarityMode {
        self.mode
    }

    /// `c_ij` for `i != j` (order-insensitive); 0 on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if a == b {
            return 0.0;
        }
        self.packed[Self::offset(self.n, a) + (b - a - 1)]
    }

    /// All `(i, j, c_ij)` with i < j.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n)
            .flat_map(move |i| (i + 1..self.n).map(move |j| (i, j)))
            .zip(self.packed.iter().copied())
            .map(|((i, j), c)| (i, j, c))
    }

    /// Sparse coordinate text: one `i j c_ij` line per nonzero entry.
    pub fn write_sparse<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j, c) in self.iter() {
            if c != 0.0 {
                writeln!(out, "{i} {j} {c:e}")?;
            }
        }
        Ok(())
    }
}

pub fn compute_similarity(emb: &EmbeddingSet, mode: SimilarityMode) -> SimilarityMatrix {
    let n = emb.u_vectors.nrows();
    match mode {
        SimilarityMode::Constant(value) => SimilarityMatrix::constant(n, value),
        SimilarityMode::Cosine => {
            let rows: Vec<DVector<f64>> = (0..n).map(|i| emb.u_vectors.row(i).transpose()).collect();
            let norms: Vec<f64> = rows.iter().map(|r| r.norm()).collect();
            SimilarityMatrix::from_fn(n, mode, |i, j| {
                if norms[i] == 0.0 || norms[j] == 0.0 {
                    0.0
                } else {
                    rows[i].dot(&rows[j]).abs() / (norms[i] * norms[j])
                }
            })
        }
    }
}

/// Text matrix with a three-line header (rows, cols, dtype) followed by one
/// whitespace-separated row per line.
pub fn write_matrix_text<W: Write>(m: &DMatrix<f64>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", m.nrows())?;
    writeln!(out, "{}", m.ncols())?;
    writeln!(out, "f64")?;
    for r in 0..m.nrows() {
        let line: Vec<String> = m.row(r).iter().map(|x| format!("{x:e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}
