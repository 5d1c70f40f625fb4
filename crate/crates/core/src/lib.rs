//! Similarity-aware test suite minimization.
//!
//! A test suite is reduced under two hard constraints (every statement stays
//! covered, every known fault stays detected) while minimizing the suite size
//! plus the pairwise coverage similarity of the kept tests. The problem is
//! modelled as set cover on a bipartite graph of tests versus
//! statements-and-faults; the graph is embedded by truncated SVD and a
//! masked actor-critic agent trained with PPO searches for small, diverse
//! covers. Exhaustive and branch-and-bound oracles plus a greedy baseline are
//! provided for verification.
//!
//! Pipeline: [`instance`] → [`graph`] → [`embed`] → [`model`] / [`env`] →
//! [`agent`] → [`evalkit`].

pub mod agent;
pub mod embed;
pub mod env;
pub mod evalkit;
pub mod graph;
pub mod instance;
pub mod model;
pub mod seed;

pub use embed::{EmbeddingSet, SimilarityMatrix, SimilarityMode};
pub use graph::BipartiteGraph;
pub use instance::TsmInstance;
pub use model::{ConstraintMode, ObjectiveConfig, Selection, Solution};
