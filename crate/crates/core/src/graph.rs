//! Bipartite set-cover view of an instance: tests on one side, statements
//! and faults on the other.
//!
//! V-indices are laid out statements first, then faults: statement `p` is
//! V-index `p` and fault `k` is V-index `num_stmts + k`.

use std::io::Write;

use thiserror::Error;

use crate::instance::{BinaryMatrix, ColumnKind, TsmInstance};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("U-index {index} out of range (|U| = {size})")]
    UOutOfRange { index: usize, size: usize },
    #[error("V-index {index} out of range (|V| = {size})")]
    VOutOfRange { index: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    u_size: usize,
    num_stmts: usize,
    num_faults: usize,
    u_adj: Vec<Vec<usize>>,
    v_adj: Vec<Vec<usize>>,
    edge_count: usize,
}

impl BipartiteGraph {
    pub fn u_size(&self) -> usize {
        self.u_size
    }

    pub fn v_size(&self) -> usize {
        self.num_stmts + self.num_faults
    }

    pub fn num_stmts(&self) -> usize {
        self.num_stmts
    }

    pub fn num_faults(&self) -> usize {
        self.num_faults
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Sorted V-indices adjacent to `u`.
    pub fn neighbors(&self, u: usize) -> Result<&[usize], GraphError> {
        self.u_adj
            .get(u)
            .map(Vec::as_slice)
            .ok_or(GraphError::UOutOfRange { index: u, size: self.u_size })
    }

    /// Sorted U-indices adjacent to `v`.
    pub fn covering_tests(&self, v: usize) -> Result<&[usize], GraphError> {
        self.v_adj
            .get(v)
            .map(Vec::as_slice)
            .ok_or(GraphError::VOutOfRange { index: v, size: self.v_size() })
    }

    pub fn u_degree(&self, u: usize) -> usize {
        self.u_adj[u].len()
    }

    pub fn v_degree(&self, v: usize) -> usize {
        self.v_adj[v].len()
    }

    pub fn stmt_node(&self, p: usize) -> usize {
        p
    }

    pub fn fault_node(&self, k: usize) -> usize {
        self.num_stmts + k
    }

    /// Which criterion a V-index stands for, with its column index.
    pub fn v_kind(&self, v: usize) -> (ColumnKind, usize) {
        if v < self.num_stmts {
            (ColumnKind::Statement, v)
        } else {
            (ColumnKind::Fault, v - self.num_stmts)
        }
    }

    pub(crate) fn u_adjacency(&self) -> &[Vec<usize>] {
        &self.u_adj
    }

    /// Rebuilds the statement and fault matrices from the adjacency lists.
    pub fn to_matrices(&self) -> (BinaryMatrix, BinaryMatrix) {
        let mut stmt = BinaryMatrix::zeros(self.u_size, self.num_stmts);
        let mut fault = BinaryMatrix::zeros(self.u_size, self.num_faults);
        for (u, adj) in self.u_adj.iter().enumerate() {
            for &v in adj {
                match self.v_kind(v) {
                    (ColumnKind::Statement, p) => stmt.set(u, p, 1),
                    (ColumnKind::Fault, k) => fault.set(u, k, 1),
                }
            }
        }
        (stmt, fault)
    }

    /// Writes one `u v` pair per line.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (u, adj) in self.u_adj.iter().enumerate() {
            for v in adj {
                writeln!(out, "{u} {v}")?;
            }
        }
        Ok(())
    }
}

pub fn build_graph(inst: &TsmInstance) -> BipartiteGraph {
    let n = inst.num_tests();
    let s = inst.num_stmts();
    let f = inst.num_faults();
    let mut u_adj = vec![Vec::new(); n];
    let mut v_adj = vec![Vec::new(); s + f];
    for (u, adj) in u_adj.iter_mut().enumerate() {
        adj.extend(inst.stmt_matrix().row_support(u));
        adj.extend(inst.fault_matrix().row_support(u).map(|k| s + k));
        for &v in adj.iter() {
            v_adj[v].push(u);
        }
    }
    let edge_count = u_adj.iter().map(Vec::len).sum();
    BipartiteGraph {
        u_size: n,
        num_stmts: s,
        num_faults: f,
        u_adj,
        v_adj,
        edge_count,
    }
}
