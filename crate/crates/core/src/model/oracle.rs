//! Exact solvers: exhaustive enumeration (small suites) and depth-first
//! branch-and-bound over uncovered columns.

use rayon::prelude::*;

use super::{is_better, ConstraintMode, ModelError, ObjectiveConfig, Solution, SolverInfo};
use crate::instance::TsmInstance;

pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 22;
pub const DEFAULT_NODE_BUDGET: u64 = 20_000_000;

/// Slack used when pruning on floating-point bounds; keeps ties alive so
/// both solvers apply the same tie-breaking.
const PRUNE_SLACK: f64 = 1e-9;

/// Coverage of the columns that must stay covered, one bitmask per test.
struct CoverTable {
    masks: Vec<Vec<u64>>,
    full: Vec<u64>,
    /// Covering tests per required column.
    col_tests: Vec<Vec<usize>>,
}

impl CoverTable {
    fn new(inst: &TsmInstance, mode: ConstraintMode) -> Self {
        let s = inst.num_stmts();
        let f = match mode {
            ConstraintMode::Trip => inst.num_faults(),
            ConstraintMode::Bicriteria => 0,
        };
        let cols = s + f;
        let words = cols.div_ceil(64);
        let mut masks = vec![vec![0u64; words]; inst.num_tests()];
        let mut col_tests = vec![Vec::new(); cols];
        for (t, mask) in masks.iter_mut().enumerate() {
            let stmt = inst.stmt_matrix().row_support(t);
            let fault = inst.fault_matrix().row_support(t).filter(|_| f > 0).map(|k| s + k);
            for c in stmt.chain(fault) {
                mask[c / 64] |= 1 << (c % 64);
                col_tests[c].push(t);
            }
        }
        let mut full = vec![0u64; words];
        for c in 0..cols {
            full[c / 64] |= 1 << (c % 64);
        }
        Self { masks, full, col_tests }
    }

    fn uncoverable(&self) -> usize {
        self.col_tests.iter().filter(|t| t.is_empty()).count()
    }

    fn is_full(&self, covered: &[u64]) -> bool {
        covered == self.full.as_slice()
    }
}

fn check_coverable(table: &CoverTable) -> Result<(), ModelError> {
    match table.uncoverable() {
        0 => Ok(()),
        n => Err(ModelError::Infeasible(n)),
    }
}

type Candidate = (f64, Vec<usize>);

fn pick(a: Candidate, b: Candidate) -> Candidate {
    if is_better(b.0, &b.1, a.0, &a.1) {
        b
    } else {
        a
    }
}

struct Enumerator<'a> {
    table: &'a CoverTable,
    cfg: &'a ObjectiveConfig,
    selected: Vec<usize>,
    covered: Vec<u64>,
    cost: f64,
    best: Option<Candidate>,
}

impl Enumerator<'_> {
    fn run(&mut self, i: usize) {
        let n = self.table.masks.len();
        if i == n {
            if !self.table.is_full(&self.covered) {
                return;
            }
            if let Some((best, _)) = &self.best {
                if self.cost > best + PRUNE_SLACK {
                    return;
                }
            }
            let obj = self.cfg.evaluate_sorted(&self.selected);
            let cand = (obj, self.selected.clone());
            self.best = Some(match self.best.take() {
                Some(b) => pick(b, cand),
                None => cand,
            });
            return;
        }
        self.run(i + 1);

        let saved = self.covered.clone();
        let marginal = self.cfg.linear_cost(i)
            + self.selected.iter().map(|&j| self.cfg.pair_cost(j, i)).sum::<f64>();
        for (c, m) in self.covered.iter_mut().zip(&self.table.masks[i]) {
            *c |= m;
        }
        self.selected.push(i);
        let prev_cost = self.cost;
        self.cost += marginal;
        self.run(i + 1);
        self.cost = prev_cost;
        self.selected.pop();
        self.covered = saved;
    }
}

/// Enumerates all `2^n` subsets. The first few decisions are fanned out
/// across worker threads; the reduction uses a total order, so the result
/// does not depend on scheduling.
pub fn solve_exhaustive(inst: &TsmInstance, cfg: &ObjectiveConfig) -> Result<Solution, ModelError> {
    let n = inst.num_tests();
    if cfg.num_tests() != n {
        return Err(ModelError::SizeMismatch { expected: n, got: cfg.num_tests() });
    }
    let table = CoverTable::new(inst, cfg.constraint_mode());
    check_coverable(&table)?;

    let depth = n.min(6);
    let best = (0u64..1 << depth)
        .into_par_iter()
        .filter_map(|prefix| {
            let mut e = Enumerator {
                table: &table,
                cfg,
                selected: Vec::new(),
                covered: vec![0; table.full.len()],
                cost: 0.0,
                best: None,
            };
            for i in 0..depth {
                if prefix >> i & 1 == 1 {
                    e.cost += cfg.linear_cost(i) + e.selected.iter().map(|&j| cfg.pair_cost(j, i)).sum::<f64>();
                    e.selected.push(i);
                    for (c, m) in e.covered.iter_mut().zip(&table.masks[i]) {
                        *c |= m;
                    }
                }
            }
            e.run(depth);
            e.best
        })
        .reduce_with(pick)
        .ok_or(ModelError::Infeasible(0))?;

    Ok(Solution {
        selected: best.1,
        objective: best.0,
        feasible: true,
        solver: SolverInfo {
            name: "oracle-exhaustive".into(),
            proven_optimal: true,
            nodes_explored: Some((1u64 << n.min(63)).saturating_mul(2) - 1),
        },
    })
}

/// Exhaustive search for suites of at most `limit` tests.
pub fn solve_oracle(inst: &TsmInstance, cfg: &ObjectiveConfig, limit: usize) -> Result<Solution, ModelError> {
    if inst.num_tests() > limit {
        return Err(ModelError::LimitExceeded {
            tests: inst.num_tests(),
            limit,
        });
    }
    solve_exhaustive(inst, cfg)
}

struct BranchAndBound<'a> {
    table: &'a CoverTable,
    cfg: &'a ObjectiveConfig,
    selected: Vec<usize>,
    unavailable: Vec<bool>,
    covered: Vec<u64>,
    cost: f64,
    best: Option<Candidate>,
    nodes: u64,
    budget: u64,
    exhausted: bool,
}

impl BranchAndBound<'_> {
    fn new_coverage(&self, t: usize) -> u32 {
        self.table.masks[t]
            .iter()
            .zip(&self.covered)
            .map(|(m, c)| (m & !c).count_ones())
            .sum()
    }

    fn is_covered(&self, col: usize) -> bool {
        self.covered[col / 64] >> (col % 64) & 1 == 1
    }

    fn search(&mut self) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }

        let mut uncovered = 0usize;
        let mut branch_col = None;
        let mut branch_width = usize::MAX;
        for (col, tests) in self.table.col_tests.iter().enumerate() {
            if self.is_covered(col) {
                continue;
            }
            uncovered += 1;
            let width = tests.iter().filter(|&&t| !self.unavailable[t]).count();
            if width < branch_width {
                branch_width = width;
                branch_col = Some(col);
            }
        }
        let Some(col) = branch_col else {
            let mut sorted = self.selected.clone();
            sorted.sort_unstable();
            let obj = self.cfg.evaluate_sorted(&sorted);
            let cand = (obj, sorted);
            self.best = Some(match self.best.take() {
                Some(b) => pick(b, cand),
                None => cand,
            });
            return;
        };
        if branch_width == 0 {
            return;
        }

        // Lower bound: every further test covers at most `max_new` columns
        // and costs at least `min_cost`; similarity terms are nonnegative.
        if let Some((best, _)) = &self.best {
            let mut max_new = 0;
            let mut min_cost = f64::INFINITY;
            for t in 0..self.table.masks.len() {
                if self.unavailable[t] {
                    continue;
                }
                let gain = self.new_coverage(t);
                if gain > 0 {
                    max_new = max_new.max(gain as usize);
                    min_cost = min_cost.min(self.cfg.linear_cost(t));
                }
            }
            if max_new == 0 {
                return;
            }
            let needed = uncovered.div_ceil(max_new) as f64;
            if self.cost + needed * min_cost > best + PRUNE_SLACK {
                return;
            }
        }

        let candidates: Vec<usize> = self.table.col_tests[col]
            .iter()
            .copied()
            .filter(|&t| !self.unavailable[t])
            .collect();
        let mut banned = Vec::with_capacity(candidates.len());
        for t in candidates {
            let marginal =
                self.cfg.linear_cost(t) + self.selected.iter().map(|&j| self.cfg.pair_cost(j, t)).sum::<f64>();
            let saved = self.covered.clone();
            for (c, m) in self.covered.iter_mut().zip(&self.table.masks[t]) {
                *c |= m;
            }
            let prev_cost = self.cost;
            self.cost += marginal;
            self.selected.push(t);
            self.unavailable[t] = true;
            self.search();
            self.unavailable[t] = false;
            self.selected.pop();
            self.cost = prev_cost;
            self.covered = saved;

            // Later branches must not revisit covers that use `t`.
            self.unavailable[t] = true;
            banned.push(t);
        }
        for t in banned {
            self.unavailable[t] = false;
        }
    }
}

/// Branch-and-bound bounded by `node_budget` search nodes. If the budget
/// runs out after a cover was found, that cover is returned with
/// `proven_optimal = false`.
pub fn solve_branch_and_bound(
    inst: &TsmInstance,
    cfg: &ObjectiveConfig,
    node_budget: u64,
) -> Result<Solution, ModelError> {
    let n = inst.num_tests();
    if cfg.num_tests() != n {
        return Err(ModelError::SizeMismatch { expected: n, got: cfg.num_tests() });
    }
    let table = CoverTable::new(inst, cfg.constraint_mode());
    check_coverable(&table)?;
    let mut bnb = BranchAndBound {
        table: &table,
        cfg,
        selected: Vec::new(),
        unavailable: vec![false; n],
        covered: vec![0; table.full.len()],
        cost: 0.0,
        best: None,
        nodes: 0,
        budget: node_budget,
        exhausted: false,
    };
    bnb.search();
    let (objective, selected) = bnb.best.ok_or(ModelError::BudgetExhausted { nodes: node_budget })?;
    Ok(Solution {
        selected,
        objective,
        feasible: true,
        solver: SolverInfo {
            name: "oracle-bnb".into(),
            proven_optimal: !bnb.exhausted,
            nodes_explored: Some(bnb.nodes.min(node_budget)),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{compute_embeddings, compute_similarity, SimilarityMode};
    use crate::graph::build_graph;
    use crate::instance::{generate_synthetic, three_test_example, BinaryMatrix};
    use crate::model::{evaluate_objective, is_feasible, Selection};

    fn trip_cfg(inst: &TsmInstance) -> ObjectiveConfig {
        let g = build_graph(inst);
        let emb = compute_embeddings(&g, 128, 0).unwrap();
        ObjectiveConfig::trip(compute_similarity(&emb, SimilarityMode::Cosine))
    }

    /// Independent reference: test every bitmask directly.
    fn brute_force(inst: &TsmInstance, cfg: &ObjectiveConfig) -> (f64, Vec<usize>) {
        let n = inst.num_tests();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for mask in 0u64..1 << n {
            let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let sel = Selection::from_indices(n, &idx).unwrap();
            if !is_feasible(&sel, inst, cfg.constraint_mode()).feasible {
                continue;
            }
            let obj = evaluate_objective(&sel, cfg).unwrap();
            let better = match &best {
                None => true,
                Some((bo, bi)) => is_better(obj, &idx, *bo, bi),
            };
            if better {
                best = Some((obj, idx));
            }
        }
        best.unwrap()
    }

    #[test]
    fn worked_example_optima() {
        let inst = three_test_example();
        let trip = solve_oracle(&inst, &trip_cfg(&inst), DEFAULT_EXHAUSTIVE_LIMIT).unwrap();
        assert_eq!(trip.selected, vec![0, 1]);
        assert!(trip.solver.proven_optimal);

        let bic = solve_oracle(&inst, &ObjectiveConfig::bicriteria(&inst), DEFAULT_EXHAUSTIVE_LIMIT).unwrap();
        assert_eq!(bic.selected, vec![1, 2]);
        assert_eq!(bic.objective, 0.5);

        let bnb = solve_branch_and_bound(&inst, &ObjectiveConfig::bicriteria(&inst), DEFAULT_NODE_BUDGET).unwrap();
        assert_eq!(bnb.selected, vec![1, 2]);
    }

    #[test]
    fn single_test_instance() {
        let inst = TsmInstance::new(
            vec!["a".into(), "b".into()],
            BinaryMatrix::from_rows(&[vec![1, 1], vec![1, 0]], 2).unwrap(),
            BinaryMatrix::from_rows(&[vec![1], vec![0]], 1).unwrap(),
        )
        .unwrap();
        let cfg = trip_cfg(&inst);
        assert_eq!(solve_oracle(&inst, &cfg, 22).unwrap().selected, vec![0]);
        assert_eq!(solve_branch_and_bound(&inst, &cfg, 1000).unwrap().selected, vec![0]);
    }

    #[test]
    fn limit_is_enforced() {
        let inst = generate_synthetic(25, 10, 3, 0.2, 1).unwrap();
        let cfg = ObjectiveConfig::bicriteria(&inst);
        assert_eq!(
            solve_oracle(&inst, &cfg, DEFAULT_EXHAUSTIVE_LIMIT),
            Err(ModelError::LimitExceeded { tests: 25, limit: 22 })
        );
    }

    #[test]
    fn infeasible_instance_is_reported() {
        let inst = TsmInstance::from_parts_unchecked(
            vec!["a".into()],
            BinaryMatrix::from_rows(&[vec![1, 0]], 2).unwrap(),
            BinaryMatrix::zeros(1, 0),
        );
        let cfg = ObjectiveConfig::bicriteria(&inst);
        assert_eq!(solve_exhaustive(&inst, &cfg), Err(ModelError::Infeasible(1)));
        assert_eq!(solve_branch_and_bound(&inst, &cfg, 100), Err(ModelError::Infeasible(1)));
    }

    #[test]
    fn budget_exhaustion() {
        let inst = generate_synthetic(16, 30, 6, 0.25, 4).unwrap();
        let cfg = trip_cfg(&inst);
        assert_eq!(
            solve_branch_and_bound(&inst, &cfg, 1),
            Err(ModelError::BudgetExhausted { nodes: 1 })
        );
        let full = solve_branch_and_bound(&inst, &cfg, DEFAULT_NODE_BUDGET).unwrap();
        let nodes = full.solver.nodes_explored.unwrap();
        assert!(full.solver.proven_optimal && nodes > 2);
        if let Ok(sol) = solve_branch_and_bound(&inst, &cfg, nodes / 2) {
            assert!(!sol.solver.proven_optimal);
            assert!(is_feasible(&sol.selection(16), &inst, ConstraintMode::Trip).feasible);
        }
    }

    #[test]
    fn solvers_agree_with_brute_force() {
        for seed in 0..12 {
            let inst = generate_synthetic(4 + (seed as usize % 7), 12, 4, 0.3, seed).unwrap();
            for cfg in [trip_cfg(&inst), ObjectiveConfig::bicriteria(&inst)] {
                let (obj, idx) = brute_force(&inst, &cfg);
                let ex = solve_exhaustive(&inst, &cfg).unwrap();
                let bb = solve_branch_and_bound(&inst, &cfg, DEFAULT_NODE_BUDGET).unwrap();
                assert_eq!((ex.objective, &ex.selected), (obj, &idx), "seed {seed}");
                assert_eq!((bb.objective, &bb.selected), (obj, &idx), "seed {seed}");
                assert!(bb.solver.proven_optimal);
            }
        }
    }
}
