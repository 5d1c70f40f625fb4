use super::{ConstraintMode, ModelError, ObjectiveConfig, Solution, SolverInfo};
use crate::instance::TsmInstance;

pub const DEFAULT_LAMBDA: f64 = 1.0;

pub fn solve_greedy(inst: &TsmInstance, cfg: &ObjectiveConfig) -> Result<Solution, ModelError> {
    solve_greedy_with(inst, cfg, DEFAULT_LAMBDA)
}

/// Repeatedly picks the test maximizing `newly covered − λ · added pair
/// cost` among tests that cover something new; lowest index wins ties.
pub fn solve_greedy_with(inst: &TsmInstance, cfg: &ObjectiveConfig, lambda: f64) -> Result<Solution, ModelError> {
    let n = inst.num_tests();
    if cfg.num_tests() != n {
        return Err(ModelError::SizeMismatch { expected: n, got: cfg.num_tests() });
    }
    let s = inst.num_stmts();
    let with_faults = cfg.constraint_mode() == ConstraintMode::Trip;
    let cols = s + if with_faults { inst.num_faults() } else { 0 };
    let cover: Vec<Vec<usize>> = (0..n)
        .map(|t| {
            let mut c: Vec<usize> = inst.stmt_matrix().row_support(t).collect();
            if with_faults {
                c.extend(inst.fault_matrix().row_support(t).map(|k| s + k));
            }
            c
        })
        .collect();

    let mut covered = vec![false; cols];
    let mut remaining = cols;
    let mut picked = vec![false; n];
    let mut selected: Vec<usize> = Vec::new();
    while remaining > 0 {
        let mut best: Option<(f64, usize)> = None;
        for t in (0..n).filter(|&t| !picked[t]) {
            let gain = cover[t].iter().filter(|&&c| !covered[c]).count();
            if gain == 0 {
                continue;
            }
            let penalty: f64 = selected.iter().map(|&j| cfg.pair_cost(j, t)).sum();
            let score = gain as f64 - lambda * penalty;
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, t));
            }
        }
        let Some((_, t)) = best else {
            return Err(ModelError::Infeasible(remaining));
        };
        picked[t] = true;
        selected.push(t);
        for &c in &cover[t] {
            if !covered[c] {
                covered[c] = true;
                remaining -= 1;
            }
        }
    }
    selected.sort_unstable();
    let objective = cfg.evaluate_sorted(&selected);
    Ok(Solution {
        selected,
        objective,
        feasible: true,
        solver: SolverInfo {
            name: "greedy".into(),
            proven_optimal: false,
            nodes_explored: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{compute_embeddings, compute_similarity, SimilarityMode};
    use crate::graph::build_graph;
    use crate::instance::{generate_synthetic, three_test_example, BinaryMatrix};
    use crate::model::{is_feasible, solve_oracle};

    fn trip_cfg(inst: &TsmInstance) -> ObjectiveConfig {
        let emb = compute_embeddings(&build_graph(inst), 128, 0).unwrap();
        ObjectiveConfig::trip(compute_similarity(&emb, SimilarityMode::Cosine))
    }

    #[test]
    fn worked_example_keeps_forced_tests() {
        let inst = three_test_example();
        let sol = solve_greedy(&inst, &trip_cfg(&inst)).unwrap();
        assert!(sol.selected.contains(&0) && sol.selected.contains(&1));
        assert!(is_feasible(&sol.selection(3), &inst, ConstraintMode::Trip).feasible);
    }

    #[test]
    fn dominating_test_alone() {
        let inst = TsmInstance::new(
            vec!["a".into(), "b".into(), "c".into()],
            BinaryMatrix::from_rows(&[vec![1, 0, 0], vec![1, 1, 1], vec![0, 0, 1]], 3).unwrap(),
            BinaryMatrix::from_rows(&[vec![0], vec![1], vec![1]], 1).unwrap(),
        )
        .unwrap();
        assert_eq!(solve_greedy(&inst, &trip_cfg(&inst)).unwrap().selected, vec![1]);
    }

    #[test]
    fn never_beats_the_oracle() {
        let inst = generate_synthetic(10, 20, 5, 0.3, 7).unwrap();
        let cfg = trip_cfg(&inst);
        let greedy = solve_greedy(&inst, &cfg).unwrap();
        let oracle = solve_oracle(&inst, &cfg, 22).unwrap();
        assert!(greedy.objective >= oracle.objective);
        assert!(is_feasible(&greedy.selection(10), &inst, ConstraintMode::Trip).feasible);
    }

    #[test]
    fn bicriteria_only_needs_statements() {
        let inst = three_test_example();
        let cfg = ObjectiveConfig::bicriteria(&inst);
        let sol = solve_greedy(&inst, &cfg).unwrap();
        assert!(is_feasible(&sol.selection(3), &inst, ConstraintMode::Bicriteria).feasible);
    }
}
