//! Acceptance gate: one pass/fail line per criterion, nonzero exit if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tsmin_core::agent::{masked_log_softmax, ppo_loss_and_grad, train, Minibatch, PolicyParameters, PpoCoefficients, TrainConfig};
use tsmin_core::embed::{
    compute_embeddings, compute_embeddings_with, compute_similarity, Biadjacency, EmbedConfig, EmbeddingSet,
    SimilarityMatrix, SimilarityMode, WeightMatrixBuilder,
};
use tsmin_core::env::{BestObjective, EnvConfig, TsmEnv};
use tsmin_core::evalkit::{compute_metrics, fit_runtime_model, RuntimeRegression, RuntimeSample};
use tsmin_core::graph::build_graph;
use tsmin_core::instance::{generate_synthetic, three_test_example, BinaryMatrix, TsmInstance};
use tsmin_core::model::{
    is_feasible, solve_branch_and_bound, solve_exhaustive, solve_greedy, solve_oracle, ConstraintMode,
    ObjectiveConfig, DEFAULT_NODE_BUDGET,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn embed(inst: &TsmInstance, seed: u64) -> (EmbeddingSet, SimilarityMatrix) {
    let emb = compute_embeddings(&build_graph(inst), 128, seed).expect("embedding");
    let sim = compute_similarity(&emb, SimilarityMode::Cosine);
    (emb, sim)
}

/// Random instance with `tests` in `t_range` and density in [0.1, 0.5].
fn random_instance(rng: &mut ChaCha8Rng, t_range: std::ops::RangeInclusive<usize>) -> (TsmInstance, String) {
    let t = rng.random_range(t_range);
    let s = rng.random_range(t..=3 * t);
    let f = rng.random_range(3..=t.max(4));
    let d = rng.random_range(0.1..=0.5);
    let seed = rng.random::<u64>();
    let label = format!("T={t} S={s} F={f} d={d:.2}");
    (generate_synthetic(t, s, f, d, seed).expect("valid parameters"), label)
}

fn within(start: Instant, budget: Duration) -> (bool, String) {
    let el = start.elapsed();
    (el < budget, format!("{:.1}s of {}s", el.as_secs_f64(), budget.as_secs()))
}

fn worked_example() -> Verdict {
    let start = Instant::now();
    let inst = three_test_example();
    let (_, sim) = embed(&inst, 0);
    let trip = solve_oracle(&inst, &ObjectiveConfig::trip(sim), 22).expect("trip oracle");
    let bi = solve_oracle(&inst, &ObjectiveConfig::bicriteria(&inst), 22).expect("bicriteria oracle");
    let (fast, t) = within(start, Duration::from_secs(1));
    let ok = trip.selected == [0, 1] && bi.selected == [1, 2] && bi.objective == 0.5 && fast;
    verdict(ok, format!("trip {:?}, bicriteria {:?} obj {}; {t}", trip.selected, bi.selected, bi.objective))
}

fn constraint_preservation() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances: Vec<_> = (0..100u64).map(|i| (i, random_instance(&mut rng, 10..=50))).collect();
    let failures: Vec<String> = instances
        .par_iter()
        .filter_map(|(i, (inst, label))| {
            let (emb, sim) = embed(inst, *i);
            let res = train(inst, &emb, &sim, &TrainConfig { seed: *i, ..TrainConfig::default() }).expect("training");
            let sol = res.outcome.solution();
            let m = compute_metrics(&sol.selection(inst.num_tests()), inst, &sim).expect("metrics");
            let ok = !res.outcome.is_fallback() && m.stmt_coverage_pct == 100.0 && m.fault_detection_rate_pct == 100.0;
            (!ok).then(|| format!("#{i} {label}: stmt {} fdr {}", m.stmt_coverage_pct, m.fault_detection_rate_pct))
        })
        .collect();
    let (fast, t) = within(start, Duration::from_secs(600));
    verdict(failures.is_empty() && fast, format!("{} of 100 instances short of 100/100 {failures:?}; {t}", failures.len()))
}

fn near_optimality() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let instances: Vec<_> = (0..30u64).map(|i| (i, random_instance(&mut rng, 10..=20).0)).collect();
    let ratios: Vec<f64> = instances
        .par_iter()
        .map(|(i, inst)| {
            let (emb, sim) = embed(inst, *i);
            let oracle = solve_exhaustive(inst, &ObjectiveConfig::trip(sim.clone())).expect("oracle");
            let res = train(inst, &emb, &sim, &TrainConfig { seed: *i, ..TrainConfig::default() }).expect("training");
            res.outcome.solution().size() as f64 / oracle.size() as f64
        })
        .collect();
    let good = ratios.iter().filter(|&&r| r <= 1.10).count();
    let (fast, t) = within(start, Duration::from_secs(1800));
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    verdict(good >= 27 && fast, format!("{good}/30 with size ratio <= 1.10 (mean {mean:.3}, worst {worst:.3}); {t}"))
}

fn oracle_consistency() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for i in 0..50 {
        let (inst, _) = random_instance(&mut rng, 3..=12);
        let (_, sim) = embed(&inst, i);
        for cfg in [ObjectiveConfig::trip(sim), ObjectiveConfig::bicriteria(&inst)] {
            let ex = solve_exhaustive(&inst, &cfg).expect("exhaustive");
            let bb = solve_branch_and_bound(&inst, &cfg, DEFAULT_NODE_BUDGET).expect("branch and bound");
            if ex.objective != bb.objective || !bb.solver.proven_optimal {
                mismatches += 1;
            }
        }
    }
    let (fast, t) = within(start, Duration::from_secs(300));
    verdict(mismatches == 0 && fast, format!("{mismatches} mismatches over 50 instances x 2 objectives; {t}"))
}

fn embedding_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut graphs = 0;
    let mut insts = vec![three_test_example()];
    for _ in 0..20 {
        insts.push(random_instance(&mut rng, 3..=30).0);
    }
    for (i, inst) in insts.iter().enumerate() {
        let g = build_graph(inst);
        let w = Biadjacency.build(&g);
        let full = g.u_size().min(g.v_size());
        let dense = compute_embeddings(&g, full, i as u64).expect("dense");
        let randomized = compute_embeddings_with(
            &g,
            &EmbedConfig { k: full, randomized_threshold: 0, ..EmbedConfig::default() },
            &Biadjacency,
            i as u64,
        )
        .expect("randomized");
        worst = worst.max(dense.reconstruction_error(&w)).max(randomized.reconstruction_error(&w));
        graphs += 1;
    }
    // rows 0 and 2 share coverage
    let dup = TsmInstance::new(
        vec!["a".into(), "b".into(), "c".into(), "d".into()],
        BinaryMatrix::from_rows(&[vec![1, 0, 1, 1], vec![0, 1, 1, 0], vec![1, 0, 1, 1], vec![0, 0, 0, 1]], 4).unwrap(),
        BinaryMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 0], vec![1, 1]], 2).unwrap(),
    )
    .expect("valid");
    let emb = compute_embeddings(&build_graph(&dup), 128, 0).expect("embedding");
    let dup_gap = (emb.u_vectors.row(0) - emb.u_vectors.row(2)).amax();
    verdict(
        worst < 1e-6 && dup_gap < 1e-9,
        format!("max ||PSQ^T - W||_F = {worst:.2e} over {graphs} graphs (dense + randomized); duplicate rows differ by {dup_gap:.1e}"),
    )
}

fn similarity_contract() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut out_of_range = 0;
    let mut pairs = 0;
    for i in 0..30 {
        let (inst, _) = random_instance(&mut rng, 2..=40);
        let (_, sim) = embed(&inst, i);
        for (_, _, c) in sim.iter() {
            pairs += 1;
            if !(0.0..=1.0).contains(&c) {
                out_of_range += 1;
            }
        }
    }
    let twin = TsmInstance::new(
        vec!["a".into(), "b".into(), "c".into()],
        BinaryMatrix::from_rows(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 1, 0]], 3).unwrap(),
        BinaryMatrix::from_rows(&[vec![1], vec![0], vec![1]], 1).unwrap(),
    )
    .expect("valid");
    let (emb, sim) = embed(&twin, 0);
    let twin_c = sim.get(0, 2);
    let constant = compute_similarity(&emb, SimilarityMode::Constant(0.5));
    let const_ok = constant.iter().all(|(_, _, c)| c == 0.5);
    verdict(
        out_of_range == 0 && (twin_c - 1.0).abs() < 1e-9 && const_ok,
        format!("{out_of_range}/{pairs} pairs outside [0,1]; identical pair {twin_c:.12}; constant mode exact: {const_ok}"),
    )
}

fn make_env(inst: &TsmInstance, seed: u64) -> TsmEnv {
    let (emb, sim) = embed(inst, seed);
    TsmEnv::new(
        std::sync::Arc::new(build_graph(inst)),
        std::sync::Arc::new(emb),
        std::sync::Arc::new(ObjectiveConfig::trip(sim)),
        EnvConfig::default(),
    )
    .expect("env")
}

/// Random-policy episodes; returns (steps, invalid actions, all-zero masks
/// before done, worst reward-algebra error, episodes).
fn random_rollouts(min_steps: usize, seed: u64) -> (usize, usize, usize, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut steps, mut invalid, mut empty, mut worst, mut episodes) = (0, 0, 0, 0.0f64, 0);
    let mut i = 0;
    while steps < min_steps {
        let (inst, _) = random_instance(&mut rng, 2..=30);
        let mut env = make_env(&inst, i);
        let greedy = solve_greedy(&inst, &ObjectiveConfig::trip(embed(&inst, i).1)).expect("greedy");
        let mut best = BestObjective::new(greedy.objective);
        i += 1;
        for _ in 0..5 {
            let (_, mut mask) = env.reset();
            let mut total = 0.0;
            loop {
                let valid: Vec<usize> = (0..mask.len()).filter(|&u| mask[u]).collect();
                if valid.is_empty() {
                    empty += 1;
                    break;
                }
                let a = valid[rng.random_range(0..valid.len())];
                let out = match env.step(a, &mut best) {
                    Ok(o) => o,
                    Err(_) => {
                        invalid += 1;
                        break;
                    }
                };
                steps += 1;
                total += out.reward;
                mask = out.mask;
                if let Some(summary) = out.info.terminal {
                    let l = summary.length as f64;
                    let closed = 1.0 - l * (l + 1.0) / 2.0 / inst.num_tests() as f64;
                    let sel = summary.selection.clone();
                    let feasible = is_feasible(
                        &tsmin_core::model::Selection::from_indices(inst.num_tests(), &sel).unwrap(),
                        &inst,
                        ConstraintMode::Trip,
                    )
                    .feasible;
                    if !feasible {
                        invalid += 1;
                    }
                    worst = worst.max((total - summary.bonus - closed).abs());
                    episodes += 1;
                    break;
                }
            }
        }
    }
    (steps, invalid, empty, worst, episodes)
}

fn masking_soundness() -> Verdict {
    let (steps, invalid, empty, _, episodes) = random_rollouts(10_000, 7);
    verdict(
        steps >= 10_000 && invalid == 0 && empty == 0,
        format!("{steps} steps over {episodes} episodes; {invalid} invalid actions; {empty} empty masks before done"),
    )
}

fn reward_algebra() -> Verdict {
    let (_, _, _, worst, episodes) = random_rollouts(3_000, 8);
    verdict(worst < 1e-9, format!("max |return - (1 - L(L+1)/2|U|)| = {worst:.2e} over {episodes} episodes"))
}

fn random_minibatch(params: &PolicyParameters, obs_dim: usize, b: usize, rng: &mut ChaCha8Rng) -> Minibatch {
    let n = params.num_actions();
    let observations = DMatrix::from_fn(obs_dim, b, |_, _| rng.random_range(-2.0..2.0));
    let mut masks = Vec::new();
    let mut actions = Vec::new();
    let mut old = Vec::new();
    for i in 0..b {
        let mut m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        m[rng.random_range(0..n)] = true;
        let valid: Vec<usize> = (0..n).filter(|&j| m[j]).collect();
        let a = valid[rng.random_range(0..valid.len())];
        let logits = params.actor.forward(&observations.columns(i, 1).into_owned()).output;
        let logp = masked_log_softmax(logits.as_slice(), &m).expect("mask");
        // keep every ratio clear of the clip kinks at 1 ± 0.2
        let ratio: f64 = match rng.random_range(0..3) {
            0 => rng.random_range(0.9..1.1),
            1 => rng.random_range(1.3..1.6),
            _ => rng.random_range(0.4..0.7),
        };
        old.push(logp[a] - ratio.ln());
        masks.push(m);
        actions.push(a);
    }
    Minibatch {
        observations,
        masks,
        actions,
        old_log_probs: old,
        advantages: (0..b).map(|_| rng.random_range(-2.0..2.0)).collect(),
        returns: (0..b).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn gradient_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_actor, mut worst_critic): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let obs_dim = rng.random_range(2..=5);
        let n_act = rng.random_range(2..=5);
        let hidden = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect()
        };
        let (ah, ch) = (hidden(&mut rng), hidden(&mut rng));
        let params = PolicyParameters::new(obs_dim, n_act, &ah, &ch, &mut rng);
        let b = rng.random_range(3..=8);
        let mb = random_minibatch(&params, obs_dim, b, &mut rng);
        let coef = PpoCoefficients {
            clip_range: 0.2,
            ent_coef: rng.random_range(0.0..0.05),
            vf_coef: 0.5,
            normalize_advantage: true,
        };
        let (_, grads) = ppo_loss_and_grad(&params, &mb, &coef).expect("loss");
        let n_actor = params.actor.num_params();
        let analytic: Vec<f64> = grads.tensors().flatten().copied().collect();
        let h = 1e-5;
        for (idx, &g) in analytic.iter().enumerate() {
            let at = |delta: f64| {
                let mut p = params.clone();
                *p.tensors_mut().flatten().nth(idx).unwrap() += delta;
                ppo_loss_and_grad(&p, &mb, &coef).expect("loss").0.loss
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
            if idx < n_actor {
                worst_actor = worst_actor.max(rel);
            } else {
                worst_critic = worst_critic.max(rel);
            }
        }
    }
    verdict(
        worst_actor < 1e-4 && worst_critic < 1e-4,
        format!("max relative error: actor {worst_actor:.2e}, critic {worst_critic:.2e} over 20 configurations"),
    )
}

fn learning_smoke() -> Verdict {
    let inst = three_test_example();
    let (emb, sim) = embed(&inst, 0);
    let mut improved = 0;
    let mut detail = Vec::new();
    for seed in 0..5 {
        let res = train(&inst, &emb, &sim, &TrainConfig { seed, ..TrainConfig::default() }).expect("training");
        let (first, last) = res.return_progress(0.2);
        let (first, last) = (first.unwrap_or(f64::NAN), last.unwrap_or(f64::NAN));
        if last > first {
            improved += 1;
        }
        detail.push(format!("seed {seed}: {first:.3} -> {last:.3}"));
    }
    verdict(improved >= 4, format!("{improved}/5 seeds improved ({})", detail.join(", ")))
}

fn ols_fitter() -> Verdict {
    let samples: Vec<RuntimeSample> = (0..15)
        .map(|i| {
            let tests = 40.0 + 61.0 * i as f64;
            let stmts = 500.0 + 733.0 * ((i * 4) % 15) as f64;
            let edges = 10_000.0 + 17_000.0 * ((i * 11) % 15) as f64 + 90.0 * (i * i) as f64;
            let [x1, x2, x3] = RuntimeRegression::features(tests, stmts, edges);
            RuntimeSample { tests, stmts, edges, runtime_s: -8.77 + 15.59 * x1 + 39.33 * x2 + 53.73 * x3 }
        })
        .collect();
    let fit = fit_runtime_model(&samples).expect("fit");
    let err = [
        (fit.intercept + 8.77).abs(),
        (fit.tests - 15.59).abs(),
        (fit.stmts - 39.33).abs(),
        (fit.edges - 53.73).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let res: Vec<f64> = samples.iter().map(|s| s.runtime_s - fit.predict(s.tests, s.stmts, s.edges)).collect();
    let res_norm = res.iter().map(|r| r * r).sum::<f64>().sqrt();
    let mut orth: f64 = 0.0;
    for j in 0..4 {
        let col: Vec<f64> = samples
            .iter()
            .map(|s| if j == 0 { 1.0 } else { RuntimeRegression::features(s.tests, s.stmts, s.edges)[j - 1] })
            .collect();
        let col_norm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
        let dot: f64 = res.iter().zip(&col).map(|(r, c)| r * c).sum();
        orth = orth.max(dot.abs() / (col_norm * res_norm.max(1.0)));
    }
    verdict(
        err < 1e-6 && (fit.r_squared - 1.0).abs() < 1e-12 && orth < 1e-8,
        format!("max coefficient error {err:.2e}; R^2 = {}; residual/feature cosine {orth:.1e}", fit.r_squared),
    )
}

fn determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_tsmin");
    let dir = tempfile::tempdir().expect("tempdir");
    let inst = dir.path().join("inst.json");
    let gen = Command::new(bin)
        .args(["generate", "--tests", "14", "--stmts", "30", "--faults", "6", "--density", "0.25", "--seed", "12", "-o"])
        .arg(&inst)
        .output()
        .expect("generate");
    if !gen.status.success() {
        return verdict(false, String::from_utf8_lossy(&gen.stderr));
    }
    let run = |out: &Path| {
        Command::new(bin)
            .args(["reduce", "--solver", "rl", "--seed", "3", "--steps", "10000"])
            .arg(&inst)
            .arg("--out-dir")
            .arg(out)
            .env_remove("TSMIN_OUT_DIR")
            .output()
            .expect("reduce")
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ra, rb) = (run(&a), run(&b));
    if !ra.status.success() || !rb.status.success() {
        return verdict(false, format!("reduce failed: {}", String::from_utf8_lossy(&ra.stderr)));
    }
    let fa = std::fs::read(a.join("solution.json")).expect("solution a");
    let fb = std::fs::read(b.join("solution.json")).expect("solution b");
    verdict(fa == fb, format!("solution files {} ({} bytes)", if fa == fb { "identical" } else { "differ" }, fa.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("worked-example fidelity", worked_example),
        ("constraint preservation", constraint_preservation),
        ("near-optimality", near_optimality),
        ("oracle self-consistency", oracle_consistency),
        ("embedding exactness", embedding_exactness),
        ("similarity contract", similarity_contract),
        ("masking soundness", masking_soundness),
        ("reward algebra", reward_algebra),
        ("gradient checks", gradient_checks),
        ("learning smoke", learning_smoke),
        ("OLS fitter", ols_fitter),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id == *f || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "[{}] {id} {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
