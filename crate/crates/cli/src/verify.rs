//! Self-check suites behind `mcsr verify`: each re-derives a property from
//! scratch and compares the production code path against it.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mcsr_core::align::{hungarian_round, sinkhorn, SinkhornConfig};
use mcsr_core::diffengine::tape::Tape;
use mcsr_core::encoder::EncoderConfig;
use mcsr_core::graph::{build_padded_pair, Graph};
use mcsr_core::oracle;
use mcsr_core::encoder::GraphOps;
use mcsr_core::scorers::{grad_check_model, init_model_params, score_pair, ModelConfig, ModelKind};
use mcsr_core::CoreError;

use crate::{CliResult, VerifyArgs};

type Check = (String, bool, String);

fn random_graph(rng: &mut ChaCha8Rng, id: &str, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(id, n, edges).unwrap()
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| {
        (0..6).map(|_| rng.random::<f64>()).sum::<f64>() - 3.0
    })
}

fn tiny_model(kind: ModelKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind);
    cfg.encoder = EncoderConfig {
        layers: 2,
        node_dim: 4,
        msg_dim: 6,
        feature_dim: 1,
    };
    cfg
}

fn suite_gradcheck(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for kind in ModelKind::ALL {
        let cfg = tiny_model(kind);
        let store = init_model_params(&cfg, seed);
        let nq = rng.random_range(3..=5);
        let nc = rng.random_range(3..=5);
        let n = nq.max(nc);
        let q = random_graph(&mut rng, "q", nq, 0.5);
        let c = random_graph(&mut rng, "c", nc, 0.5);
        let q_ops = GraphOps::new(&q, n, 1);
        let c_ops = GraphOps::new(&c, n, 1);
        let err = grad_check_model(&store, &cfg, &q_ops, &c_ops, 1e-5);
        checks.push((
            format!("score_{kind} gradient vs finite differences"),
            err < 1e-4,
            format!("max relative error {err:.3e}"),
        ));
    }
    checks
}

fn suite_gossip(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let trials = 200;
    for t in 0..trials {
        let n = rng.random_range(1..=12);
        let g = random_graph(&mut rng, &format!("g{t}"), n, 0.25);
        let b = g.adjacency_matrix(n);
        if oracle::exact_gossip(&b, n).unwrap() != oracle::largest_cc(&b).unwrap() {
            mismatches += 1;
        }
    }
    let mut power_mismatches = 0;
    for t in 0..30 {
        let n = rng.random_range(1..=8);
        let g = random_graph(&mut rng, &format!("p{t}"), n, 0.3);
        let b = g.adjacency_matrix(n);
        if oracle::gossip_matrix_power(&b, n).unwrap() != oracle::largest_cc(&b).unwrap() {
            power_mismatches += 1;
        }
    }
    vec![
        (
            format!("gossip equals BFS component size on {trials} random matrices"),
            mismatches == 0,
            format!("{mismatches} mismatches"),
        ),
        (
            "integer matrix-power form agrees on 30 small matrices".to_string(),
            power_mismatches == 0,
            format!("{power_mismatches} mismatches"),
        ),
    ]
}

fn suite_oracle(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = 100;
    let mut mces_bad = 0;
    let mut mccs_bad = 0;
    let mut rescore_bad = 0;
    for t in 0..trials {
        let nq = rng.random_range(1..=6);
        let nc = rng.random_range(1..=6);
        let q = random_graph(&mut rng, &format!("q{t}"), nq, 0.5);
        let c = random_graph(&mut rng, &format!("c{t}"), nc, 0.5);
        let pair = mcsr_core::graph::build_minimal_pair(&q, &c);
        let bb_e = oracle::exact_mces(&pair, oracle::DEFAULT_BUDGET);
        let bb_c = oracle::exact_mccs(&pair, oracle::DEFAULT_BUDGET);
        if bb_e.value != oracle::brute_force_mces(&pair).unwrap().value {
            mces_bad += 1;
        }
        if bb_c.value != oracle::brute_force_mccs(&pair).unwrap().value {
            mccs_bad += 1;
        }
        if oracle::rescore_mapping_mces(&pair, &bb_e.mapping) != bb_e.value {
            rescore_bad += 1;
        }
    }
    vec![
        (
            format!("branch-and-bound MCES equals brute force on {trials} pairs"),
            mces_bad == 0,
            format!("{mces_bad} mismatches"),
        ),
        (
            format!("branch-and-bound MCCS equals brute force on {trials} pairs"),
            mccs_bad == 0,
            format!("{mccs_bad} mismatches"),
        ),
        (
            "returned mappings reproduce their values".to_string(),
            rescore_bad == 0,
            format!("{rescore_bad} mismatches"),
        ),
    ]
}

fn suite_sinkhorn(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SinkhornConfig::default();
    let mut row_bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let u = randn(&mut rng, n, n);
        let tape = Tape::new();
        let p = sinkhorn(tape.constant(u), &cfg).value();
        for i in 0..n {
            if (p.row(i).sum() - 1.0).abs() > 1e-3 {
                row_bad += 1;
            }
        }
    }
    // strong diagonal concentration
    let u = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 10.0 } else { 0.0 });
    let tape = Tape::new();
    let p = sinkhorn(tape.constant(u), &cfg).value();
    let min_diag = (0..3).map(|i| p[[i, i]]).fold(f64::INFINITY, f64::min);
    // shift invariance
    let u = randn(&mut rng, 6, 6);
    let tape = Tape::new();
    let base = sinkhorn(tape.constant(u.clone()), &cfg).value();
    let tape = Tape::new();
    let shifted = sinkhorn(tape.constant(u.mapv(|x| x + 2.5)), &cfg).value();
    let shift_dev = base
        .iter()
        .zip(shifted.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    vec![
        (
            "row sums within 1e-3 of one on 100 random score matrices".to_string(),
            row_bad == 0,
            format!("{row_bad} bad rows"),
        ),
        (
            "10*I concentrates the diagonal above 0.95".to_string(),
            min_diag >= 0.95,
            format!("min diagonal {min_diag:.4}"),
        ),
        (
            "adding a constant to the scores leaves the plan unchanged".to_string(),
            shift_dev < 1e-12,
            format!("max deviation {shift_dev:.3e}"),
        ),
    ]
}

fn suite_invariants(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // min rewrite identity, bitwise
    let mut rewrite_bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=6);
        let h = randn(&mut rng, n, d);
        let hc = randn(&mut rng, n, d);
        let tape = Tape::new();
        let hv = tape.constant(h);
        let pv = tape.constant(hc);
        let lhs = hv.sub(hv.emin(pv)).value();
        let rhs = hv.sub(pv).relu().value();
        if lhs
            .iter()
            .zip(rhs.iter())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            rewrite_bad += 1;
        }
    }
    checks.push((
        "H - min(H, P H') = relu(H - P H') holds bitwise on 100 tensors".to_string(),
        rewrite_bad == 0,
        format!("{rewrite_bad} mismatches"),
    ));

    // score invariance under corpus relabeling
    let mut equiv_bad = 0;
    for t in 0..10 {
        let q = random_graph(&mut rng, "q", 6, 0.5);
        let c = random_graph(&mut rng, "c", 6, 0.5);
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let c2 = c.relabel(&perm).unwrap();
        for kind in [ModelKind::Lmces, ModelKind::Lmccs, ModelKind::Xmcs] {
            let cfg = tiny_model(kind);
            let store = init_model_params(&cfg, seed + t);
            let q_ops = GraphOps::new(&q, 6, 1);
            let s1 = score_pair(&store, &cfg, &q_ops, &GraphOps::new(&c, 6, 1));
            let s2 = score_pair(&store, &cfg, &q_ops, &GraphOps::new(&c2, 6, 1));
            if (s1 - s2).abs() / s1.abs().max(1e-9) > 1e-8 {
                equiv_bad += 1;
            }
        }
    }
    checks.push((
        "neural scores invariant under corpus relabeling (30 cases)".to_string(),
        equiv_bad == 0,
        format!("{equiv_bad} violations"),
    ));

    // hungarian optimality vs sampled permutations
    let mut hung_bad = 0;
    for _ in 0..20 {
        let n = rng.random_range(2..=7);
        let p = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
        let best = hungarian_round(&p);
        let best_w: f64 = (0..n).map(|i| p[[i, best[i]]]).sum();
        let mut perm: Vec<usize> = (0..n).collect();
        for _ in 0..200 {
            perm.shuffle(&mut rng);
            let w: f64 = (0..n).map(|i| p[[i, perm[i]]]).sum();
            if w > best_w + 1e-12 {
                hung_bad += 1;
            }
        }
    }
    checks.push((
        "hungarian matching beats 200 sampled permutations (20 matrices)".to_string(),
        hung_bad == 0,
        format!("{hung_bad} better permutations found"),
    ));

    // padding invariants
    let mut pad_bad = 0;
    for t in 0..20 {
        let n0 = rng.random_range(1..=7);
        let g = random_graph(&mut rng, &format!("g{t}"), n0, 0.4);
        let n = g.num_nodes() + 3;
        let pair = build_padded_pair(&g, &g, n).unwrap();
        if pair.a_q().sum() != 2.0 * g.num_edges() as f64 {
            pad_bad += 1;
        }
        let again = build_padded_pair(&pair.query, &pair.corpus, n).unwrap();
        if again.a_q() != pair.a_q() {
            pad_bad += 1;
        }
    }
    checks.push((
        "padded adjacency sums to twice the edge count; padding idempotent".to_string(),
        pad_bad == 0,
        format!("{pad_bad} violations"),
    ));

    checks
}

pub fn run(args: VerifyArgs) -> CliResult {
    let seed = args.seed.unwrap_or(2024);
    let suites: Vec<(&str, fn(u64) -> Vec<Check>)> = vec![
        ("gradcheck", suite_gradcheck),
        ("gossip", suite_gossip),
        ("oracle", suite_oracle),
        ("sinkhorn", suite_sinkhorn),
        ("invariants", suite_invariants),
    ];
    let selected: Vec<&(&str, fn(u64) -> Vec<Check>)> = if args.suite == "all" {
        suites.iter().collect()
    } else {
        let found: Vec<_> = suites.iter().filter(|(n, _)| *n == args.suite).collect();
        if found.is_empty() {
            return Err(CoreError::Config(format!(
                "unknown suite '{}' (expected gradcheck, gossip, oracle, sinkhorn, invariants or all)",
                args.suite
            )));
        }
        found
    };
    let mut passed = 0;
    let mut failed = 0;
    for (name, suite) in selected {
        for (check, ok, detail) in suite(seed) {
            let status = if ok { "PASS" } else { "FAIL" };
            println!("[{status}] {name}: {check} ({detail})");
            if ok {
                passed += 1;
            } else {
                failed += 1;
            }
        }
    }
    println!("verify: {passed} passed, {failed} failed");
    if failed > 0 {
        return Err(CoreError::Validation(format!(
            "{failed} verification checks failed"
        )));
    }
    Ok(())
}
