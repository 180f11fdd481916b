use fhe_tree::analysis::{analyze, STEP_PATH, STEP_SELECT, STEP_TREE_SUM};
use fhe_tree::compiler::{compile, Tlu};
use fhe_tree::engine::{evaluate_batch, evaluate_row, EvalOptions, NoiseModel};
use fhe_tree::quantizer::max_code;
use fhe_tree::synth::{random_ensemble, Shape, SynthConfig};
use fhe_tree::tree_ir::{traverse, NodeKind, Tree, TreeEnsemble};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent recursive evaluator, written against the node list directly.
fn recursive_leaf(tree: &Tree, id: usize, x: &[i64]) -> usize {
    match &tree.nodes[id].kind {
        NodeKind::Leaf { leaf_index } => *leaf_index,
        NodeKind::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            if x[*feature] < *threshold {
                recursive_leaf(tree, *left, x)
            } else {
                recursive_leaf(tree, *right, x)
            }
        }
    }
}

fn grid(n_features: usize, bits: u32) -> Vec<Vec<i64>> {
    let top = max_code(bits);
    let mut out = vec![vec![]];
    for _ in 0..n_features {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..=top).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

const TRACE: EvalOptions = EvalOptions {
    trace: true,
    check_bounds: true,
};

#[test]
fn depth_four_tree_exhaustive_at_three_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let cfg = SynthConfig {
            shape: Shape::DecisionTree,
            bits: 3,
            n_features: 2,
            max_depth: 4,
            n_trees: 1,
            n_classes: Some(2),
        };
        let e = random_ensemble(&cfg, &mut rng);
        let b = compile(&e).unwrap();
        let inputs = grid(2, 3);
        assert_eq!(inputs.len(), 64);
        for x in &inputs {
            let expected = recursive_leaf(&e.trees[0], 0, x);
            assert_eq!(traverse(&e, x).unwrap().leaf_indices[0], expected);
            let r = evaluate_row(&b, x, &NoiseModel::noiseless(), 0, TRACE).unwrap();
            assert_eq!(r.per_tree_sums[0], e.leaf_value(0, expected));
            let s = &r.trace.unwrap().s[0];
            assert_eq!(s.iter().sum::<i64>(), 1);
            assert_eq!(s[expected], 1);
        }
    }
}

fn check_equivalence(e: &TreeEnsemble, inputs: &[Vec<i64>]) {
    let b = compile(e).unwrap();
    for x in inputs {
        let t = traverse(e, x).unwrap();
        let r = evaluate_row(&b, x, &NoiseModel::noiseless(), 0, TRACE).unwrap();
        assert_eq!(r.per_tree_sums, t.leaf_values);
        let tr = r.trace.unwrap();
        for (k, s) in tr.s.iter().enumerate() {
            assert_eq!(s.iter().sum::<i64>(), 1, "tree {k} not one-hot");
            // Step 1 selection property: P[i] is the tested feature's value.
            for (i, &p) in tr.p[k].iter().enumerate() {
                let j = (0..e.n_features).find(|&j| b.a.get(&[k, j, i]) == 1).unwrap();
                assert_eq!(p, x[j]);
            }
        }
        let summed: Vec<i64> = (0..e.n_outputs())
            .map(|c| t.leaf_values.iter().map(|v| v[c]).sum())
            .collect();
        assert_eq!(r.aggregate, summed);
    }
}

#[test]
fn random_ensembles_match_traverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..60 {
        let bits = rng.gen_range(2..=8);
        let n_features = rng.gen_range(1..=4);
        let cfg = SynthConfig::random(&mut rng, bits, 6, 12, n_features);
        let e = random_ensemble(&cfg, &mut rng);
        let inputs: Vec<Vec<i64>> = if bits <= 4 && n_features <= 2 {
            grid(n_features, bits)
        } else {
            (0..300)
                .map(|_| (0..n_features).map(|_| rng.gen_range(0..=max_code(bits))).collect())
                .collect()
        };
        check_equivalence(&e, &inputs);
    }
}

#[test]
fn aggregate_is_sum_of_single_tree_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SynthConfig {
        shape: Shape::RandomForest,
        bits: 5,
        n_features: 3,
        max_depth: 5,
        n_trees: 7,
        n_classes: Some(3),
    };
    let e = random_ensemble(&cfg, &mut rng);
    let b = compile(&e).unwrap();
    let singles: Vec<_> = (0..e.trees.len())
        .map(|k| {
            let mut one = e.clone();
            one.trees = vec![e.trees[k].clone()];
            let width = e.trees[k].n_leaves() * e.n_outputs();
            one.leaf_values = vec![e.leaf_values[k][..width].to_vec()];
            compile(&one).unwrap()
        })
        .collect();
    for _ in 0..200 {
        let x: Vec<i64> = (0..3).map(|_| rng.gen_range(0..32)).collect();
        let whole = evaluate_row(&b, &x, &NoiseModel::noiseless(), 0, EvalOptions::default()).unwrap();
        let mut acc = vec![0; 3];
        for s in &singles {
            let r = evaluate_row(s, &x, &NoiseModel::noiseless(), 0, EvalOptions::default()).unwrap();
            for (a, v) in acc.iter_mut().zip(&r.aggregate) {
                *a += v;
            }
        }
        assert_eq!(whole.aggregate, acc);
    }
}

#[test]
fn noisy_batches_are_order_and_thread_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = SynthConfig {
        shape: Shape::Boosted,
        bits: 4,
        n_features: 3,
        max_depth: 3,
        n_trees: 10,
        n_classes: Some(2),
    };
    let e = random_ensemble(&cfg, &mut rng);
    let b = compile(&e).unwrap();
    let xs: Vec<Vec<i64>> = (0..64)
        .map(|_| (0..3).map(|_| rng.gen_range(0..16)).collect())
        .collect();
    let noise = NoiseModel::new(0.2, 77).unwrap();
    let base = evaluate_batch(&b, &xs, &noise).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    assert_eq!(single.install(|| evaluate_batch(&b, &xs, &noise).unwrap()), base);

    // Permute rows but keep each row's noise key: results permute with them.
    let perm: Vec<usize> = (0..xs.len()).rev().collect();
    for &i in &perm {
        let r = evaluate_row(&b, &xs[i], &noise, i as u64, EvalOptions::default()).unwrap();
        assert_eq!(r, base[i]);
    }
}

#[test]
fn tlu_failures_follow_p_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = SynthConfig {
        shape: Shape::RandomForest,
        bits: 6,
        n_features: 4,
        max_depth: 5,
        n_trees: 10,
        n_classes: Some(2),
    };
    let e = random_ensemble(&cfg, &mut rng);
    let b = compile(&e).unwrap();
    let xs: Vec<Vec<i64>> = (0..600)
        .map(|_| (0..4).map(|_| rng.gen_range(0..64)).collect())
        .collect();
    let p = 0.05;
    let res = evaluate_batch(&b, &xs, &NoiseModel::new(p, 3).unwrap()).unwrap();
    let n: u64 = res.iter().map(|r| r.tlu_applications).sum();
    let f: u64 = res.iter().map(|r| r.tlu_failures).sum();
    assert!(n >= 100_000, "only {n} applications");
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((f as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{f} failures of {n}");
    // Under noise S is no longer guaranteed one-hot, but rows still sum to small counts.
    assert!(res.iter().all(|r| r.tlu_applications == b.pbs_count() as u64));
}

#[test]
fn analysis_bounds_contain_observed_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut evaluations = 0;
    while evaluations < 20_000 {
        let bits = rng.gen_range(2..=8);
        let cfg = SynthConfig::random(&mut rng, bits, 6, 8, 3);
        let e = random_ensemble(&cfg, &mut rng);
        let b = compile(&e).unwrap();
        let rep = analyze(&b, bits).unwrap();
        let top = max_code(bits);
        for _ in 0..200 {
            let x: Vec<i64> = (0..3).map(|_| rng.gen_range(0..=top)).collect();
            let r = evaluate_row(&b, &x, &NoiseModel::noiseless(), 0, TRACE).unwrap();
            let tr = r.trace.unwrap();
            for k in 0..e.trees.len() {
                if b.is_constant_tree(k) {
                    continue;
                }
                assert!(tr.p[k].iter().all(|&v| rep.per_step_widths[STEP_SELECT].contains(v)));
                assert!(tr.r[k].iter().all(|&v| rep.per_step_widths[STEP_PATH].contains(v)));
                assert!(tr.t_k[k].iter().all(|&v| rep.per_step_widths[STEP_TREE_SUM].contains(v)));
                // every R fits its equality table
                for (l, &v) in tr.r[k].iter().enumerate() {
                    let t = b.equality_tlu(k, l);
                    assert!((0..t.len() as i64).contains(&(v + t.input_offset())));
                }
            }
            evaluations += 1;
        }
    }
}

#[test]
fn sign_bit_and_full_input_width_are_both_used() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SynthConfig {
        shape: Shape::DecisionTree,
        bits: 5,
        n_features: 2,
        max_depth: 4,
        n_trees: 1,
        n_classes: None,
    };
    let e = random_ensemble(&cfg, &mut rng);
    let b = compile(&e).unwrap();
    let rep = analyze(&b, 5).unwrap();
    assert_eq!(rep.global_max_bits, 6);
    let mut saw_negative = false;
    let mut saw_wide = false;
    for x in grid(2, 5) {
        let tr = evaluate_row(&b, &x, &NoiseModel::noiseless(), 0, TRACE).unwrap().trace.unwrap();
        saw_negative |= tr.r[0].iter().any(|&v| v < 0);
        saw_wide |= tr.p[0].iter().any(|&v| v >= 16);
    }
    assert!(saw_negative && saw_wide);
}
