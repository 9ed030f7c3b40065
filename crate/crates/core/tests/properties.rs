use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpt_core::netmodel::{Activation, DenseLayer};
use rpt_core::salience::{cumulative_score, Family, Op};
use rpt_core::tree::max_half_branch;
use rpt_core::{
    build_tree, gradient_salience, load_network, rank_inputs, salience_map, Aggregator,
    BuildOptions, Network, NodeRef, RankingSpec, TreePath,
};

const ACTIVATIONS: [Activation; 4] = [
    Activation::Identity,
    Activation::Sigmoid,
    Activation::Relu,
    Activation::Elu,
];

/// Random network with the given sizes (output first); activation per layer
/// drawn from `acts`.
fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], acts: &[Activation]) -> Network {
    let layers = sizes
        .windows(2)
        .map(|w| {
            let weights = (0..w[0])
                .map(|_| (0..w[1]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let bias = (0..w[0]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let act = acts[rng.gen_range(0..acts.len())];
            DenseLayer::new(weights, bias, act).unwrap()
        })
        .collect();
    Network::from_layers(layers).unwrap()
}

fn random_sizes(rng: &mut ChaCha8Rng, depth: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut sizes = vec![1];
    sizes.extend((0..depth).map(|_| rng.gen_range(lo..=hi)));
    sizes
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

#[test]
fn identity_network_is_the_chained_affine_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let depth = rng.gen_range(1..=4);
        let sizes = random_sizes(&mut rng, depth, 1, 8);
        let net = random_net(&mut rng, &sizes, &[Activation::Identity]);
        let x: Vec<f64> = (0..net.input_size())
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        // Oracle: explicit matrix-vector products, input to output.
        let mut a = x.clone();
        for l in (0..depth).rev() {
            let layer = net.layer(l);
            a = (0..layer.out_size())
                .map(|r| {
                    let mut acc = layer.bias()[r];
                    for (w, v) in layer.row(r).iter().zip(&a) {
                        acc += w * v;
                    }
                    acc
                })
                .collect();
        }
        let out = net.forward(&x).unwrap();
        assert!((out[0][0] - a[0]).abs() < 1e-10);
    }
}

#[test]
fn identity_network_gradient_is_the_weight_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let depth = rng.gen_range(1..=4);
        let sizes = random_sizes(&mut rng, depth, 1, 8);
        let net = random_net(&mut rng, &sizes, &[Activation::Identity]);
        // Row vector times W_{0,1} W_{1,2} ... W_{L-1,L}.
        let mut row = vec![1.0];
        for l in 0..depth {
            let layer = net.layer(l);
            row = (0..layer.in_size())
                .map(|c| {
                    (0..layer.out_size())
                        .map(|r| row[r] * layer.row(r)[c])
                        .sum()
                })
                .collect();
        }
        for _ in 0..3 {
            let x: Vec<f64> = (0..net.input_size())
                .map(|_| rng.gen_range(-5.0..5.0))
                .collect();
            let g = net.gradient(NodeRef::output(), depth, &x).unwrap();
            for (a, b) in g.iter().zip(&row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for _ in 0..30 {
        let depth = rng.gen_range(1..=3);
        let sizes = random_sizes(&mut rng, depth, 1, 6);
        let net = random_net(&mut rng, &sizes, &[Activation::Sigmoid, Activation::Elu]);
        let x: Vec<f64> = (0..net.input_size())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let g = net.gradient(NodeRef::output(), depth, &x).unwrap();
        for j in 0..x.len() {
            let mut up = x.clone();
            let mut down = x.clone();
            up[j] += h;
            down[j] -= h;
            let fd =
                (net.forward(&up).unwrap()[0][0] - net.forward(&down).unwrap()[0][0]) / (2.0 * h);
            let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "{} vs {}", g[j], fd);
        }
    }
}

#[test]
fn forward_is_bit_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = random_sizes(&mut rng, 3, 2, 8);
    let net = random_net(&mut rng, &sizes, &ACTIVATIONS);
    let x: Vec<f64> = (0..net.input_size())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let a = net.forward(&x).unwrap();
    let b = net.clone().forward(&x).unwrap();
    for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
        assert_eq!(u.to_bits(), v.to_bits());
    }
}

#[test]
fn tree_laws_hold_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..40 {
        let depth = rng.gen_range(1..=3);
        let sizes = random_sizes(&mut rng, depth, 3, 8);
        let net = random_net(&mut rng, &sizes, &ACTIVATIONS);
        let spec = if trial % 2 == 0 {
            RankingSpec::weights()
        } else {
            RankingSpec::random(trial)
        };
        for b in 1..=max_half_branch(&sizes) {
            let tree = build_tree(&net, &spec, b, BuildOptions::default()).unwrap();
            let width = 2 * b;
            let expected: usize = (0..=depth).map(|d| width.pow(d as u32)).sum();
            assert_eq!(tree.node_count(), expected);
            for (path, node) in tree.nodes() {
                assert_eq!(node.layer, path.len());
                if path.len() < depth {
                    let kids: BTreeSet<usize> = (1..=b as i64)
                        .flat_map(|k| [k, -k])
                        .map(|k| tree.phi(&path.child(k)).unwrap().index)
                        .collect();
                    assert_eq!(kids.len(), width, "siblings under {path} collide");
                }
            }
            let leaves = width.pow(depth as u32);
            for g in tree.extract_groups() {
                let bound = width.pow((depth - g.layer) as u32);
                let distinct: BTreeSet<usize> = tree
                    .leaves()
                    .iter()
                    .filter(|t| t.indices().starts_with(g.path.indices()))
                    .map(|t| tree.phi(t).unwrap().index)
                    .collect();
                let total = g.s_plus.len() + g.s_minus.len();
                assert!(total <= bound);
                let union: BTreeSet<usize> = g.s_plus.union(&g.s_minus).copied().collect();
                assert_eq!(union, distinct);
                let all_distinct = distinct.len() == bound;
                if all_distinct {
                    assert_eq!(total, bound);
                }
            }
            let count = salience_map(&tree, Aggregator::Count);
            assert_eq!(count.scores.iter().sum::<f64>(), leaves as f64);
        }
    }
}

#[test]
fn leaf_scores_are_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sizes = vec![1, 7, 9, 8];
    let net = random_net(&mut rng, &sizes, &ACTIVATIONS);
    let tree = build_tree(&net, &RankingSpec::weights(), 3, BuildOptions::default()).unwrap();
    for leaf in tree.leaves() {
        let c = cumulative_score(&leaf, 3).unwrap();
        assert!(c.abs() >= 3 && c.abs() <= 9);
        assert_eq!(c.signum(), leaf.sign());
    }
    let max = salience_map(&tree, Aggregator::Fold(Family::Absolute, Op::Max));
    let avg = salience_map(&tree, Aggregator::Fold(Family::Absolute, Op::Average));
    let min = salience_map(&tree, Aggregator::Fold(Family::Absolute, Op::Min));
    for n in 1..=8 {
        if max.is_covered(n) {
            assert!(max.score(n) >= avg.score(n) && avg.score(n) >= min.score(n));
        } else {
            assert_eq!((max.score(n), avg.score(n), min.score(n)), (0.0, 0.0, 0.0));
        }
    }
}

#[test]
fn trees_are_deterministic() {
    let net = load_network(fixture("toy.json")).unwrap();
    for spec in [RankingSpec::weights(), RankingSpec::random(11)] {
        let a = build_tree(&net, &spec, 1, BuildOptions::default()).unwrap();
        let b = build_tree(&net, &spec, 1, BuildOptions::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        for agg in Aggregator::ALL {
            assert_eq!(salience_map(&a, agg), salience_map(&b, agg));
        }
    }
}

#[test]
fn toy_fixture_reproduces_hand_values() {
    let net = load_network(fixture("toy.json")).unwrap();
    assert_eq!(net.layer_sizes(), vec![1, 4, 5]);
    let tree = build_tree(&net, &RankingSpec::weights(), 1, BuildOptions::default()).unwrap();
    assert_eq!(tree.phi(&TreePath(vec![1])), Some(NodeRef::new(1, 3)));
    assert_eq!(tree.phi(&TreePath(vec![-1])), Some(NodeRef::new(1, 2)));
    let signed = salience_map(&tree, "signed-sum".parse().unwrap());
    assert_eq!(signed.scores, vec![0.0, -2.0, 4.0, 0.0, -2.0]);
}

#[test]
fn planted_input_dominates_linear_fixture() {
    let net = load_network(fixture("planted.json")).unwrap();
    let planted = 4;
    let tree = build_tree(&net, &RankingSpec::weights(), 1, BuildOptions::default()).unwrap();

    // With B = 1 every leaf has |c_t| = L, so all covered inputs share the top
    // absolute-average value; the planted input must be among them.
    let avg = salience_map(&tree, Aggregator::Fold(Family::Absolute, Op::Average));
    let top = avg.scores.iter().copied().fold(f64::MIN, f64::max);
    assert!(avg.is_covered(planted));
    assert_eq!(avg.score(planted), top);

    // It is the only input reached through more than one leaf.
    let count = salience_map(&tree, Aggregator::Count);
    let ranked = rank_inputs(&count, 2).unwrap();
    assert_eq!(ranked[0], (planted, 2.0));
    assert!(ranked[1].1 < 2.0);

    let grad = gradient_salience(&net, &[vec![0.0; 6]]).unwrap();
    assert_eq!(rank_inputs(&grad, 1).unwrap()[0].0, planted);
}
