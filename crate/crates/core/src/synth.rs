//! Random quantized ensembles for fuzzing the compiler and engine.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::quantizer::{max_code, QuantParams};
use crate::tree_ir::{NodeKind, Task, Tree, TreeEnsemble, TreeNode, IR_VERSION};

/// Structural family the generator imitates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    /// One deep tree.
    DecisionTree,
    /// Many deep, irregular trees.
    RandomForest,
    /// Many shallow, nearly complete trees.
    Boosted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub shape: Shape,
    pub bits: u32,
    pub n_features: usize,
    pub max_depth: usize,
    pub n_trees: usize,
    /// Classes for classification; `None` for a single-output regression model.
    pub n_classes: Option<usize>,
}

impl SynthConfig {
    /// Draw a configuration within the given limits.
    pub fn random<R: Rng>(rng: &mut R, bits: u32, max_depth: usize, max_trees: usize, n_features: usize) -> Self {
        let shape = *[Shape::DecisionTree, Shape::RandomForest, Shape::Boosted]
            .choose(rng)
            .expect("non-empty");
        let n_trees = match shape {
            Shape::DecisionTree => 1,
            _ => rng.gen_range(1..=max_trees),
        };
        let max_depth = match shape {
            Shape::Boosted => rng.gen_range(1..=max_depth.min(3)),
            _ => rng.gen_range(1..=max_depth),
        };
        let n_classes = match rng.gen_range(0..3) {
            0 => None,
            1 => Some(2),
            _ => Some(rng.gen_range(3..=4)),
        };
        Self {
            shape,
            bits,
            n_features,
            max_depth,
            n_trees,
            n_classes,
        }
    }
}

pub fn random_ensemble<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> TreeEnsemble {
    let split_prob = match cfg.shape {
        Shape::DecisionTree => 0.85,
        Shape::RandomForest => 0.75,
        Shape::Boosted => 0.95,
    };
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .map(|_| random_tree(rng, cfg, split_prob))
        .collect();
    let (task, n_classes, n_outputs) = match cfg.n_classes {
        Some(c) => (Task::Classification, c, c),
        None => (Task::Regression, 0, 1),
    };
    let m = trees.iter().map(Tree::n_leaves).max().unwrap_or(1);
    let top = max_code(cfg.bits);
    let leaf_values = trees
        .iter()
        .map(|t| {
            let mut row: Vec<i64> = (0..t.n_leaves() * n_outputs)
                .map(|_| rng.gen_range(0..=top))
                .collect();
            row.resize(m * n_outputs, 0);
            row
        })
        .collect();
    let feature_quants = (0..cfg.n_features)
        .map(|_| QuantParams::from_range(rng.gen_range(-5.0..0.0), rng.gen_range(0.5..5.0), cfg.bits))
        .collect();
    TreeEnsemble {
        version: IR_VERSION,
        task,
        n_features: cfg.n_features,
        input_bits: cfg.bits,
        n_classes,
        feature_quants,
        leaf_quant: QuantParams::from_range(-1.0, 1.0, cfg.bits),
        trees,
        leaf_values,
    }
}

fn random_tree<R: Rng>(rng: &mut R, cfg: &SynthConfig, split_prob: f64) -> Tree {
    let top = max_code(cfg.bits);
    let mut nodes = vec![TreeNode::leaf(0, 0)];
    let mut queue = std::collections::VecDeque::from([(0usize, 0usize)]);
    while let Some((id, depth)) = queue.pop_front() {
        // The root always splits so every tree exercises the look-up path.
        let split = depth < cfg.max_depth && (depth == 0 || rng.gen_bool(split_prob));
        if split {
            let left = nodes.len();
            nodes.push(TreeNode::leaf(left, 0));
            nodes.push(TreeNode::leaf(left + 1, 0));
            nodes[id] = TreeNode::internal(
                id,
                rng.gen_range(0..cfg.n_features),
                rng.gen_range(0..=top),
                left,
                left + 1,
            );
            queue.push_back((left, depth + 1));
            queue.push_back((left + 1, depth + 1));
        }
    }
    // Leaf slots in a random order so they do not mirror node order.
    let leaf_ids: Vec<usize> = nodes
        .iter()
        .filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
        .map(|n| n.id)
        .collect();
    let mut slots: Vec<usize> = (0..leaf_ids.len()).collect();
    slots.shuffle(rng);
    for (id, slot) in leaf_ids.into_iter().zip(slots) {
        nodes[id] = TreeNode::leaf(id, slot);
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_ensembles_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let bits = rng.gen_range(1..=8);
            let cfg = SynthConfig::random(&mut rng, bits, 6, 20, 3);
            let e = random_ensemble(&cfg, &mut rng);
            assert!(e.validate().is_empty(), "{:?}", e.validate());
            assert!(e.max_depth() <= cfg.max_depth);
            assert_eq!(e.trees.len(), cfg.n_trees);
        }
    }
}
