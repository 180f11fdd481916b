//! Tree learners that run directly on quantized integer features.
//!
//! One CART implementation backs every model kind. It is also used on raw
//! floats to build the full-precision reference models the sweeps compare
//! against, so the only difference between the two is the input encoding.
//!
//! Splits are searched as `x <= t` with `t` the midpoint between two
//! consecutive distinct values in the node, then rewritten to the canonical
//! `x < t'` integer form when exported to the IR.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quantizer::{quantize_leaves, max_code, Labels, QuantParams, QuantizedDataset};
use crate::rng::mix64;
use crate::tree_ir::{Task, Tree, TreeEnsemble, TreeNode, IR_VERSION};

/// Shrinkage applied to every boosting stage.
pub const BOOST_LEARNING_RATE: f64 = 0.3;
/// Boosted classification leaf contributions are clamped to this magnitude
/// (logit units) before leaf quantization.
pub const BOOST_LEAF_LIMIT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "dt")]
    DecisionTree,
    #[serde(rename = "rf")]
    RandomForest,
    #[serde(rename = "xgb-like")]
    BoostedEnsemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub seed: u64,
    pub min_samples_split: usize,
}

impl TrainConfig {
    pub fn new(model_kind: ModelKind, max_depth: usize, n_estimators: usize, seed: u64) -> Self {
        Self {
            model_kind,
            max_depth,
            n_estimators,
            seed,
            min_samples_split: 2,
        }
    }

    fn check(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(invalid("max_depth must be at least 1"));
        }
        if self.n_estimators == 0 {
            return Err(invalid("n_estimators must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitNode {
    /// Left iff `x[feature] <= threshold`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: Vec<f64> },
}

/// A tree as produced by the learner, before threshold and leaf quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTree {
    pub nodes: Vec<FitNode>,
}

impl FitTree {
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                FitNode::Leaf { value } => return value,
                FitNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &FitTree, id: usize) -> usize {
            match &t.nodes[id] {
                FitNode::Leaf { .. } => 0,
                FitNode::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    fn map_leaves(&mut self, f: impl Fn(&[f64]) -> Vec<f64>) {
        for node in &mut self.nodes {
            if let FitNode::Leaf { value } = node {
                *value = f(value);
            }
        }
    }
}

/// Un-quantized ensemble; predictions are the sum of the trees' leaf vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub task: Task,
    pub n_classes: usize,
    pub trees: Vec<FitTree>,
}

impl Forest {
    pub fn n_outputs(&self) -> usize {
        match self.task {
            Task::Classification => self.n_classes,
            Task::Regression => 1,
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_outputs()];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.predict(x)) {
                *a += v;
            }
        }
        acc
    }

    /// Argmax with lowest-index tie-break.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

/// Canonical strict-less-than integer threshold for a `x <= t` split learned
/// on integer features: `x <= t  <=>  x < floor(t) + 1` for every integer `x`.
pub fn quantize_thresholds(raw: &[f64]) -> Vec<i64> {
    raw.iter().map(|t| t.floor() as i64 + 1).collect()
}

/// Train on quantized data and export the quantized IR.
pub fn train(data: &QuantizedDataset, cfg: &TrainConfig) -> Result<TreeEnsemble> {
    let x: Vec<Vec<f64>> = data
        .values
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let forest = fit(&x, &data.labels, cfg)?;
    to_ensemble(&forest, &data.per_feature_params, data.bits())
}

/// Train the full-precision reference model on raw features.
pub fn train_float(x: &[Vec<f64>], labels: &Labels, cfg: &TrainConfig) -> Result<Forest> {
    fit(x, labels, cfg)
}

/// Convert a forest learned on integer features into the quantized IR.
pub fn to_ensemble(forest: &Forest, feature_quants: &[QuantParams], bits: u32) -> Result<TreeEnsemble> {
    let n_outputs = forest.n_outputs();
    let top = max_code(bits);
    let mut trees = Vec::with_capacity(forest.trees.len());
    let mut raw_leaves: Vec<Vec<Vec<f64>>> = Vec::with_capacity(forest.trees.len());
    for ft in &forest.trees {
        let thresholds: Vec<f64> = ft
            .nodes
            .iter()
            .filter_map(|n| match n {
                FitNode::Split { threshold, .. } => Some(*threshold),
                FitNode::Leaf { .. } => None,
            })
            .collect();
        let mut canon = quantize_thresholds(&thresholds).into_iter();
        let mut leaves = Vec::new();
        let nodes = ft
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| match n {
                FitNode::Split {
                    feature,
                    left,
                    right,
                    ..
                } => {
                    let t = canon.next().expect("one threshold per split");
                    TreeNode::internal(id, *feature, t.clamp(0, top), *left, *right)
                }
                FitNode::Leaf { value } => {
                    leaves.push(value.clone());
                    TreeNode::leaf(id, leaves.len() - 1)
                }
            })
            .collect();
        trees.push(Tree { nodes });
        raw_leaves.push(leaves);
    }
    let m = raw_leaves.iter().map(Vec::len).max().unwrap_or(0);
    let flat: Vec<Vec<f64>> = raw_leaves.iter().map(|l| l.concat()).collect();
    let (codes, leaf_quant) = quantize_leaves(&flat, bits)?;
    let leaf_values = codes
        .into_iter()
        .map(|mut row| {
            row.resize(m * n_outputs, 0);
            row
        })
        .collect();
    let ens = TreeEnsemble {
        version: IR_VERSION,
        task: forest.task,
        n_features: feature_quants.len(),
        input_bits: bits,
        n_classes: forest.n_classes,
        feature_quants: feature_quants.to_vec(),
        leaf_quant,
        trees,
        leaf_values,
    };
    let violations = ens.validate();
    if !violations.is_empty() {
        return Err(crate::Error::Compile(violations));
    }
    Ok(ens)
}

fn fit(x: &[Vec<f64>], labels: &Labels, cfg: &TrainConfig) -> Result<Forest> {
    cfg.check()?;
    if x.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    if labels.len() != x.len() {
        return Err(invalid(format!("{} labels for {} rows", labels.len(), x.len())));
    }
    let n_features = x[0].len();
    if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
        return Err(invalid("rows must share a non-zero feature count"));
    }
    let cols: Vec<Vec<f64>> = (0..n_features)
        .map(|j| x.iter().map(|r| r[j]).collect())
        .collect();
    let (task, n_classes) = match labels {
        Labels::Classes(c) => (Task::Classification, c.iter().max().map_or(2, |&m| (m + 1).max(2))),
        Labels::Targets(t) => {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite regression target"));
            }
            (Task::Regression, 0)
        }
    };
    let data = Data { cols: &cols, n_rows: x.len() };
    let all: Vec<usize> = (0..x.len()).collect();
    let base = Grower {
        max_depth: cfg.max_depth,
        min_samples_split: cfg.min_samples_split.max(2),
        max_features: None,
    };
    let trees = match cfg.model_kind {
        ModelKind::DecisionTree => {
            vec![base.grow(&data, &target_of(labels, n_classes), all, None)]
        }
        ModelKind::RandomForest => {
            let grower = Grower {
                max_features: Some((n_features as f64).sqrt().ceil() as usize),
                ..base
            };
            let target = target_of(labels, n_classes);
            let n_trees = cfg.n_estimators;
            let mut trees: Vec<FitTree> = (0..n_trees)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, k as u64));
                    let sample: Vec<usize> = (0..data.n_rows)
                        .map(|_| rand::Rng::gen_range(&mut rng, 0..data.n_rows))
                        .collect();
                    grower.grow(&data, &target, sample, Some(&mut rng))
                })
                .collect();
            // Each tree votes with its leaf class distribution; scale is irrelevant to argmax
            // but keeps leaf values in [0, 1 / N] comparable with a single tree's average.
            let inv = 1.0 / n_trees as f64;
            for t in &mut trees {
                t.map_leaves(|v| v.iter().map(|p| p * inv).collect());
            }
            trees
        }
        ModelKind::BoostedEnsemble => boost(&data, labels, n_classes, &base, cfg.n_estimators),
    };
    Ok(Forest {
        task,
        n_classes,
        trees,
    })
}

fn target_of(labels: &Labels, n_classes: usize) -> Target<'_> {
    match labels {
        Labels::Classes(c) => Target::Classes { y: c, n_classes },
        Labels::Targets(t) => Target::Values(t),
    }
}

fn boost(data: &Data<'_>, labels: &Labels, n_classes: usize, grower: &Grower, rounds: usize) -> Vec<FitTree> {
    let n = data.n_rows;
    let all: Vec<usize> = (0..n).collect();
    let lr = BOOST_LEARNING_RATE;
    let clamp = |v: f64| (lr * v).clamp(-BOOST_LEAF_LIMIT, BOOST_LEAF_LIMIT);
    let mut trees = Vec::new();
    match labels {
        Labels::Targets(y) => {
            let base = y.iter().sum::<f64>() / n as f64;
            let mut f = vec![base; n];
            for round in 0..rounds {
                let r: Vec<f64> = y.iter().zip(&f).map(|(y, f)| y - f).collect();
                let mut t = grower.grow(data, &Target::Values(&r), all.clone(), None);
                let offset = if round == 0 { base } else { 0.0 };
                t.map_leaves(|v| vec![lr * v[0] + offset]);
                for (i, fi) in f.iter_mut().enumerate() {
                    *fi += t.predict(&row(data, i))[0] - offset;
                }
                trees.push(t);
            }
        }
        Labels::Classes(y) if n_classes == 2 => {
            // One logistic margin F carried as the class pair [-F/2, F/2].
            let pos = y.iter().filter(|&&c| c == 1).count() as f64;
            let prior = ((pos + 0.5) / (n as f64 - pos + 0.5)).ln();
            let mut f = vec![prior; n];
            for round in 0..rounds {
                let r: Vec<f64> = y
                    .iter()
                    .zip(&f)
                    .map(|(&c, &fi)| c as f64 - sigmoid(fi))
                    .collect();
                let mut t = grower.grow(data, &Target::Values(&r), all.clone(), None);
                let offset = if round == 0 { prior } else { 0.0 };
                t.map_leaves(|v| {
                    let m = clamp(v[0]) + offset;
                    vec![-m / 2.0, m / 2.0]
                });
                for (i, fi) in f.iter_mut().enumerate() {
                    let out = t.predict(&row(data, i));
                    *fi += out[1] - out[0] - offset;
                }
                trees.push(t);
            }
        }
        Labels::Classes(y) => {
            // Softmax boosting: one tree per class per round.
            let k = n_classes;
            let priors: Vec<f64> = (0..k)
                .map(|c| ((y.iter().filter(|&&v| v == c).count() as f64 + 0.5) / n as f64).ln())
                .collect();
            let mut f: Vec<Vec<f64>> = vec![priors.clone(); n];
            for round in 0..rounds {
                let probs: Vec<Vec<f64>> = f.iter().map(|fi| softmax(fi)).collect();
                let stage: Vec<FitTree> = (0..k)
                    .map(|c| {
                        let r: Vec<f64> = (0..n)
                            .map(|i| (y[i] == c) as u8 as f64 - probs[i][c])
                            .collect();
                        let mut t = grower.grow(data, &Target::Values(&r), all.clone(), None);
                        let offset = if round == 0 { priors[c] } else { 0.0 };
                        t.map_leaves(|v| {
                            let mut out = vec![0.0; k];
                            out[c] = clamp(v[0]) + offset;
                            out
                        });
                        t
                    })
                    .collect();
                for (i, fi) in f.iter_mut().enumerate() {
                    let x = row(data, i);
                    for (c, t) in stage.iter().enumerate() {
                        let offset = if round == 0 { priors[c] } else { 0.0 };
                        fi[c] += t.predict(&x)[c] - offset;
                    }
                }
                trees.extend(stage);
            }
        }
    }
    trees
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn row(data: &Data<'_>, i: usize) -> Vec<f64> {
    data.cols.iter().map(|c| c[i]).collect()
}

struct Data<'a> {
    cols: &'a [Vec<f64>],
    n_rows: usize,
}

enum Target<'a> {
    Classes { y: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

impl Target<'_> {
    fn leaf_value(&self, samples: &[usize]) -> Vec<f64> {
        let n = samples.len() as f64;
        match self {
            Target::Classes { y, n_classes } => {
                let mut counts = vec![0.0; *n_classes];
                for &i in samples {
                    counts[y[i]] += 1.0;
                }
                counts.iter().map(|c| c / n).collect()
            }
            Target::Values(v) => vec![samples.iter().map(|&i| v[i]).sum::<f64>() / n],
        }
    }

    fn is_pure(&self, samples: &[usize]) -> bool {
        match self {
            Target::Classes { y, .. } => samples.iter().all(|&i| y[i] == y[samples[0]]),
            Target::Values(v) => samples.iter().all(|&i| v[i] == v[samples[0]]),
        }
    }
}

/// Running sufficient statistics for one side of a candidate split.
/// `score` is the quantity whose sum over children is maximized:
/// `sum_k count_k^2 / n` (Gini) or `sum^2 / n` (squared error).
#[derive(Clone)]
enum Stats {
    Gini { counts: Vec<f64>, sq: f64, n: f64 },
    Sse { sum: f64, n: f64 },
}

impl Stats {
    fn empty(target: &Target<'_>) -> Self {
        match target {
            Target::Classes { n_classes, .. } => Stats::Gini {
                counts: vec![0.0; *n_classes],
                sq: 0.0,
                n: 0.0,
            },
            Target::Values(_) => Stats::Sse { sum: 0.0, n: 0.0 },
        }
    }

    fn add(&mut self, target: &Target<'_>, i: usize, sign: f64) {
        match (self, target) {
            (Stats::Gini { counts, sq, n }, Target::Classes { y, .. }) => {
                let c = &mut counts[y[i]];
                *sq -= *c * *c;
                *c += sign;
                *sq += *c * *c;
                *n += sign;
            }
            (Stats::Sse { sum, n }, Target::Values(v)) => {
                *sum += sign * v[i];
                *n += sign;
            }
            _ => unreachable!("stats kind follows target kind"),
        }
    }

    fn score(&self) -> f64 {
        match self {
            Stats::Gini { sq, n, .. } => sq / n,
            Stats::Sse { sum, n } => sum * sum / n,
        }
    }
}

#[derive(Clone, Copy)]
struct Grower {
    max_depth: usize,
    min_samples_split: usize,
    max_features: Option<usize>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower {
    fn grow(&self, data: &Data<'_>, target: &Target<'_>, samples: Vec<usize>, mut rng: Option<&mut ChaCha8Rng>) -> FitTree {
        let mut nodes = Vec::new();
        // Breadth-first so node ids are level-ordered.
        let mut queue = std::collections::VecDeque::new();
        nodes.push(FitNode::Leaf { value: Vec::new() });
        queue.push_back((0usize, samples, 0usize));
        while let Some((id, samples, depth)) = queue.pop_front() {
            let split = if depth < self.max_depth
                && samples.len() >= self.min_samples_split
                && !target.is_pure(&samples)
            {
                self.best_split(data, target, &samples, rng.as_deref_mut())
            } else {
                None
            };
            match split {
                Some(s) => {
                    let col = &data.cols[s.feature];
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        samples.iter().partition(|&&i| col[i] <= s.threshold);
                    let left = nodes.len();
                    nodes.push(FitNode::Leaf { value: Vec::new() });
                    nodes.push(FitNode::Leaf { value: Vec::new() });
                    nodes[id] = FitNode::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left,
                        right: left + 1,
                    };
                    queue.push_back((left, l, depth + 1));
                    queue.push_back((left + 1, r, depth + 1));
                }
                None => {
                    nodes[id] = FitNode::Leaf {
                        value: target.leaf_value(&samples),
                    };
                }
            }
        }
        FitTree { nodes }
    }

    fn best_split(&self, data: &Data<'_>, target: &Target<'_>, samples: &[usize], rng: Option<&mut ChaCha8Rng>) -> Option<Split> {
        let n_features = data.cols.len();
        let mut parent = Stats::empty(target);
        for &i in samples {
            parent.add(target, i, 1.0);
        }
        let parent_score = parent.score();

        let mut order: Vec<usize> = (0..n_features).collect();
        let quota = match (self.max_features, rng) {
            (Some(k), Some(rng)) => {
                order.shuffle(rng);
                k.min(n_features)
            }
            _ => n_features,
        };
        let mut best: Option<Split> = None;
        let mut visited = 0;
        let mut sorted = samples.to_vec();
        for &f in &order {
            if visited >= quota {
                break;
            }
            let col = &data.cols[f];
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            if col[sorted[0]] == col[sorted[sorted.len() - 1]] {
                continue; // constant in this node; does not count toward the quota
            }
            visited += 1;
            let mut left = Stats::empty(target);
            let mut right = parent.clone();
            for w in 0..sorted.len() - 1 {
                let i = sorted[w];
                left.add(target, i, 1.0);
                right.add(target, i, -1.0);
                let (a, b) = (col[i], col[sorted[w + 1]]);
                if a == b {
                    continue;
                }
                let gain = left.score() + right.score() - parent_score;
                let threshold = a + (b - a) / 2.0;
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        gain > cur.gain + 1e-12
                            || ((gain - cur.gain).abs() <= 1e-12
                                && (f, threshold) < (cur.feature, cur.threshold))
                    }
                };
                if better {
                    best = Some(Split {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|s| s.gain > 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(x: Vec<Vec<i64>>, labels: Labels, bits: u32) -> QuantizedDataset {
        let n = x[0].len();
        QuantizedDataset {
            values: x,
            per_feature_params: vec![QuantParams::from_range(0.0, max_code(bits) as f64, bits); n],
            labels,
        }
    }

    /// Exhaustive oracle: best single threshold for 1-D data by misclassification-free Gini.
    fn best_stump_threshold(x: &[i64], y: &[usize]) -> i64 {
        let gini = |idx: &[usize]| -> f64 {
            if idx.is_empty() {
                return 0.0;
            }
            let p = idx.iter().filter(|&&i| y[i] == 1).count() as f64 / idx.len() as f64;
            idx.len() as f64 * (1.0 - p * p - (1.0 - p) * (1.0 - p))
        };
        let mut best = (f64::INFINITY, 0);
        for t in 1..=7 {
            let (l, r): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| x[i] < t);
            let g = gini(&l) + gini(&r);
            if g < best.0 {
                best = (g, t);
            }
        }
        best.1
    }

    #[test]
    fn stump_on_step_function() {
        let x: Vec<i64> = (0..8).collect();
        let y: Vec<usize> = x.iter().map(|&v| (v > 3) as usize).collect();
        assert_eq!(best_stump_threshold(&x, &y), 4);
        let ds = dataset(x.iter().map(|&v| vec![v]).collect(), Labels::Classes(y), 3);
        let e = train(&ds, &TrainConfig::new(ModelKind::DecisionTree, 1, 1, 0)).unwrap();
        assert_eq!(
            e.trees[0].nodes[0],
            TreeNode::internal(0, 0, 4, 1, 2),
        );
    }

    #[test]
    fn pure_labels_give_single_leaf() {
        let ds = dataset(vec![vec![1, 2], vec![3, 0], vec![5, 5]], Labels::Classes(vec![1, 1, 1]), 3);
        for kind in [ModelKind::DecisionTree, ModelKind::RandomForest] {
            let e = train(&ds, &TrainConfig::new(kind, 4, 3, 7)).unwrap();
            for t in &e.trees {
                assert_eq!(t.nodes.len(), 1);
            }
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = QuantizedDataset {
            values: vec![],
            per_feature_params: vec![],
            labels: Labels::Classes(vec![]),
        };
        assert!(train(&ds, &TrainConfig::new(ModelKind::DecisionTree, 2, 1, 0)).is_err());
        let x = vec![vec![1.0]];
        let cfg = TrainConfig::new(ModelKind::DecisionTree, 0, 1, 0);
        assert!(train_float(&x, &Labels::Classes(vec![0]), &cfg).is_err());
    }

    #[test]
    fn threshold_canonicalization() {
        assert_eq!(quantize_thresholds(&[3.5, 3.0, 0.5]), vec![4, 4, 1]);
        for raw in [0.5, 1.5, 3.5, 6.5] {
            let t = quantize_thresholds(&[raw])[0];
            for x in 0..8 {
                assert_eq!((x as f64) <= raw, x < t);
            }
        }
    }

    #[test]
    fn duplicated_rows_terminate() {
        let ds = dataset(vec![vec![2, 2]; 6], Labels::Classes(vec![0, 1, 0, 1, 0, 1]), 2);
        let e = train(&ds, &TrainConfig::new(ModelKind::DecisionTree, 5, 1, 0)).unwrap();
        assert_eq!(e.trees[0].nodes.len(), 1);
    }

    fn xor_data(n: usize) -> (Vec<Vec<i64>>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a = (i * 7 % 16) as i64;
            let b = (i * 11 % 16) as i64;
            x.push(vec![a, b, (i % 3) as i64]);
            y.push(((a >= 8) ^ (b >= 8)) as usize);
        }
        (x, y)
    }

    #[test]
    fn every_kind_respects_depth_and_routing() {
        let (x, y) = xor_data(128);
        let ds = dataset(x.clone(), Labels::Classes(y.clone()), 4);
        for kind in [ModelKind::DecisionTree, ModelKind::RandomForest, ModelKind::BoostedEnsemble] {
            let cfg = TrainConfig::new(kind, 3, 5, 11);
            let xf: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let forest = train_float(&xf, &Labels::Classes(y.clone()), &cfg).unwrap();
            let e = to_ensemble(&forest, &ds.per_feature_params, 4).unwrap();
            assert!(e.validate().is_empty());
            assert!(e.max_depth() <= 3);
            // integer routing after threshold rewrite equals float routing
            for row in &x {
                let xf: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                for (ft, it) in forest.trees.iter().zip(&e.trees) {
                    let lf = ft.predict(&xf);
                    let li = it.route(row);
                    let leaf_pos = ft
                        .nodes
                        .iter()
                        .filter(|n| matches!(n, FitNode::Leaf { .. }))
                        .position(|n| matches!(n, FitNode::Leaf { value } if std::ptr::eq(value.as_slice(), lf)))
                        .unwrap();
                    assert_eq!(leaf_pos, li);
                }
            }
        }
    }

    #[test]
    fn boosted_and_forest_learn_xor() {
        let (x, y) = xor_data(256);
        let ds = dataset(x.clone(), Labels::Classes(y.clone()), 4);
        for kind in [ModelKind::DecisionTree, ModelKind::RandomForest, ModelKind::BoostedEnsemble] {
            let cfg = TrainConfig::new(kind, 4, 20, 3);
            let xf: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let f = train_float(&xf, &ds.labels, &cfg).unwrap();
            let acc = xf.iter().zip(&y).filter(|(r, &c)| f.predict_class(r) == c).count() as f64 / y.len() as f64;
            assert!(acc > 0.9, "{kind:?} accuracy {acc}");
        }
    }

    #[test]
    fn multiclass_and_regression_boosting() {
        let x: Vec<Vec<f64>> = (0..90).map(|i| vec![(i % 30) as f64, (i / 30) as f64]).collect();
        let y: Vec<usize> = (0..90).map(|i| (i % 30) / 10).collect();
        let cfg = TrainConfig::new(ModelKind::BoostedEnsemble, 2, 10, 0);
        let f = train_float(&x, &Labels::Classes(y.clone()), &cfg).unwrap();
        assert_eq!(f.trees.len(), 30);
        assert!(x.iter().zip(&y).all(|(r, &c)| f.predict_class(r) == c));

        let t: Vec<f64> = x.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let f = train_float(&x, &Labels::Targets(t.clone()), &cfg).unwrap();
        assert_eq!(f.task, Task::Regression);
        let mse = x.iter().zip(&t).map(|(r, v)| (f.scores(r)[0] - v).powi(2)).sum::<f64>() / 90.0;
        assert!(mse < 4.0, "mse {mse}");
    }

    #[test]
    fn training_is_deterministic_across_thread_counts() {
        let (x, y) = xor_data(200);
        let ds = dataset(x, Labels::Classes(y), 4);
        let cfg = TrainConfig::new(ModelKind::RandomForest, 6, 16, 99);
        let a = train(&ds, &cfg).unwrap().to_json();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| train(&ds, &cfg).unwrap().to_json());
        assert_eq!(a, b);
    }
}
