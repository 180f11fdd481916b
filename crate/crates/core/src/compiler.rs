//! Compile a tree ensemble into the five-tensor GEMM program.
//!
//! For tree `k` with internal slots `i` (breadth-first order) and leaf slots
//! `l` (the IR leaf index):
//!
//! * `A[k][j][i] = 1` iff internal node `i` tests feature `j`;
//! * `B[k][i]` is that node's integer threshold;
//! * `C[k][l][i]` is `+1` if leaf `l`'s root path takes the left branch at
//!   node `i`, `-1` if it takes the right branch, `0` if `i` is off the path;
//! * `D[k][l]` is the value `R = Q . C` takes on leaf `l`'s path when the
//!   comparisons `Q` agree with it, i.e. the number of left branches;
//! * `L_q[k][l][c]` is the quantized leaf value for output `c`.
//!
//! `R[l] == D[l]` holds exactly when every comparison on the path agrees:
//! `R[l]` counts agreeing left edges minus disagreeing right edges, so it
//! reaches its maximum `D[l]` only on the selected leaf.
//!
//! Trees are padded to the ensemble's largest internal and leaf counts.
//! Padded internal slots have an all-zero `A` column and `C` column; padded
//! leaves get the unreachable code `D = -1`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quantizer::QuantParams;
use crate::tree_ir::{NodeKind, Task, TreeEnsemble};

/// Code stored in `D` for padding leaf slots. `R` is identically zero there.
pub const PADDING_PATH_CODE: i64 = -1;

/// Dense row-major tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::default(); shape.iter().product()],
        }
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shapes {
    pub n_trees: usize,
    pub n_features: usize,
    pub n_internal: usize,
    pub n_leaves: usize,
    pub n_outputs: usize,
}

/// Per-tree sparse view of `A` and `C`, used by the evaluator.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TreeIndex {
    /// Feature selected by each real internal slot (the single 1 in its `A` column).
    pub selected_feature: Vec<usize>,
    /// Non-zero `(internal slot, code)` pairs of each real leaf's `C` row.
    pub path: Vec<Vec<(usize, i8)>>,
}

/// The compiled program: tensors plus what the client needs to decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BundleRepr", into = "BundleRepr")]
pub struct TensorBundle {
    pub shapes: Shapes,
    pub input_bits: u32,
    /// Unsigned precision `w` of the encrypted circuit; signed path codes are
    /// offset-encoded into `w + 1` bits.
    pub precision_bits: u32,
    pub task: Task,
    pub n_classes: usize,
    pub leaf_quant: QuantParams,
    /// Real (unpadded) internal-node count of each tree.
    pub internal_counts: Vec<usize>,
    /// Real (unpadded) leaf count of each tree.
    pub leaf_counts: Vec<usize>,
    pub a: Tensor<u8>,
    pub b: Tensor<i64>,
    pub c: Tensor<i8>,
    pub d: Tensor<i64>,
    pub l_q: Tensor<i64>,
    pub index: Vec<TreeIndex>,
}

#[derive(Serialize, Deserialize, Clone)]
struct BundleRepr {
    shapes: Shapes,
    input_bits: u32,
    precision_bits: u32,
    task: Task,
    n_classes: usize,
    leaf_quant: QuantParams,
    internal_counts: Vec<usize>,
    leaf_counts: Vec<usize>,
    a: Tensor<u8>,
    b: Tensor<i64>,
    c: Tensor<i8>,
    d: Tensor<i64>,
    l_q: Tensor<i64>,
}

impl From<BundleRepr> for TensorBundle {
    fn from(r: BundleRepr) -> Self {
        let mut b = TensorBundle {
            shapes: r.shapes,
            input_bits: r.input_bits,
            precision_bits: r.precision_bits,
            task: r.task,
            n_classes: r.n_classes,
            leaf_quant: r.leaf_quant,
            internal_counts: r.internal_counts,
            leaf_counts: r.leaf_counts,
            a: r.a,
            b: r.b,
            c: r.c,
            d: r.d,
            l_q: r.l_q,
            index: Vec::new(),
        };
        b.index = b.build_index();
        b
    }
}

impl From<TensorBundle> for BundleRepr {
    fn from(b: TensorBundle) -> Self {
        BundleRepr {
            shapes: b.shapes,
            input_bits: b.input_bits,
            precision_bits: b.precision_bits,
            task: b.task,
            n_classes: b.n_classes,
            leaf_quant: b.leaf_quant,
            internal_counts: b.internal_counts,
            leaf_counts: b.leaf_counts,
            a: b.a,
            b: b.b,
            c: b.c,
            d: b.d,
            l_q: b.l_q,
        }
    }
}

impl TensorBundle {
    pub fn n_outputs(&self) -> usize {
        self.shapes.n_outputs
    }

    /// True when tree `k` is a single leaf; it contributes a constant and needs no TLU.
    pub fn is_constant_tree(&self, k: usize) -> bool {
        self.internal_counts[k] == 0
    }

    /// Number of table look-ups one inference performs.
    pub fn pbs_count(&self) -> usize {
        (0..self.shapes.n_trees)
            .filter(|&k| !self.is_constant_tree(k))
            .map(|k| self.internal_counts[k] + self.leaf_counts[k])
            .sum()
    }

    /// Comparison table of internal slot `i` in tree `k`.
    pub fn comparison_tlu(&self, k: usize, i: usize) -> LessThan {
        LessThan {
            threshold: self.b.get(&[k, i]),
            bits: self.input_bits,
        }
    }

    /// Equality table of leaf slot `l` in tree `k`.
    pub fn equality_tlu(&self, k: usize, l: usize) -> EqualTo {
        EqualTo {
            target: self.d.get(&[k, l]),
            magnitude_bits: self.precision_bits,
        }
    }

    pub fn leaf_value(&self, k: usize, l: usize, c: usize) -> i64 {
        self.l_q.get(&[k, l, c])
    }

    fn build_index(&self) -> Vec<TreeIndex> {
        let s = self.shapes;
        (0..s.n_trees)
            .map(|k| TreeIndex {
                selected_feature: (0..self.internal_counts[k])
                    .map(|i| {
                        (0..s.n_features)
                            .find(|&j| self.a.get(&[k, j, i]) == 1)
                            .unwrap_or(0)
                    })
                    .collect(),
                path: (0..self.leaf_counts[k])
                    .map(|l| {
                        (0..s.n_internal)
                            .filter_map(|i| match self.c.get(&[k, l, i]) {
                                0 => None,
                                v => Some((i, v)),
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect()
    }

    /// Static range `[lo, hi]` of `R` over every real leaf and every input.
    pub fn path_code_range(&self) -> Option<(i64, i64)> {
        path_code_range(&self.index)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid(format!("malformed tensor bundle: {e}")))
    }
}

fn path_code_range(index: &[TreeIndex]) -> Option<(i64, i64)> {
    let mut range: Option<(i64, i64)> = None;
    for t in index {
        if t.selected_feature.is_empty() {
            continue;
        }
        for path in &t.path {
            let lo = -(path.iter().filter(|(_, c)| *c < 0).count() as i64);
            let hi = path.iter().filter(|(_, c)| *c > 0).count() as i64;
            range = Some(match range {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
    }
    range
}

/// Bits needed to hold the unsigned value `v` (at least one).
pub fn unsigned_bits(v: i64) -> u32 {
    (64 - (v.max(1) as u64).leading_zeros()).max(1)
}

/// Smallest unsigned precision `w >= floor` such that `[lo, hi]` fits the
/// offset-encoded signed domain `[-2^w, 2^w - 1]`.
pub fn signed_precision(lo: i64, hi: i64, floor: u32) -> u32 {
    let mut w = floor;
    while hi > (1i64 << w) - 1 || lo < -(1i64 << w) {
        w += 1;
    }
    w
}

/// A univariate function evaluated by programmable bootstrapping.
pub trait Tlu {
    /// Table length, always a power of two.
    fn len(&self) -> usize;
    /// Added to a (possibly signed) input to obtain its table index.
    fn input_offset(&self) -> i64;
    fn entry(&self, index: usize) -> i64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn materialize(&self) -> LookupTable {
        LookupTable {
            entries: (0..self.len()).map(|i| self.entry(i)).collect(),
            input_offset: self.input_offset(),
        }
    }
}

/// Explicit table of `2^w` entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupTable {
    pub entries: Vec<i64>,
    pub input_offset: i64,
}

impl Tlu for LookupTable {
    fn len(&self) -> usize {
        self.entries.len()
    }
    fn input_offset(&self) -> i64 {
        self.input_offset
    }
    fn entry(&self, index: usize) -> i64 {
        self.entries[index]
    }
}

/// `x < threshold` over unsigned `bits`-bit inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LessThan {
    pub threshold: i64,
    pub bits: u32,
}

impl Tlu for LessThan {
    fn len(&self) -> usize {
        1 << self.bits
    }
    fn input_offset(&self) -> i64 {
        0
    }
    fn entry(&self, index: usize) -> i64 {
        ((index as i64) < self.threshold) as i64
    }
}

/// `x == target` over signed inputs in `[-2^m, 2^m - 1]`, offset by `2^m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EqualTo {
    pub target: i64,
    pub magnitude_bits: u32,
}

impl Tlu for EqualTo {
    fn len(&self) -> usize {
        1 << (self.magnitude_bits + 1)
    }
    fn input_offset(&self) -> i64 {
        1 << self.magnitude_bits
    }
    fn entry(&self, index: usize) -> i64 {
        (index as i64 - self.input_offset() == self.target) as i64
    }
}

pub fn build_comparison_tlu(threshold: i64, input_bits: u32) -> Result<LookupTable> {
    if input_bits == 0 || input_bits > 24 {
        return Err(invalid(format!("TLU width {input_bits} out of range 1..=24")));
    }
    if !(0..=1i64 << input_bits).contains(&threshold) {
        return Err(invalid(format!(
            "threshold {threshold} outside [0, 2^{input_bits}]"
        )));
    }
    Ok(LessThan {
        threshold,
        bits: input_bits,
    }
    .materialize())
}

/// Equality table over the `(p + 1)`-bit offset-encoded domain `[-2^p, 2^p - 1]`.
pub fn build_equality_tlu(target: i64, p: u32) -> Result<LookupTable> {
    if p > 23 {
        return Err(invalid(format!("TLU width {} out of range", p + 1)));
    }
    let half = 1i64 << p;
    if !(-half..half).contains(&target) {
        return Err(invalid(format!("target {target} outside [-{half}, {}]", half - 1)));
    }
    Ok(EqualTo {
        target,
        magnitude_bits: p,
    }
    .materialize())
}

pub fn compile(ensemble: &TreeEnsemble) -> Result<TensorBundle> {
    let violations = ensemble.validate();
    if !violations.is_empty() {
        return Err(Error::Compile(violations));
    }
    let n_trees = ensemble.trees.len();
    let n_outputs = ensemble.n_outputs();
    let internal_counts: Vec<usize> = ensemble.trees.iter().map(|t| t.n_internal()).collect();
    let leaf_counts: Vec<usize> = ensemble.trees.iter().map(|t| t.n_leaves()).collect();
    let shapes = Shapes {
        n_trees,
        n_features: ensemble.n_features,
        n_internal: internal_counts.iter().copied().max().unwrap_or(0),
        n_leaves: leaf_counts.iter().copied().max().unwrap_or(0),
        n_outputs,
    };
    let mut a = Tensor::zeros(&[n_trees, shapes.n_features, shapes.n_internal]);
    let mut b = Tensor::zeros(&[n_trees, shapes.n_internal]);
    let mut c = Tensor::zeros(&[n_trees, shapes.n_leaves, shapes.n_internal]);
    let mut d = Tensor::<i64>::zeros(&[n_trees, shapes.n_leaves]);
    let mut l_q = Tensor::zeros(&[n_trees, shapes.n_leaves, n_outputs]);

    for (k, tree) in ensemble.trees.iter().enumerate() {
        // Breadth-first numbering of internal nodes, carrying each node's path.
        let mut slot = 0usize;
        let mut queue = std::collections::VecDeque::from([(0usize, Vec::<(usize, i8)>::new())]);
        while let Some((id, path)) = queue.pop_front() {
            match tree.nodes[id].kind {
                NodeKind::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let i = slot;
                    slot += 1;
                    a.set(&[k, feature, i], 1);
                    b.set(&[k, i], threshold);
                    let mut lp = path.clone();
                    lp.push((i, 1));
                    let mut rp = path;
                    rp.push((i, -1));
                    queue.push_back((left, lp));
                    queue.push_back((right, rp));
                }
                NodeKind::Leaf { leaf_index } => {
                    let mut code = 0;
                    for &(i, v) in &path {
                        c.set(&[k, leaf_index, i], v);
                        code += (v > 0) as i64;
                    }
                    d.set(&[k, leaf_index], code);
                }
            }
        }
        for l in 0..shapes.n_leaves {
            if l >= leaf_counts[k] {
                d.set(&[k, l], PADDING_PATH_CODE);
            }
            for o in 0..n_outputs {
                l_q.set(&[k, l, o], ensemble.leaf_values[k][l * n_outputs + o]);
            }
        }
    }

    let mut bundle = TensorBundle {
        shapes,
        input_bits: ensemble.input_bits,
        precision_bits: 0,
        task: ensemble.task,
        n_classes: ensemble.n_classes,
        leaf_quant: ensemble.leaf_quant,
        internal_counts,
        leaf_counts,
        a,
        b,
        c,
        d,
        l_q,
        index: Vec::new(),
    };
    bundle.index = bundle.build_index();
    let max_leaf = bundle.l_q.data.iter().copied().max().unwrap_or(0);
    let floor = ensemble.input_bits.max(unsigned_bits(max_leaf));
    bundle.precision_bits = match bundle.path_code_range() {
        Some((lo, hi)) => signed_precision(lo.min(PADDING_PATH_CODE), hi, floor),
        None => floor,
    };
    verify_path_codes(&bundle)?;
    Ok(bundle)
}

/// Construction check: on every leaf's own path pattern, that leaf and only
/// that leaf matches its code, whatever the off-path comparisons say.
fn verify_path_codes(bundle: &TensorBundle) -> Result<()> {
    for (k, t) in bundle.index.iter().enumerate() {
        if t.selected_feature.is_empty() {
            continue;
        }
        for (l, path) in t.path.iter().enumerate() {
            for off_path in [0i64, 1] {
                let mut q = vec![off_path; t.selected_feature.len()];
                for &(i, v) in path {
                    q[i] = (v > 0) as i64;
                }
                for (l2, p2) in t.path.iter().enumerate() {
                    let r: i64 = p2.iter().map(|&(i, v)| q[i] * v as i64).sum();
                    if (r == bundle.d.get(&[k, l2])) != (l == l2) {
                        return Err(Error::Contract(format!(
                            "tree {k}: path code of leaf {l2} does not separate it from leaf {l}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree_ir::{Tree, TreeNode, IR_VERSION};

    fn q(bits: u32) -> QuantParams {
        QuantParams {
            scale: 1.0,
            zero_point: 0,
            bits,
        }
    }

    fn stump() -> TreeEnsemble {
        TreeEnsemble {
            version: IR_VERSION,
            task: Task::Classification,
            n_features: 2,
            input_bits: 3,
            n_classes: 2,
            feature_quants: vec![q(3); 2],
            leaf_quant: q(3),
            trees: vec![Tree {
                nodes: vec![
                    TreeNode::internal(0, 1, 4, 1, 2),
                    TreeNode::leaf(1, 0),
                    TreeNode::leaf(2, 1),
                ],
            }],
            leaf_values: vec![vec![0, 1, 1, 0]],
        }
    }

    #[test]
    fn stump_tensors() {
        let b = compile(&stump()).unwrap();
        assert_eq!(b.c.shape, vec![1, 2, 1]);
        assert_eq!(b.c.data, vec![1, -1]);
        // R on the left leaf's path is 1 (one agreeing left edge), on the right leaf's 0.
        assert_eq!(b.d.data, vec![1, 0]);
        assert_eq!(b.a.data, vec![0, 1]);
        assert_eq!(b.b.data, vec![4]);
        assert_eq!(b.precision_bits, 3);
        assert_eq!(b.comparison_tlu(0, 0).materialize().entries, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(b.pbs_count(), 3);
    }

    #[test]
    fn root_leaf_tree_compiles_to_empty_tensors() {
        let mut e = stump();
        e.trees = vec![Tree::root_leaf(0)];
        e.leaf_values = vec![vec![2, 3]];
        let b = compile(&e).unwrap();
        assert!(b.a.data.is_empty() && b.b.data.is_empty() && b.c.data.is_empty());
        assert_eq!(b.d.data, vec![0]);
        assert!(b.is_constant_tree(0));
        assert_eq!(b.pbs_count(), 0);
        assert_eq!(b.precision_bits, 3);
    }

    #[test]
    fn invalid_ensemble_reports_violations() {
        let mut e = stump();
        e.n_features = 1;
        e.feature_quants.pop();
        match compile(&e) {
            Err(Error::Compile(v)) => assert!(v.iter().any(|m| m.contains("feature out of range"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comparison_tables() {
        assert_eq!(build_comparison_tlu(4, 3).unwrap().entries, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        assert!(build_comparison_tlu(0, 3).unwrap().entries.iter().all(|&v| v == 0));
        assert!(build_comparison_tlu(8, 3).unwrap().entries.iter().all(|&v| v == 1));
        assert!(build_comparison_tlu(9, 3).is_err());
        assert!(build_comparison_tlu(-1, 3).is_err());
    }

    #[test]
    fn equality_tables() {
        let t = build_equality_tlu(0, 3).unwrap();
        assert_eq!(t.entries.len(), 16);
        assert_eq!(t.input_offset, 8);
        assert_eq!(t.entries[8], 1);
        let t = build_equality_tlu(-1, 3).unwrap();
        for x in -8i64..8 {
            assert_eq!(t.entries[(x + t.input_offset) as usize], (x == -1) as i64);
        }
        for target in -8..8 {
            assert_eq!(build_equality_tlu(target, 3).unwrap().entries.iter().sum::<i64>(), 1);
        }
        assert!(build_equality_tlu(8, 3).is_err());
        assert!(build_equality_tlu(-9, 3).is_err());
    }

    #[test]
    fn padding_and_bfs_order() {
        // tree 0: root(f0<2) -> left: node(f1<1) -> leaves; right: leaf
        let mut e = stump();
        e.trees = vec![
            Tree {
                nodes: vec![
                    TreeNode::internal(0, 0, 2, 1, 2),
                    TreeNode::internal(1, 1, 1, 3, 4),
                    TreeNode::leaf(2, 2),
                    TreeNode::leaf(3, 0),
                    TreeNode::leaf(4, 1),
                ],
            },
            Tree::root_leaf(0),
        ];
        e.leaf_values = vec![vec![1, 0, 2, 0, 3, 0], vec![4, 4, 0, 0, 0, 0]];
        let b = compile(&e).unwrap();
        assert_eq!(b.shapes.n_internal, 2);
        assert_eq!(b.shapes.n_leaves, 3);
        assert_eq!(b.index[0].selected_feature, vec![0, 1]);
        // leaf 0: left,left ; leaf 1: left,right ; leaf 2: right
        assert_eq!(b.index[0].path, vec![vec![(0, 1), (1, 1)], vec![(0, 1), (1, -1)], vec![(0, -1)]]);
        assert_eq!(&b.d.data[0..3], &[2, 1, 0]);
        assert_eq!(&b.d.data[3..6], &[0, PADDING_PATH_CODE, PADDING_PATH_CODE]);
        // each A column of a real slot has exactly one 1, padded slot none
        for i in 0..2 {
            let ones: u8 = (0..2).map(|j| b.a.get(&[0, j, i])).sum();
            assert_eq!(ones, 1);
            let ones: u8 = (0..2).map(|j| b.a.get(&[1, j, i])).sum();
            assert_eq!(ones, 0);
        }
    }

    #[test]
    fn bundle_json_round_trip_rebuilds_index() {
        let b = compile(&stump()).unwrap();
        let back = TensorBundle::from_json(&b.to_json()).unwrap();
        assert_eq!(back, b);
        let v: serde_json::Value = serde_json::from_str(&b.to_json()).unwrap();
        assert_eq!(v["c"]["shape"], serde_json::json!([1, 2, 1]));
        assert!(v.get("index").is_none());
    }

    #[test]
    fn precision_grows_for_deep_left_spines() {
        assert_eq!(signed_precision(-1, 3, 2), 2);
        assert_eq!(signed_precision(-1, 4, 2), 3);
        assert_eq!(signed_precision(-5, 0, 2), 3);
        assert_eq!(unsigned_bits(0), 1);
        assert_eq!(unsigned_bits(63), 6);
        assert_eq!(unsigned_bits(64), 7);
    }
}
