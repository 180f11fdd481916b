//! Quantized tree ensemble representation and its JSON model file.
//!
//! Decisions are always stored in canonical form: an input goes LEFT from an
//! internal node iff `x[feature] < threshold`, with integer thresholds.
//! Node ids equal their position in the tree's node list and node 0 is the
//! root.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quantizer::{max_code, QuantParams};

pub const IR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Internal {
        feature: usize,
        threshold: i64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf_index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn internal(id: usize, feature: usize, threshold: i64, left: usize, right: usize) -> Self {
        Self {
            id,
            kind: NodeKind::Internal {
                feature,
                threshold,
                left,
                right,
            },
        }
    }

    pub fn leaf(id: usize, leaf_index: usize) -> Self {
        Self {
            id,
            kind: NodeKind::Leaf { leaf_index },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn root_leaf(leaf_index: usize) -> Self {
        Self {
            nodes: vec![TreeNode::leaf(0, leaf_index)],
        }
    }

    pub fn n_internal(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Internal { .. }))
            .count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_internal()
    }

    /// Longest root-to-leaf edge count. Assumes a validated tree.
    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, id: usize) -> usize {
            match t.nodes[id].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Internal { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }

    /// Leaf slot reached by `x`. Assumes a validated tree.
    pub fn route(&self, x: &[i64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf { leaf_index } => return leaf_index,
                NodeKind::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] < threshold { left } else { right },
            }
        }
    }
}

/// A quantized ensemble `(V, E, L_q, tau', Q_X, Q_L)`.
///
/// `leaf_values[k]` holds tree `k`'s leaf codes laid out leaf-major:
/// slot `leaf * n_outputs + output`. Trees with fewer leaves than the
/// ensemble maximum are zero-padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub version: u32,
    pub task: Task,
    pub n_features: usize,
    pub input_bits: u32,
    pub n_classes: usize,
    pub feature_quants: Vec<QuantParams>,
    pub leaf_quant: QuantParams,
    pub trees: Vec<Tree>,
    pub leaf_values: Vec<Vec<i64>>,
}

impl TreeEnsemble {
    /// Number of values each leaf carries: one per class, or one for regression.
    pub fn n_outputs(&self) -> usize {
        match self.task {
            Task::Classification => self.n_classes,
            Task::Regression => 1,
        }
    }

    /// Common per-tree leaf-slot count `m`.
    pub fn leaf_slots(&self) -> usize {
        self.trees.iter().map(Tree::n_leaves).max().unwrap_or(0)
    }

    pub fn leaf_value(&self, tree: usize, leaf: usize) -> &[i64] {
        let n = self.n_outputs();
        &self.leaf_values[tree][leaf * n..(leaf + 1) * n]
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    /// Check every structural and range invariant. Violations are returned as
    /// data; an empty list means the ensemble is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.version != IR_VERSION {
            out.push(format!("unsupported IR version {}", self.version));
        }
        if self.input_bits == 0 || self.input_bits > 24 {
            out.push(format!("input_bits {} out of range 1..=24", self.input_bits));
        }
        if self.trees.is_empty() {
            out.push("ensemble has no trees".into());
        }
        if self.task == Task::Classification && self.n_classes < 2 {
            out.push(format!("classification needs n_classes >= 2, got {}", self.n_classes));
        }
        if self.feature_quants.len() != self.n_features {
            out.push(format!(
                "{} feature quantizers for {} features",
                self.feature_quants.len(),
                self.n_features
            ));
        }
        for (j, q) in self.feature_quants.iter().enumerate() {
            if let Err(e) = q.validate() {
                out.push(format!("feature quantizer {j}: {e}"));
            } else if q.bits != self.input_bits {
                out.push(format!(
                    "feature quantizer {j} has {} bits, ensemble uses {}",
                    q.bits, self.input_bits
                ));
            }
        }
        if let Err(e) = self.leaf_quant.validate() {
            out.push(format!("leaf quantizer: {e}"));
        }
        if self.leaf_values.len() != self.trees.len() {
            out.push(format!(
                "{} leaf-value rows for {} trees",
                self.leaf_values.len(),
                self.trees.len()
            ));
        }
        let row_len = self.leaf_slots() * self.n_outputs();
        let top = max_code(self.input_bits);
        let leaf_top = if self.leaf_quant.validate().is_ok() {
            self.leaf_quant.max_code()
        } else {
            i64::MAX
        };
        for (k, tree) in self.trees.iter().enumerate() {
            self.validate_tree(k, tree, top, &mut out);
            if let Some(row) = self.leaf_values.get(k) {
                if row.len() != row_len {
                    out.push(format!(
                        "tree {k}: leaf-value row has {} entries, expected {row_len}",
                        row.len()
                    ));
                }
                if let Some(v) = row.iter().find(|&&v| v < 0 || v > leaf_top) {
                    out.push(format!("tree {k}: leaf code {v} outside [0, {leaf_top}]"));
                }
            }
        }
        out
    }

    fn validate_tree(&self, k: usize, tree: &Tree, top: i64, out: &mut Vec<String>) {
        let n = tree.nodes.len();
        if n == 0 {
            out.push(format!("tree {k}: no nodes"));
            return;
        }
        let mut parents = vec![0usize; n];
        let mut leaf_seen = vec![false; n];
        let n_leaves = tree.n_leaves();
        let mut structural = true;
        for (pos, node) in tree.nodes.iter().enumerate() {
            if node.id != pos {
                out.push(format!("tree {k}: node at position {pos} has id {}", node.id));
                structural = false;
            }
            match node.kind {
                NodeKind::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= self.n_features {
                        out.push(format!(
                            "tree {k} node {pos}: feature out of range ({feature} >= {})",
                            self.n_features
                        ));
                    }
                    if !(0..=top).contains(&threshold) {
                        out.push(format!(
                            "tree {k} node {pos}: threshold {threshold} outside [0, {top}]"
                        ));
                    }
                    if left == right {
                        out.push(format!("tree {k} node {pos}: both children are node {left}"));
                    }
                    for child in [left, right] {
                        if child >= n {
                            out.push(format!("tree {k} node {pos}: child {child} does not exist"));
                            structural = false;
                        } else {
                            parents[child] += 1;
                        }
                    }
                }
                NodeKind::Leaf { leaf_index } => {
                    if leaf_index >= n_leaves {
                        out.push(format!(
                            "tree {k} node {pos}: leaf index {leaf_index} outside [0, {n_leaves})"
                        ));
                    } else if leaf_seen[leaf_index] {
                        out.push(format!("tree {k}: leaf index {leaf_index} used twice"));
                    } else {
                        leaf_seen[leaf_index] = true;
                    }
                }
            }
        }
        if !structural {
            return;
        }
        // Root has no parent, every other node exactly one, and everything is
        // reachable from the root: together these rule out cycles.
        let mut bad = parents[0] != 0 || parents[1..].iter().any(|&p| p != 1);
        if !bad {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            while let Some(id) = stack.pop() {
                if std::mem::replace(&mut seen[id], true) {
                    bad = true;
                    break;
                }
                if let NodeKind::Internal { left, right, .. } = tree.nodes[id].kind {
                    stack.extend([left, right]);
                }
            }
            bad |= seen.iter().any(|s| !s);
        }
        if bad {
            out.push(format!("tree {k}: not a tree (needs a single root, one parent per node, no cycles)"));
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid(format!("malformed model IR: {e}")))
    }
}

/// Leaves reached in each tree and their quantized values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Traversal {
    pub leaf_indices: Vec<usize>,
    pub leaf_values: Vec<Vec<i64>>,
}

/// Plaintext root-to-leaf evaluation of every tree.
pub fn traverse(ensemble: &TreeEnsemble, x_q: &[i64]) -> Result<Traversal> {
    if x_q.len() != ensemble.n_features {
        return Err(invalid(format!(
            "input has {} features, model expects {}",
            x_q.len(),
            ensemble.n_features
        )));
    }
    let leaf_indices: Vec<usize> = ensemble.trees.iter().map(|t| t.route(x_q)).collect();
    let leaf_values = leaf_indices
        .iter()
        .enumerate()
        .map(|(k, &leaf)| ensemble.leaf_value(k, leaf).to_vec())
        .collect();
    Ok(Traversal {
        leaf_indices,
        leaf_values,
    })
}
