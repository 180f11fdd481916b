//! Bit-width analysis of the compiled program.
//!
//! The program is a chain of leveled segments, each ending in a table
//! look-up (or in decryption for the last one). All constants are known, so
//! plain interval arithmetic bounds every encrypted intermediate. The report
//! is what a crypto-parameter search needs as input: the circuit precision,
//! the number and widths of look-ups, and the L2 norm of the clear weights of
//! each dot product.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compiler::{unsigned_bits, TensorBundle};
use crate::error::{Error, Result};
use crate::quantizer::max_code;

pub const STEP_INPUT: &str = "0_input";
pub const STEP_SELECT: &str = "1_P_select";
pub const STEP_COMPARE: &str = "2_Q_compare";
pub const STEP_PATH: &str = "3_R_path_code";
pub const STEP_MATCH: &str = "4_S_match";
pub const STEP_TREE_SUM: &str = "5.1_T_k_tree_sum";
pub const STEP_ENSEMBLE_SUM: &str = "5.2_T_clear_sum";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange {
    pub min: i64,
    pub max: i64,
    /// Bits of the value itself: unsigned width, or two's-complement width if `min < 0`.
    pub bits: u32,
    /// Lives in the encrypted domain (counts toward the circuit precision).
    pub encrypted: bool,
}

impl StepRange {
    fn new(min: i64, max: i64, encrypted: bool) -> Self {
        let bits = if min < 0 {
            let mut w = 1;
            while min < -(1i64 << (w - 1)) || max > (1i64 << (w - 1)) - 1 {
                w += 1;
            }
            w
        } else {
            unsigned_bits(max)
        };
        Self {
            min,
            max,
            bits,
            encrypted,
        }
    }

    pub fn contains(&self, v: i64) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitWidthReport {
    pub input_bits: u32,
    pub per_step_widths: BTreeMap<String, StepRange>,
    /// Message-space width every encrypted value must fit: the largest
    /// unsigned magnitude, plus one sign bit when a signed value is present.
    pub global_max_bits: u32,
    pub pbs_count: usize,
    /// Input width of every look-up of one inference, comparisons first.
    pub pbs_input_widths: Vec<u32>,
    /// Largest L2 norm of the clear weight vector of any dot product in the segment.
    pub norm2_constants: BTreeMap<String, f64>,
}

pub fn analyze(bundle: &TensorBundle, p: u32) -> Result<BitWidthReport> {
    if p != bundle.input_bits {
        return Err(Error::Config(format!(
            "analysis requested for {p}-bit inputs, bundle was compiled for {}",
            bundle.input_bits
        )));
    }
    let s = bundle.shapes;
    let top = max_code(p);
    let mut steps = BTreeMap::new();
    let mut norms = BTreeMap::new();
    steps.insert(STEP_INPUT.to_string(), StepRange::new(0, top, true));

    let has_decisions = (0..s.n_trees).any(|k| !bundle.is_constant_tree(k));
    if has_decisions {
        // A has a single 1 per column: P spans the input range.
        steps.insert(STEP_SELECT.to_string(), StepRange::new(0, top, true));
        norms.insert(STEP_SELECT.to_string(), 1.0);
        steps.insert(STEP_COMPARE.to_string(), StepRange::new(0, 1, true));

        // R[l] = sum of Q over left edges minus Q over right edges.
        let (r_lo, r_hi) = bundle.path_code_range().expect("some tree has decisions");
        steps.insert(STEP_PATH.to_string(), StepRange::new(r_lo, r_hi, true));
        let max_depth = bundle
            .index
            .iter()
            .flat_map(|t| t.path.iter().map(Vec::len))
            .max()
            .unwrap_or(0);
        norms.insert(STEP_PATH.to_string(), (max_depth as f64).sqrt());
        steps.insert(STEP_MATCH.to_string(), StepRange::new(0, 1, true));
    }

    // Step 5.1: S is one-hot, so T_k is one of the tree's real leaf values.
    let (mut t_lo, mut t_hi) = (i64::MAX, i64::MIN);
    let (mut sum_lo, mut sum_hi) = (0i64, 0i64);
    let mut leaf_norm: f64 = 0.0;
    for k in 0..s.n_trees {
        let (mut k_lo, mut k_hi) = (i64::MAX, i64::MIN);
        for c in 0..s.n_outputs {
            let mut sq = 0.0;
            for l in 0..bundle.leaf_counts[k] {
                let v = bundle.leaf_value(k, l, c);
                k_lo = k_lo.min(v);
                k_hi = k_hi.max(v);
                sq += (v * v) as f64;
            }
            leaf_norm = leaf_norm.max(sq.sqrt());
        }
        t_lo = t_lo.min(k_lo);
        t_hi = t_hi.max(k_hi);
        sum_lo += k_lo;
        sum_hi += k_hi;
    }
    steps.insert(STEP_TREE_SUM.to_string(), StepRange::new(t_lo, t_hi, has_decisions));
    norms.insert(STEP_TREE_SUM.to_string(), leaf_norm);
    steps.insert(STEP_ENSEMBLE_SUM.to_string(), StepRange::new(sum_lo, sum_hi, false));

    let encrypted = steps.values().filter(|r| r.encrypted);
    let magnitude = encrypted
        .clone()
        .map(|r| if r.min < 0 { r.bits - 1 } else { r.bits })
        .max()
        .unwrap_or(p);
    let signed = encrypted.clone().any(|r| r.min < 0);
    let global_max_bits = magnitude + signed as u32;

    let mut pbs_input_widths = Vec::new();
    for k in 0..s.n_trees {
        if !bundle.is_constant_tree(k) {
            pbs_input_widths.extend(std::iter::repeat_n(p, bundle.internal_counts[k]));
        }
    }
    for k in 0..s.n_trees {
        if !bundle.is_constant_tree(k) {
            pbs_input_widths
                .extend(std::iter::repeat_n(bundle.precision_bits + 1, bundle.leaf_counts[k]));
        }
    }
    Ok(BitWidthReport {
        input_bits: p,
        per_step_widths: steps,
        global_max_bits,
        pbs_count: pbs_input_widths.len(),
        pbs_input_widths,
        norm2_constants: norms,
    })
}

/// Relative cost of one inference: sum over look-ups of `cost_table[width]`.
pub fn pbs_cost_estimate(report: &BitWidthReport, cost_table: &BTreeMap<u32, f64>) -> Result<f64> {
    report
        .pbs_input_widths
        .iter()
        .map(|w| {
            cost_table
                .get(w)
                .copied()
                .ok_or_else(|| Error::Config(format!("cost table has no entry for {w}-bit look-ups")))
        })
        .sum()
}

impl BitWidthReport {
    /// Human-readable table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>10} {:>10} {:>5} {:>9}\n",
            "step", "min", "max", "bits", "domain"
        );
        for (name, r) in &self.per_step_widths {
            out.push_str(&format!(
                "{:<20} {:>10} {:>10} {:>5} {:>9}\n",
                name,
                r.min,
                r.max,
                r.bits,
                if r.encrypted { "encrypted" } else { "clear" }
            ));
        }
        out.push_str(&format!("global_max_bits: {}\n", self.global_max_bits));
        out.push_str(&format!("pbs_count: {}\n", self.pbs_count));
        for (name, n) in &self.norm2_constants {
            out.push_str(&format!("norm2[{name}]: {n:.4}\n"));
        }
        out
    }
}
