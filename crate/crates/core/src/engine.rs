//! Evaluation of compiled bundles, exactly or under simulated PBS failures.
//!
//! Leveled steps (the dot products with `A`, `C` and `L_q`) are always exact.
//! Noise enters only at table look-ups: with probability `p_error` a look-up
//! reads a displaced slot `T[x + k]` instead of `T[x]`, the index clamped to
//! the table. Per-tree sums leave the encrypted domain before they are added
//! across trees; the client dequantizes and takes the argmax.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compiler::{Tlu, TensorBundle};
use crate::error::{invalid, Error, Result};
use crate::quantizer::{max_code, QuantParams};
use crate::rng::KeyedStream;
use crate::tree_ir::Task;

/// Distribution of the slot displacement `k` given that a look-up failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementLaw {
    /// `k = +1` or `-1`, each with half the failure mass.
    Adjacent,
    /// Always the same `k`.
    Fixed(i64),
    /// `|k| = 1 + Geometric(ratio)`, symmetric sign; heavier tails as `ratio -> 1`.
    Geometric { ratio: f64 },
}

impl DisplacementLaw {
    fn draw(&self, rng: &mut KeyedStream) -> i64 {
        match *self {
            DisplacementLaw::Adjacent => {
                if rng.next_u64() & 1 == 0 {
                    1
                } else {
                    -1
                }
            }
            DisplacementLaw::Fixed(k) => k,
            DisplacementLaw::Geometric { ratio } => {
                let mut mag = 1;
                while mag < 1 << 20 && rng.next_f64() < ratio {
                    mag += 1;
                }
                if rng.next_u64() & 1 == 0 {
                    mag
                } else {
                    -mag
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p_error: f64,
    pub displacement_law: DisplacementLaw,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            p_error: 0.0,
            displacement_law: DisplacementLaw::Adjacent,
            rng_seed: 0,
        }
    }

    pub fn new(p_error: f64, rng_seed: u64) -> Result<Self> {
        Self::with_law(p_error, DisplacementLaw::Adjacent, rng_seed)
    }

    pub fn with_law(p_error: f64, displacement_law: DisplacementLaw, rng_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_error) {
            return Err(invalid(format!("p_error must lie in [0, 1], got {p_error}")));
        }
        if let DisplacementLaw::Geometric { ratio } = displacement_law {
            if !(0.0..1.0).contains(&ratio) {
                return Err(invalid(format!("geometric ratio must lie in [0, 1), got {ratio}")));
            }
        }
        Ok(Self {
            p_error,
            displacement_law,
            rng_seed,
        })
    }

    pub fn is_noiseless(&self) -> bool {
        self.p_error == 0.0
    }
}

/// Outcome of one look-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TluRead {
    pub value: i64,
    /// The failure branch fired (the value may still equal `T[x]`).
    pub failed: bool,
}

/// Look up `x` in `table` under the noise model.
pub fn apply_tlu<T: Tlu + ?Sized>(table: &T, x: i64, noise: &NoiseModel, rng: &mut KeyedStream) -> Result<TluRead> {
    let len = table.len() as i64;
    let idx = x + table.input_offset();
    if !(0..len).contains(&idx) {
        return Err(Error::Contract(format!(
            "TLU input {x} outside the table domain [{}, {}]",
            -table.input_offset(),
            len - 1 - table.input_offset()
        )));
    }
    if noise.p_error > 0.0 && rng.next_f64() < noise.p_error {
        let k = noise.displacement_law.draw(rng);
        let shifted = idx.saturating_add(k).clamp(0, len - 1);
        return Ok(TluRead {
            value: table.entry(shifted as usize),
            failed: true,
        });
    }
    Ok(TluRead {
        value: table.entry(idx as usize),
        failed: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Class(usize),
    Value(f64),
}

/// Per-tree intermediate tensors of one inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub p: Vec<Vec<i64>>,
    pub q: Vec<Vec<i64>>,
    pub r: Vec<Vec<i64>>,
    pub s: Vec<Vec<i64>>,
    pub t_k: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// Step 5.1 output, tree x output.
    pub per_tree_sums: Vec<Vec<i64>>,
    /// Step 5.2 output, summed in the clear.
    pub aggregate: Vec<i64>,
    pub dequantized_scores: Vec<f64>,
    pub prediction: Prediction,
    pub tlu_applications: u64,
    pub tlu_failures: u64,
    pub trace: Option<Trace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub trace: bool,
    /// Fail with a contract violation if a leveled value leaves its provisioned range.
    pub check_bounds: bool,
}

const STEP_COMPARE: u64 = 2;
const STEP_MATCH: u64 = 4;

pub fn evaluate(bundle: &TensorBundle, x_q: &[i64], noise: &NoiseModel) -> Result<PredictionResult> {
    evaluate_row(bundle, x_q, noise, 0, EvalOptions::default())
}

/// Evaluate one input; `row` keys the noise stream so batch order is irrelevant.
pub fn evaluate_row(
    bundle: &TensorBundle,
    x_q: &[i64],
    noise: &NoiseModel,
    row: u64,
    opts: EvalOptions,
) -> Result<PredictionResult> {
    check_bundle(bundle)?;
    let s = bundle.shapes;
    if x_q.len() != s.n_features {
        return Err(invalid(format!(
            "input has {} features, bundle expects {}",
            x_q.len(),
            s.n_features
        )));
    }
    let top = max_code(bundle.input_bits);
    if let Some(v) = x_q.iter().find(|&&v| !(0..=top).contains(&v)) {
        return Err(invalid(format!("input code {v} outside [0, {top}]")));
    }
    let path_lo = -(1i64 << bundle.precision_bits);
    let path_hi = (1i64 << bundle.precision_bits) - 1;

    let mut per_tree_sums = Vec::with_capacity(s.n_trees);
    let mut trace = opts.trace.then(|| Trace {
        p: Vec::new(),
        q: Vec::new(),
        r: Vec::new(),
        s: Vec::new(),
        t_k: Vec::new(),
    });
    let mut applications = 0u64;
    let mut failures = 0u64;

    for k in 0..s.n_trees {
        let idx = &bundle.index[k];
        let n_int = bundle.internal_counts[k];
        let n_leaf = bundle.leaf_counts[k];

        // Step 1: P = x_q . A  (each A column selects one feature)
        let p: Vec<i64> = idx.selected_feature.iter().map(|&j| x_q[j]).collect();
        if opts.check_bounds {
            if let Some(v) = p.iter().find(|&&v| !(0..=top).contains(&v)) {
                return Err(Error::Contract(format!("P value {v} exceeds {} bits", bundle.input_bits)));
            }
        }

        // Step 2: Q = [P < B], one TLU per internal node
        let mut q = Vec::with_capacity(n_int);
        for (i, &pv) in p.iter().enumerate() {
            let mut rng = KeyedStream::new(noise.rng_seed, &[row, STEP_COMPARE, k as u64, i as u64]);
            let read = apply_tlu(&bundle.comparison_tlu(k, i), pv, noise, &mut rng)?;
            applications += 1;
            failures += read.failed as u64;
            q.push(read.value);
        }

        // Step 3: R = Q . C ; Step 4: S = [R == D]
        let mut r = Vec::with_capacity(n_leaf);
        let mut sel = Vec::with_capacity(n_leaf);
        if bundle.is_constant_tree(k) {
            r.push(0);
            sel.push(1);
        } else {
            for (l, path) in idx.path.iter().enumerate() {
                let rv: i64 = path.iter().map(|&(i, c)| q[i] * c as i64).sum();
                if opts.check_bounds && !(path_lo..=path_hi).contains(&rv) {
                    return Err(Error::Contract(format!(
                        "R value {rv} exceeds {} signed bits",
                        bundle.precision_bits + 1
                    )));
                }
                let mut rng = KeyedStream::new(noise.rng_seed, &[row, STEP_MATCH, k as u64, l as u64]);
                let read = apply_tlu(&bundle.equality_tlu(k, l), rv, noise, &mut rng)?;
                applications += 1;
                failures += read.failed as u64;
                r.push(rv);
                sel.push(read.value);
            }
        }

        // Step 5.1: T_k = S . L_q
        let t_k: Vec<i64> = (0..s.n_outputs)
            .map(|c| {
                sel.iter()
                    .enumerate()
                    .map(|(l, &sv)| sv * bundle.leaf_value(k, l, c))
                    .sum()
            })
            .collect();
        if let Some(tr) = trace.as_mut() {
            tr.p.push(p);
            tr.q.push(q);
            tr.r.push(r);
            tr.s.push(sel);
            tr.t_k.push(t_k.clone());
        }
        per_tree_sums.push(t_k);
    }

    // Step 5.2: clear-domain sum over trees
    let aggregate: Vec<i64> = (0..s.n_outputs)
        .map(|c| per_tree_sums.iter().map(|t| t[c]).sum())
        .collect();
    let (dequantized_scores, prediction) =
        postprocess(&aggregate, &bundle.leaf_quant, s.n_trees, bundle.task);
    Ok(PredictionResult {
        per_tree_sums,
        aggregate,
        dequantized_scores,
        prediction,
        tlu_applications: applications,
        tlu_failures: failures,
        trace,
    })
}

/// Evaluate rows in parallel; row `i` uses noise stream `i`.
pub fn evaluate_batch(bundle: &TensorBundle, x_q: &[Vec<i64>], noise: &NoiseModel) -> Result<Vec<PredictionResult>> {
    evaluate_batch_with(bundle, x_q, noise, EvalOptions::default())
}

pub fn evaluate_batch_with(
    bundle: &TensorBundle,
    x_q: &[Vec<i64>],
    noise: &NoiseModel,
    opts: EvalOptions,
) -> Result<Vec<PredictionResult>> {
    x_q.par_iter()
        .enumerate()
        .map(|(i, row)| evaluate_row(bundle, row, noise, i as u64, opts))
        .collect()
}

/// Dequantize class sums and decide.
///
/// Each of the `n_trees` summed leaf codes carries the leaf zero-point, so
/// the sum is shifted by `n_trees * zero_point` before scaling. Ties in the
/// argmax go to the lowest class index.
pub fn postprocess(aggregate: &[i64], leaf_quant: &QuantParams, n_trees: usize, task: Task) -> (Vec<f64>, Prediction) {
    let shift = n_trees as i64 * leaf_quant.zero_point;
    let scores: Vec<f64> = aggregate
        .iter()
        .map(|&a| (a - shift) as f64 * leaf_quant.scale)
        .collect();
    let prediction = match task {
        Task::Classification => Prediction::Class(crate::trainer::argmax(&scores)),
        Task::Regression => Prediction::Value(scores.first().copied().unwrap_or(0.0)),
    };
    (scores, prediction)
}

fn check_bundle(bundle: &TensorBundle) -> Result<()> {
    if bundle.leaf_quant.bits > bundle.precision_bits || bundle.input_bits > bundle.precision_bits {
        return Err(Error::Config(format!(
            "bundle precision {} bits cannot hold {}-bit inputs and {}-bit leaves",
            bundle.precision_bits, bundle.input_bits, bundle.leaf_quant.bits
        )));
    }
    if bundle.index.len() != bundle.shapes.n_trees {
        return Err(Error::Config("bundle index does not match its shapes".into()));
    }
    Ok(())
}
