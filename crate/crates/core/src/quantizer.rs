//! Uniform affine quantization of features and leaf values.
//!
//! Every feature column gets its own scale and zero-point, calibrated on the
//! exact min/max of the training data. Leaf values share a single pair for
//! the whole ensemble so that per-tree sums stay comparable across classes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Scale, zero-point and bit-width of one affine quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i64,
    pub bits: u32,
}

/// Largest code representable on `bits` unsigned bits.
pub fn max_code(bits: u32) -> i64 {
    (1i64 << bits) - 1
}

impl QuantParams {
    /// Calibrate on the exact `[min, max]` of `values`.
    ///
    /// A constant input has no defined scale; it gets `scale = 1` and a
    /// zero-point that sends the constant to code 0.
    pub fn fit<I>(values: I, bits: u32) -> Result<Self>
    where
        I: IntoIterator<Item = f64>,
    {
        check_bits(bits)?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut count = 0usize;
        for v in values {
            if !v.is_finite() {
                return Err(invalid(format!("non-finite calibration value {v}")));
            }
            lo = lo.min(v);
            hi = hi.max(v);
            count += 1;
        }
        if count == 0 {
            return Err(invalid("cannot calibrate a quantizer on no values"));
        }
        Ok(Self::from_range(lo, hi, bits))
    }

    /// Parameters mapping `[lo, hi]` onto `[0, 2^bits - 1]`.
    pub fn from_range(lo: f64, hi: f64, bits: u32) -> Self {
        let scale = (hi - lo) / max_code(bits) as f64;
        let degenerate = scale.is_nan() || scale <= 0.0 || !scale.is_normal() || !(lo / scale).is_finite();
        let scale = if degenerate { 1.0 } else { scale };
        // Rounding the offset with the same rule as `quantize` pins lo to code 0.
        let zero_point = -round_to_i64(lo / scale);
        Self {
            scale,
            zero_point,
            bits,
        }
    }

    pub fn max_code(&self) -> i64 {
        max_code(self.bits)
    }

    /// `clamp(round(x / scale) + zero_point, 0, 2^bits - 1)`.
    pub fn quantize(&self, x: f64) -> Result<i64> {
        if !x.is_finite() {
            return Err(invalid(format!("cannot quantize non-finite value {x}")));
        }
        let top = self.max_code();
        // Clamp in floating point first so huge inputs cannot overflow i64.
        let code = ((x / self.scale).round() + self.zero_point as f64).clamp(0.0, top as f64);
        Ok(code as i64)
    }

    /// `(q - zero_point) * scale`.
    pub fn dequantize(&self, q: i64) -> f64 {
        (q - self.zero_point) as f64 * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        if self.scale.is_nan() || self.scale <= 0.0 || !self.scale.is_finite() {
            return Err(invalid(format!(
                "quantization scale must be positive and finite, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

fn round_to_i64(v: f64) -> i64 {
    v.round().clamp(i64::MIN as f64 / 2.0, i64::MAX as f64 / 2.0) as i64
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > 24 {
        return Err(invalid(format!("bit-width must be in 1..=24, got {bits}")));
    }
    Ok(())
}

/// Class indices for classification or real targets for regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    Classes(Vec<usize>),
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes(c) => Labels::Classes(idx.iter().map(|&i| c[i]).collect()),
            Labels::Targets(t) => Labels::Targets(idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// Integer feature matrix together with the quantizers that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedDataset {
    pub values: Vec<Vec<i64>>,
    pub per_feature_params: Vec<QuantParams>,
    pub labels: Labels,
}

impl QuantizedDataset {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_features(&self) -> usize {
        self.per_feature_params.len()
    }

    pub fn bits(&self) -> u32 {
        self.per_feature_params.first().map_or(0, |q| q.bits)
    }
}

/// Calibrate one quantizer per column of `x` and quantize every row.
pub fn train_quantizer(x: &[Vec<f64>], bits: u32, labels: Labels) -> Result<QuantizedDataset> {
    let n_features = check_matrix(x)?;
    if labels.len() != x.len() {
        return Err(invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            x.len()
        )));
    }
    let per_feature_params = (0..n_features)
        .map(|j| QuantParams::fit(x.iter().map(|row| row[j]), bits))
        .collect::<Result<Vec<_>>>()?;
    let values = quantize_rows(x, &per_feature_params)?;
    Ok(QuantizedDataset {
        values,
        per_feature_params,
        labels,
    })
}

/// Quantize rows with already-calibrated per-feature params (inference path).
pub fn quantize_rows(x: &[Vec<f64>], params: &[QuantParams]) -> Result<Vec<Vec<i64>>> {
    x.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != params.len() {
                return Err(invalid(format!(
                    "row {i} has {} features, expected {}",
                    row.len(),
                    params.len()
                )));
            }
            row.iter().zip(params).map(|(&v, q)| q.quantize(v)).collect()
        })
        .collect()
}

/// Quantize a leaf-value matrix with one global scale and zero-point.
pub fn quantize_leaves(leaves: &[Vec<f64>], bits: u32) -> Result<(Vec<Vec<i64>>, QuantParams)> {
    if leaves.iter().all(|r| r.is_empty()) {
        return Err(invalid("leaf matrix is empty"));
    }
    let params = QuantParams::fit(leaves.iter().flatten().copied(), bits)?;
    let codes = leaves
        .iter()
        .map(|row| row.iter().map(|&v| params.quantize(v)).collect())
        .collect::<Result<Vec<Vec<i64>>>>()?;
    Ok((codes, params))
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let first = x.first().ok_or_else(|| invalid("empty feature matrix"))?;
    let n = first.len();
    if n == 0 {
        return Err(invalid("feature matrix has no columns"));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != n {
            return Err(invalid(format!("row {i} has {} columns, expected {n}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at row {i}, column {j}")));
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64], bits: u32) -> (QuantParams, Vec<i64>) {
        let x: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let ds = train_quantizer(&x, bits, Labels::Classes(vec![0; values.len()])).unwrap();
        (ds.per_feature_params[0], ds.values.iter().map(|r| r[0]).collect())
    }

    #[test]
    fn identity_when_range_matches_code_space() {
        let (q, codes) = column(&[0.0, 5.0, 15.0], 4);
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.zero_point, 0);
        assert_eq!(codes, vec![0, 5, 15]);
    }

    #[test]
    fn symmetric_column_two_bits() {
        // scale = 2/3, -1/scale = -1.5 -> zero_point 2
        let (q, codes) = column(&[-1.0, 0.0, 1.0], 2);
        assert!((q.scale - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(q.zero_point, 2);
        assert_eq!(codes, vec![0, 2, 3]);
        assert!((q.dequantize(3) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(q.dequantize(q.zero_point), 0.0);
    }

    #[test]
    fn constant_column_falls_back_to_unit_scale() {
        for bits in [1, 3, 8] {
            let (q, codes) = column(&[7.0, 7.0, 7.0], bits);
            assert_eq!(q.scale, 1.0);
            assert_eq!(q.zero_point, -7);
            assert_eq!(codes, vec![0, 0, 0]);
        }
    }

    #[test]
    fn out_of_range_inputs_clamp() {
        let (q, _) = column(&[0.0, 15.0], 4);
        assert_eq!(q.quantize(0.0).unwrap(), 0);
        assert_eq!(q.quantize(1e9).unwrap(), 15);
        assert_eq!(q.quantize(-1e300).unwrap(), 0);
        assert_eq!(q.quantize(f64::MAX).unwrap(), 15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(train_quantizer(&[], 4, Labels::Classes(vec![])).is_err());
        let x = vec![vec![1.0], vec![f64::NAN]];
        assert!(train_quantizer(&x, 4, Labels::Classes(vec![0, 1])).is_err());
        let q = QuantParams::from_range(0.0, 1.0, 4);
        assert!(q.quantize(f64::INFINITY).is_err());
        assert!(QuantParams::fit([1.0], 0).is_err());
    }

    #[test]
    fn binary_leaf_weights() {
        let (codes, q) = quantize_leaves(&[vec![0.0], vec![1.0]], 6).unwrap();
        assert!((q.scale - 1.0 / 63.0).abs() < 1e-15);
        assert_eq!(q.zero_point, 0);
        assert_eq!(codes, vec![vec![0], vec![63]]);
    }

    #[test]
    fn leaves_spanning_minus_two_to_two() {
        // scale = 4/63, 2/scale = 31.5 -> zero_point = ceil(31.5) = 32
        let (codes, q) = quantize_leaves(&[vec![-2.0, 0.5], vec![2.0, 0.0]], 6).unwrap();
        assert_eq!(q.zero_point, 32);
        assert_eq!(codes[0][0], 0);
        assert_eq!(codes[1][0], 63);
    }

    #[test]
    fn constant_and_empty_leaves() {
        let (codes, q) = quantize_leaves(&[vec![0.25, 0.25], vec![0.25]], 6).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(codes.iter().flatten().all(|&c| c == 0));
        assert!(quantize_leaves(&[], 6).is_err());
        assert!(quantize_leaves(&[vec![]], 6).is_err());
    }

    #[test]
    fn json_shape() {
        let q = QuantParams {
            scale: 0.5,
            zero_point: 3,
            bits: 6,
        };
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, r#"{"scale":0.5,"zero_point":3,"bits":6}"#);
    }

    proptest! {
        #[test]
        fn permuting_columns_permutes_params(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20),
            bits in 1u32..9,
        ) {
            let perm = [2usize, 0, 1];
            let shuffled: Vec<Vec<f64>> =
                rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
            let labels = Labels::Classes(vec![0; rows.len()]);
            let a = train_quantizer(&rows, bits, labels.clone()).unwrap();
            let b = train_quantizer(&shuffled, bits, labels).unwrap();
            for (k, &j) in perm.iter().enumerate() {
                prop_assert_eq!(b.per_feature_params[k], a.per_feature_params[j]);
            }
        }
    }
}
