//! Cross-validation splits and evaluation metrics.

use fhe_tree::quantizer::Labels;
use fhe_tree::rng::{mix64, KeyedStream};

/// Train and test row indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffle(v: &mut [usize], rng: &mut KeyedStream) {
    for i in (1..v.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        v.swap(i, j);
    }
}

/// Seeded shuffle, then contiguous folds; classes are split separately so
/// every fold keeps the class proportions.
pub fn stratified_folds(labels: &Labels, folds: usize, repeats: usize, seed: u64) -> Vec<Fold> {
    let n = labels.len();
    let groups: Vec<Vec<usize>> = match labels {
        Labels::Classes(c) => {
            let k = c.iter().max().map_or(0, |m| m + 1);
            (0..k)
                .map(|cls| (0..n).filter(|&i| c[i] == cls).collect())
                .collect()
        }
        Labels::Targets(_) => vec![(0..n).collect()],
    };
    let mut out = Vec::with_capacity(folds * repeats);
    for r in 0..repeats {
        let mut rng = KeyedStream::new(mix64(seed, r as u64), &[]);
        let mut assignment = vec![0usize; n];
        for g in &groups {
            let mut g = g.clone();
            shuffle(&mut g, &mut rng);
            for (pos, &i) in g.iter().enumerate() {
                assignment[i] = pos * folds / g.len();
            }
        }
        for f in 0..folds {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignment[i] == f);
            out.push(Fold {
                repeat: r,
                fold: f,
                train,
                test,
            });
        }
    }
    out
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// F1 of class 1.
pub fn binary_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == 1 && p == 1).count() as f64;
    let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != 1 && p == 1).count() as f64;
    let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == 1 && p != 1).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

/// Average precision of class 1 ranked by `score`: sum over distinct score
/// thresholds of `(R_n - R_{n-1}) * P_n`.
pub fn average_precision(truth: &[usize], score: &[f64]) -> f64 {
    let positives = truth.iter().filter(|&&t| t == 1).count();
    if positives == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = score[order[i]];
        while i < order.len() && score[order[i]] == s {
            tp += (truth[order[i]] == 1) as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_rows_and_stratify() {
        let c: Vec<usize> = (0..103).map(|i| (i % 3 == 0) as usize).collect();
        let labels = Labels::Classes(c.clone());
        let folds = stratified_folds(&labels, 5, 2, 9);
        assert_eq!(folds.len(), 10);
        for r in 0..2 {
            let mut all: Vec<usize> = folds
                .iter()
                .filter(|f| f.repeat == r)
                .flat_map(|f| f.test.clone())
                .collect();
            all.sort();
            assert_eq!(all, (0..103).collect::<Vec<_>>());
        }
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), 103);
            let pos = f.test.iter().filter(|&&i| c[i] == 1).count();
            assert!((6..=7).contains(&pos), "{pos}");
        }
        assert_ne!(folds[0].test, folds[5].test);
        assert_eq!(folds, stratified_folds(&labels, 5, 2, 9));
    }

    #[test]
    fn metric_values() {
        let t = [1, 0, 1, 1, 0];
        let p = [1, 0, 0, 1, 1];
        assert_eq!(accuracy(&t, &p), 0.6);
        // tp=2 fp=1 fn=1
        assert!((binary_f1(&t, &p) - 4.0 / 6.0).abs() < 1e-12);
        // ranking 1,1,0,1,0 -> (1/3)(1) + (1/3)(1) + (1/3)(3/4)
        let t = [1, 1, 0, 1, 0];
        let s = [0.9, 0.8, 0.7, 0.6, 0.1];
        assert!((average_precision(&t, &s) - (2.0 + 0.75) / 3.0).abs() < 1e-12);
        // a single tied group scores the base rate
        assert!((average_precision(&t, &[0.5; 5]) - 0.6).abs() < 1e-12);
    }
}
