//! Cross-validated bit-width and PBS-error sweeps.

use rayon::prelude::*;
use serde::Serialize;

use fhe_tree::compiler::{compile, TensorBundle};
use fhe_tree::engine::{evaluate_batch, NoiseModel, Prediction, PredictionResult};
use fhe_tree::quantizer::{quantize_rows, train_quantizer, Labels};
use fhe_tree::rng::mix64;
use fhe_tree::trainer::{train, train_float, ModelKind, TrainConfig};

use crate::cv::{accuracy, average_precision, binary_f1, stratified_folds, Fold};
use crate::data::Dataset;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentSpec {
    pub model_kind: ModelKind,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    fn check(&self, data: &Dataset) -> CliResult<()> {
        if self.folds < 2 {
            return Err(CliError::Usage(format!("--folds must be at least 2, got {}", self.folds)));
        }
        if self.repeats == 0 {
            return Err(CliError::Usage("--repeats must be at least 1".into()));
        }
        if !matches!(data.labels, Labels::Classes(_)) {
            return Err(CliError::Usage("sweeps need a classification dataset".into()));
        }
        if data.n_rows() < self.folds {
            return Err(CliError::Data(format!("{} rows cannot fill {} folds", data.n_rows(), self.folds)));
        }
        Ok(())
    }

    fn train_config(&self, fold: &Fold) -> TrainConfig {
        let key = (fold.repeat * self.folds + fold.fold) as u64;
        TrainConfig::new(self.model_kind, self.max_depth, self.n_estimators, mix64(self.seed, key))
    }

    fn folds(&self, data: &Dataset) -> Vec<Fold> {
        stratified_folds(&data.labels, self.folds, self.repeats, self.seed)
    }
}

/// Metrics of one model on one test fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub average_precision: f64,
}

impl Metrics {
    fn of(truth: &[usize], pred: &[usize], score: &[f64]) -> Self {
        Self {
            accuracy: accuracy(truth, pred),
            f1: binary_f1(truth, pred),
            average_precision: average_precision(truth, score),
        }
    }

    pub fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len().max(1) as f64;
        Metrics {
            accuracy: all.iter().map(|m| m.accuracy).sum::<f64>() / n,
            f1: all.iter().map(|m| m.f1).sum::<f64>() / n,
            average_precision: all.iter().map(|m| m.average_precision).sum::<f64>() / n,
        }
    }
}

fn classes(labels: &Labels) -> &[usize] {
    match labels {
        Labels::Classes(c) => c,
        Labels::Targets(_) => &[],
    }
}

/// Positive-class margin for binary tasks, top score otherwise.
fn rank_score(scores: &[f64]) -> f64 {
    match scores {
        [a, b] => b - a,
        _ => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn predicted_class(r: &PredictionResult) -> usize {
    match r.prediction {
        Prediction::Class(c) => c,
        Prediction::Value(_) => 0,
    }
}

fn rows(x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| x[i].clone()).collect()
}

/// Model trained and compiled on a fold's training rows, plus its quantized test rows.
pub struct CompiledFold {
    pub bundle: TensorBundle,
    pub test_q: Vec<Vec<i64>>,
    pub truth: Vec<usize>,
}

pub fn compile_fold(data: &Dataset, fold: &Fold, bits: u32, cfg: &TrainConfig) -> CliResult<CompiledFold> {
    let q = train_quantizer(&rows(&data.x, &fold.train), bits, data.labels.select(&fold.train))?;
    let ensemble = train(&q, cfg)?;
    let bundle = compile(&ensemble)?;
    let test_q = quantize_rows(&rows(&data.x, &fold.test), &q.per_feature_params)?;
    let truth = classes(&data.labels.select(&fold.test)).to_vec();
    Ok(CompiledFold { bundle, test_q, truth })
}

fn score_results(truth: &[usize], res: &[PredictionResult]) -> Metrics {
    let pred: Vec<usize> = res.iter().map(predicted_class).collect();
    let score: Vec<f64> = res.iter().map(|r| rank_score(&r.dequantized_scores)).collect();
    Metrics::of(truth, &pred, &score)
}

fn float_metrics(data: &Dataset, fold: &Fold, cfg: &TrainConfig) -> CliResult<Metrics> {
    let forest = train_float(&rows(&data.x, &fold.train), &data.labels.select(&fold.train), cfg)?;
    let test = rows(&data.x, &fold.test);
    let truth = classes(&data.labels.select(&fold.test)).to_vec();
    let scores: Vec<Vec<f64>> = test.iter().map(|x| forest.scores(x)).collect();
    let pred: Vec<usize> = test.iter().map(|x| forest.predict_class(x)).collect();
    let score: Vec<f64> = scores.iter().map(|s| rank_score(s)).collect();
    Ok(Metrics::of(&truth, &pred, &score))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BitsRow {
    pub bits: u32,
    pub model: String,
    pub quantized: Metrics,
    pub float: Metrics,
    /// Per-fold quantized accuracy minus float accuracy.
    pub fold_accuracy_gaps: Vec<f64>,
}

fn model_name(kind: ModelKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Quantized versus float metrics, averaged over all folds, for each bit-width.
pub fn sweep_bits(data: &Dataset, spec: &ExperimentSpec, bits: &[u32]) -> CliResult<Vec<BitsRow>> {
    spec.check(data)?;
    let folds = spec.folds(data);
    let float: Vec<Metrics> = folds
        .par_iter()
        .map(|f| float_metrics(data, f, &spec.train_config(f)))
        .collect::<CliResult<_>>()?;
    let jobs: Vec<(u32, &Fold)> = bits.iter().flat_map(|&b| folds.iter().map(move |f| (b, f))).collect();
    let quant: Vec<Metrics> = jobs
        .par_iter()
        .map(|&(b, f)| {
            let c = compile_fold(data, f, b, &spec.train_config(f))?;
            let res = evaluate_batch(&c.bundle, &c.test_q, &NoiseModel::noiseless())?;
            Ok(score_results(&c.truth, &res))
        })
        .collect::<CliResult<_>>()?;
    Ok(bits
        .iter()
        .zip(quant.chunks(folds.len()))
        .map(|(&b, q)| BitsRow {
            bits: b,
            model: model_name(spec.model_kind),
            quantized: Metrics::mean(q),
            float: Metrics::mean(&float),
            fold_accuracy_gaps: q.iter().zip(&float).map(|(a, f)| a.accuracy - f.accuracy).collect(),
        })
        .collect())
}

/// Correct predictions and total predictions.
fn hits(truth: &[usize], res: &[PredictionResult]) -> (u64, u64) {
    let correct = truth.iter().zip(res).filter(|(&t, r)| predicted_class(r) == t).count();
    (correct as u64, truth.len() as u64)
}

fn pooled(counts: &[(u64, u64)]) -> f64 {
    let (c, n) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    c as f64 / n.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerrorRow {
    pub p_error: f64,
    pub bits: u32,
    pub model: String,
    /// Correct predictions over all noise seeds and test folds.
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub noiseless_accuracy: f64,
    pub noise_seeds: usize,
    pub tlu_applications: u64,
    pub tlu_failures: u64,
}

impl PerrorRow {
    pub fn failure_rate(&self) -> f64 {
        if self.tlu_applications == 0 {
            0.0
        } else {
            self.tlu_failures as f64 / self.tlu_applications as f64
        }
    }

    pub fn mean_failures_per_inference(&self, n_inferences: usize) -> f64 {
        self.tlu_failures as f64 / (n_inferences.max(1) * self.noise_seeds.max(1)) as f64
    }
}

/// Accuracy of fixed-precision models under simulated PBS failures.
///
/// Each fold's model is trained once; noise seed `s` of error rate `p_error`
/// draws from `mix64(seed, s)` so seeds are shared across error rates.
pub fn sweep_perror(
    data: &Dataset,
    spec: &ExperimentSpec,
    bits: u32,
    p_errors: &[f64],
    noise_seeds: usize,
) -> CliResult<Vec<PerrorRow>> {
    spec.check(data)?;
    if noise_seeds == 0 {
        return Err(CliError::Usage("need at least one noise seed".into()));
    }
    for &p in p_errors {
        NoiseModel::new(p, 0)?;
    }
    let folds = spec.folds(data);
    let compiled: Vec<CompiledFold> = folds
        .par_iter()
        .map(|f| compile_fold(data, f, bits, &spec.train_config(f)))
        .collect::<CliResult<_>>()?;
    let clean: Vec<(u64, u64)> = compiled
        .par_iter()
        .map(|c| Ok(hits(&c.truth, &evaluate_batch(&c.bundle, &c.test_q, &NoiseModel::noiseless())?)))
        .collect::<CliResult<_>>()?;
    let noiseless_accuracy = pooled(&clean);

    p_errors
        .iter()
        .map(|&p| {
            let jobs: Vec<(usize, usize)> = (0..noise_seeds)
                .flat_map(|s| (0..compiled.len()).map(move |f| (s, f)))
                .collect();
            let per_job: Vec<((u64, u64), u64, u64)> = jobs
                .par_iter()
                .map(|&(s, f)| {
                    let noise = NoiseModel::new(p, mix64(spec.seed ^ 0x5eed, (s * compiled.len() + f) as u64))?;
                    let c = &compiled[f];
                    let res = evaluate_batch(&c.bundle, &c.test_q, &noise)?;
                    let acc = hits(&c.truth, &res);
                    let apps = res.iter().map(|r| r.tlu_applications).sum();
                    let fails = res.iter().map(|r| r.tlu_failures).sum();
                    Ok((acc, apps, fails))
                })
                .collect::<CliResult<_>>()?;
            let counts: Vec<(u64, u64)> = per_job.iter().map(|j| j.0).collect();
            let seed_acc: Vec<f64> = counts.chunks(compiled.len()).map(pooled).collect();
            let mean = pooled(&counts);
            let var = seed_acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / seed_acc.len() as f64;
            Ok(PerrorRow {
                p_error: p,
                bits,
                model: model_name(spec.model_kind),
                accuracy: mean,
                accuracy_std: var.sqrt(),
                noiseless_accuracy,
                noise_seeds,
                tlu_applications: per_job.iter().map(|j| j.1).sum(),
                tlu_failures: per_job.iter().map(|j| j.2).sum(),
            })
        })
        .collect()
}
