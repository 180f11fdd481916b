//! Argument definitions and command bodies.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fhe_tree::analysis::{analyze, pbs_cost_estimate};
use fhe_tree::compiler::compile;
use fhe_tree::engine::{evaluate_batch_with, EvalOptions, NoiseModel, Prediction};
use fhe_tree::quantizer::{quantize_rows, train_quantizer, QuantParams};
use fhe_tree::trainer::{train, ModelKind, TrainConfig};
use fhe_tree::tree_ir::{Task, TreeEnsemble};

use crate::data::{load_dataset, parse_features, read_table};
use crate::error::{CliError, CliResult};
use crate::experiment::{sweep_bits, sweep_perror, ExperimentSpec};
use crate::SCHEMA_VERSION;

#[derive(Debug, Parser)]
#[command(name = "fhe-tree", version, about = "Quantize, compile and evaluate tree ensembles for encrypted inference")]
pub struct Cli {
    /// Worker threads (defaults to all cores); outputs do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a CSV dataset and write the per-feature parameters.
    Quantize(QuantizeArgs),
    /// Train a model on quantized features and write its tree IR.
    Train(TrainArgs),
    /// Compile a tree IR into its tensor bundle.
    Compile(CompileArgs),
    /// Report the bit-widths and table look-ups a model needs.
    Analyze(AnalyzeArgs),
    /// Run inference on a CSV of inputs.
    Infer(InferArgs),
    /// Cross-validated accuracy against input precision.
    SweepBits(SweepBitsArgs),
    /// Cross-validated accuracy against table look-up error rate.
    SweepPerror(SweepPerrorArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Dt,
    Rf,
    #[value(name = "xgb-like")]
    XgbLike,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Dt => ModelKind::DecisionTree,
            ModelArg::Rf => ModelKind::RandomForest,
            ModelArg::XgbLike => ModelKind::BoostedEnsemble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classification,
    Regression,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classification => Task::Classification,
            TaskArg::Regression => Task::Regression,
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label: String,
    #[arg(long, value_enum, default_value = "classification")]
    pub task: TaskArg,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "dt")]
    pub model: ModelArg,
    #[arg(long, default_value_t = 50)]
    pub n_estimators: usize,
    #[arg(long, default_value_t = 5)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub bits: u32,
    /// Output directory for `quantized.csv` and `quant_params.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub bits: u32,
    /// Tree IR JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    /// Tree IR JSON.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Expected input precision; defaults to the model's.
    #[arg(long)]
    pub bits: Option<u32>,
    /// JSON object mapping PBS input width to a relative cost.
    #[arg(long)]
    pub cost_table: Option<PathBuf>,
    /// JSON report output; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input CSV with a header row, one feature per column.
    #[arg(long)]
    pub input: PathBuf,
    /// Column to ignore (for example the label of a test set).
    #[arg(long)]
    pub label: Option<String>,
    /// Inputs are already integer codes; otherwise they are quantized with the model's parameters.
    #[arg(long)]
    pub quantized: bool,
    #[arg(long, default_value_t = 0.0)]
    pub p_error: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write per-row intermediate tensors to this JSON file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Predictions CSV; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Report CSV; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append rows to an existing report instead of overwriting it.
    #[arg(long)]
    pub append: bool,
}

#[derive(Debug, Args)]
pub struct SweepBitsArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,7,8")]
    pub bits: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct SweepPerrorArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[arg(long, default_value_t = 6)]
    pub bits: u32,
    #[arg(long, value_delimiter = ',', default_value = "0,1e-40,0.001,0.01,0.05,0.1")]
    pub p_error: Vec<f64>,
    /// Monte-Carlo noise seeds per error rate.
    #[arg(long, default_value_t = 20)]
    pub noise_seeds: usize,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Quantize(a) => cmd_quantize(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Compile(a) => cmd_compile(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::SweepBits(a) => cmd_sweep_bits(&a),
        Command::SweepPerror(a) => cmd_sweep_perror(&a),
    })
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_ir(path: &Path) -> CliResult<TreeEnsemble> {
    let ir = TreeEnsemble::from_json(&read_file(path)?)?;
    let problems = ir.validate();
    if !problems.is_empty() {
        return Err(CliError::Data(format!("invalid model: {}", problems.join("; "))));
    }
    Ok(ir)
}

#[derive(Serialize)]
struct QuantParamsFile<'a> {
    feature_names: &'a [String],
    params: &'a [QuantParams],
}

pub fn cmd_quantize(a: &QuantizeArgs) -> CliResult<()> {
    let d = load_dataset(&a.data.data, &a.data.label, a.data.task.into())?;
    let q = train_quantizer(&d.x, a.bits, d.labels.clone())?;
    let (header, raw_rows) = read_table(&a.data.data)?;
    let li = header.iter().position(|h| h == &a.data.label).unwrap_or(0);

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = d.feature_names.clone();
    head.push(a.data.label.clone());
    w.write_record(&head)?;
    for (codes, raw) in q.values.iter().zip(&raw_rows) {
        let mut rec: Vec<String> = codes.iter().map(i64::to_string).collect();
        rec.push(raw[li].clone());
        w.write_record(&rec)?;
    }
    let csv_bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    fs::create_dir_all(&a.out)?;
    write_file(&a.out.join("quantized.csv"), &String::from_utf8_lossy(&csv_bytes))?;
    let params = QuantParamsFile {
        feature_names: &d.feature_names,
        params: &q.per_feature_params,
    };
    write_file(&a.out.join("quant_params.json"), &serde_json::to_string_pretty(&params)?)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let d = load_dataset(&a.data.data, &a.data.label, a.data.task.into())?;
    let q = train_quantizer(&d.x, a.bits, d.labels)?;
    let cfg = TrainConfig::new(a.model.model.into(), a.model.max_depth, a.model.n_estimators, a.model.seed);
    let ir = train(&q, &cfg)?;
    write_file(&a.out, &ir.to_json())
}

pub fn cmd_compile(a: &CompileArgs) -> CliResult<()> {
    let bundle = compile(&load_ir(&a.model)?)?;
    write_file(&a.out, &bundle.to_json())
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let ir = load_ir(&a.model)?;
    let bundle = compile(&ir)?;
    let report = analyze(&bundle, a.bits.unwrap_or(ir.input_bits))?;
    let mut json = serde_json::to_value(&report)?;
    let mut table = report.to_table();
    if let Some(path) = &a.cost_table {
        let raw: BTreeMap<String, f64> = serde_json::from_str(&read_file(path)?)?;
        let costs = raw
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|w| (w, v))
                    .map_err(|_| CliError::Usage(format!("cost table key '{k}' is not a bit-width")))
            })
            .collect::<CliResult<BTreeMap<u32, f64>>>()?;
        let cost = pbs_cost_estimate(&report, &costs)?;
        json["pbs_cost_estimate"] = cost.into();
        table.push_str(&format!("pbs_cost_estimate  {cost}\n"));
    }
    print!("{table}");
    if let Some(out) = &a.out {
        write_file(out, &serde_json::to_string_pretty(&json)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceRow<'a> {
    row: usize,
    trace: &'a fhe_tree::engine::Trace,
}

pub fn cmd_infer(a: &InferArgs) -> CliResult<()> {
    let ir = load_ir(&a.model)?;
    let bundle = compile(&ir)?;
    let noise = NoiseModel::new(a.p_error, a.seed)?;
    let empty = fs::metadata(&a.input).map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?.len() == 0;
    let (header, rows) = if empty { (Vec::new(), Vec::new()) } else { read_table(&a.input)? };
    if rows.is_empty() {
        if let Some(p) = &a.trace {
            write_file(p, "[]")?;
        }
        return emit(a.out.as_deref(), "");
    }
    if let Some(l) = &a.label {
        if !header.contains(l) {
            return Err(CliError::Usage(format!("label column '{l}' not found")));
        }
    }
    let (_, x) = parse_features(&header, &rows, a.label.as_deref())?;
    let width = x.first().map_or(0, Vec::len);
    if width != ir.n_features {
        return Err(CliError::Data(format!(
            "input has {width} feature columns, model expects {}",
            ir.n_features
        )));
    }
    let x_q: Vec<Vec<i64>> = if a.quantized {
        let top = fhe_tree::quantizer::max_code(ir.input_bits);
        x.iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .map(|&v| {
                        if v.fract() != 0.0 {
                            Err(CliError::Data(format!("row {}: code {v} is not an integer", i + 1)))
                        } else {
                            Ok((v as i64).clamp(0, top))
                        }
                    })
                    .collect()
            })
            .collect::<CliResult<_>>()?
    } else {
        quantize_rows(&x, &ir.feature_quants)?
    };
    let opts = EvalOptions {
        trace: a.trace.is_some(),
        check_bounds: false,
    };
    let results = evaluate_batch_with(&bundle, &x_q, &noise, opts)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["schema_version".to_string(), "row".into(), "prediction".into()];
    head.extend((0..ir.n_outputs()).map(|c| format!("score_{c}")));
    head.push("tlu_failures".into());
    w.write_record(&head)?;
    for (i, r) in results.iter().enumerate() {
        let pred = match r.prediction {
            Prediction::Class(c) => c.to_string(),
            Prediction::Value(v) => v.to_string(),
        };
        let mut rec = vec![SCHEMA_VERSION.to_string(), i.to_string(), pred];
        rec.extend(r.dequantized_scores.iter().map(f64::to_string));
        rec.push(r.tlu_failures.to_string());
        w.write_record(&rec)?;
    }
    if let Some(p) = &a.trace {
        let rows: Vec<TraceRow> = results
            .iter()
            .enumerate()
            .filter_map(|(row, r)| r.trace.as_ref().map(|trace| TraceRow { row, trace }))
            .collect();
        write_file(p, &serde_json::to_string(&rows)?)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&bytes))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Write a report, keeping the existing header when appending.
fn emit_report(out: Option<&Path>, append: bool, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut buf = csv::Writer::from_writer(Vec::new());
    let existing = append && out.is_some_and(|p| fs::metadata(p).is_ok_and(|m| m.len() > 0));
    if existing {
        let (have, _) = read_table(out.unwrap())?;
        if have != header {
            return Err(CliError::Data("existing report has a different schema".into()));
        }
    } else {
        buf.write_record(header)?;
    }
    for r in rows {
        buf.write_record(r)?;
    }
    let bytes = buf.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    match out {
        Some(p) if existing => {
            let mut f = OpenOptions::new().append(true).open(p)?;
            f.write_all(&bytes)?;
            Ok(())
        }
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            File::create(p)?.write_all(&bytes)?;
            Ok(())
        }
        None => emit(None, &String::from_utf8_lossy(&bytes)),
    }
}

fn spec_of(s: &SweepArgs) -> ExperimentSpec {
    ExperimentSpec {
        model_kind: s.model.model.into(),
        n_estimators: s.model.n_estimators,
        max_depth: s.model.max_depth,
        folds: s.folds,
        repeats: s.repeats,
        seed: s.model.seed,
    }
}

pub const BITS_HEADER: [&str; 15] = [
    "schema_version",
    "bits",
    "model",
    "n_estimators",
    "max_depth",
    "folds",
    "repeats",
    "seed",
    "accuracy",
    "f1",
    "average_precision",
    "float_accuracy",
    "float_f1",
    "float_average_precision",
    "accuracy_gap",
];

pub fn cmd_sweep_bits(a: &SweepBitsArgs) -> CliResult<()> {
    let s = &a.sweep;
    let d = load_dataset(&s.data.data, &s.data.label, s.data.task.into())?;
    let spec = spec_of(s);
    let rows: Vec<Vec<String>> = sweep_bits(&d, &spec, &a.bits)?
        .into_iter()
        .map(|r| {
            vec![
                SCHEMA_VERSION.to_string(),
                r.bits.to_string(),
                r.model,
                spec.n_estimators.to_string(),
                spec.max_depth.to_string(),
                spec.folds.to_string(),
                spec.repeats.to_string(),
                spec.seed.to_string(),
                r.quantized.accuracy.to_string(),
                r.quantized.f1.to_string(),
                r.quantized.average_precision.to_string(),
                r.float.accuracy.to_string(),
                r.float.f1.to_string(),
                r.float.average_precision.to_string(),
                (r.quantized.accuracy - r.float.accuracy).to_string(),
            ]
        })
        .collect();
    emit_report(s.out.as_deref(), s.append, &BITS_HEADER, &rows)
}

pub const PERROR_HEADER: [&str; 13] = [
    "schema_version",
    "p_error",
    "bits",
    "model",
    "n_estimators",
    "max_depth",
    "seed",
    "noise_seeds",
    "accuracy",
    "accuracy_std",
    "noiseless_accuracy",
    "failure_rate",
    "mean_tlu_failures",
];

pub fn cmd_sweep_perror(a: &SweepPerrorArgs) -> CliResult<()> {
    let s = &a.sweep;
    let d = load_dataset(&s.data.data, &s.data.label, s.data.task.into())?;
    let spec = spec_of(s);
    let inferences = d.n_rows() * spec.repeats;
    let rows: Vec<Vec<String>> = sweep_perror(&d, &spec, a.bits, &a.p_error, a.noise_seeds)?
        .into_iter()
        .map(|r| {
            vec![
                SCHEMA_VERSION.to_string(),
                format!("{:?}", r.p_error),
                r.bits.to_string(),
                r.model.clone(),
                spec.n_estimators.to_string(),
                spec.max_depth.to_string(),
                spec.seed.to_string(),
                r.noise_seeds.to_string(),
                r.accuracy.to_string(),
                r.accuracy_std.to_string(),
                r.noiseless_accuracy.to_string(),
                r.failure_rate().to_string(),
                r.mean_failures_per_inference(inferences).to_string(),
            ]
        })
        .collect();
    emit_report(s.out.as_deref(), s.append, &PERROR_HEADER, &rows)
}
