//! The `woodpest` command line.
//!
//! Every subcommand writes its resolved configuration as one JSON line to
//! standard output before doing any work, and a JSON summary line when it
//! finishes. Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use woodpest::audio::{ClipLabel, CANONICAL_RATE};
use woodpest::dataset::{extract_dir, FeatureDump};
use woodpest::eval::{
    comparative_report, confusion_from_predictions, crossval_run, evaluate_predictions, fit_evaluate,
    metrics_from_confusion, stratified_split, Evaluation,
};
use woodpest::mfcc::FeatureConfig;
use woodpest::models::{self, kind_of, ModelKind, TrainConfig};
use woodpest::nn::{AdamConfig, Checkpoint};
use woodpest::synth::{gen_dataset, SynthConfig};
use woodpest_ingest::{
    query_store, serve, simulate_device, Classifier, ServeError, ServerConfig, SimConfig, SimError, SimSource,
    StoreFilter,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "woodpest", version, about = "Acoustic wood-pest detection: features, models, evaluation and sensor ingestion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic labeled dataset of WAV clips plus manifest.json
    GenSynth(GenSynthArgs),
    /// Turn a dataset directory of WAV clips into a JSON feature dump
    Extract(ExtractArgs),
    /// Train one architecture on an 80/20 split and save a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on a feature dump, or score a predictions CSV
    Evaluate(EvaluateArgs),
    /// Stratified k-fold cross-validation of one architecture
    Crossval(CrossvalArgs),
    /// Train all four architectures on one split and tabulate accuracy and F1
    Compare(CompareArgs),
    /// Run the TCP ingestion server
    Serve(ServeArgs),
    /// Stream a clip to a server as a simulated sensor
    SimulateDevice(SimulateArgs),
    /// Query the detection store
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynth(_) => "gen-synth",
            Command::Extract(_) => "extract",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Crossval(_) => "crossval",
            Command::Compare(_) => "compare",
            Command::Serve(_) => "serve",
            Command::SimulateDevice(_) => "simulate-device",
            Command::Report(_) => "report",
        }
    }

    fn config(&self) -> serde_json::Result<Value> {
        match self {
            Command::GenSynth(a) => serde_json::to_value(a),
            Command::Extract(a) => serde_json::to_value(a),
            Command::Train(a) => serde_json::to_value(a),
            Command::Evaluate(a) => serde_json::to_value(a),
            Command::Crossval(a) => serde_json::to_value(a),
            Command::Compare(a) => serde_json::to_value(a),
            Command::Serve(a) => serde_json::to_value(a),
            Command::SimulateDevice(a) => serde_json::to_value(a),
            Command::Report(a) => serde_json::to_value(a),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = CANONICAL_RATE)]
    pub sample_rate: u32,
    /// Clip length in seconds
    #[arg(long, default_value_t = 5.0)]
    pub duration: f64,
    /// Mean clicks per second in infested clips
    #[arg(long, default_value_t = 8.0)]
    pub click_rate: f64,
    #[arg(long, default_value_t = 3000.0)]
    pub band_low: f64,
    #[arg(long, default_value_t = 6000.0)]
    pub band_high: f64,
    /// Click decay time constant in seconds
    #[arg(long, default_value_t = 0.005)]
    pub decay: f64,
    /// Click-to-background energy ratio in dB
    #[arg(long, default_value_t = 10.0)]
    pub snr_db: f64,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            sample_rate: self.sample_rate,
            duration_s: self.duration,
            click_rate: self.click_rate,
            band_low_hz: self.band_low,
            band_high_hz: self.band_high,
            decay_s: self.decay,
            snr_db: self.snr_db,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

impl TrainingArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            shuffle: true,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenSynthArgs {
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Clips per class
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub synth: SynthArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExtractArgs {
    /// Dataset directory with clean/ and infested/ subdirectories
    #[arg(long)]
    pub data: PathBuf,
    /// Output feature dump (JSON)
    #[arg(long)]
    pub out: PathBuf,
    /// Every clip is padded or trimmed to this length
    #[arg(long, default_value_t = 5.0)]
    pub clip_seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    pub kind: ModelKind,
    /// Seeds both the split and training
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingArgs,
    /// Held-out fraction, also used for per-epoch validation
    #[arg(long, default_value_t = 0.2)]
    pub test_ratio: f64,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Training history JSON path
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, requires = "features", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// CSV with columns `true,predicted` (labels as clean/infested or 0/1)
    #[arg(long, required_unless_present = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Score only the held-out side of the split `train` uses for this seed
    #[arg(long, requires = "checkpoint")]
    pub holdout: bool,
    #[arg(long, default_value_t = 0.2)]
    pub test_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metric report JSON path
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub confusion_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_parser = parse_kind, default_value = "cnn_lstm")]
    pub kind: ModelKind,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingArgs,
    /// CV report JSON path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Seeds both the shared split and training
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingArgs,
    /// Receives comparison.{json,txt} and per-model checkpoints, histories and confusion CSVs
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON-lines detection store
    #[arg(long)]
    pub store: PathBuf,
    /// Keep every assembled clip as a WAV file here
    #[arg(long)]
    pub archive_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    pub clip_seconds: f64,
    /// Stop after this many records are stored
    #[arg(long)]
    pub max_records: Option<u64>,
    /// Stop after this many seconds
    #[arg(long)]
    pub max_seconds: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    /// Stream this WAV file instead of a synthetic clip
    #[arg(long, conflicts_with = "label")]
    pub wav: Option<PathBuf>,
    /// Class of the synthetic clip
    #[arg(long, default_value = "infested")]
    pub label: ClipLabel,
    /// Seed of the synthetic clip
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub synth: SynthArgs,
    #[arg(long, default_value_t = 1)]
    pub device_id: u64,
    #[arg(long, default_value_t = 2500)]
    pub frame_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub first_seq: u32,
    /// Pace frames at the audio rate
    #[arg(long)]
    pub realtime: bool,
    /// Also write the streamed audio to this WAV file
    #[arg(long)]
    pub local_dump: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub device_id: Option<u64>,
    /// Inclusive lower bound, RFC 3339
    #[arg(long)]
    pub since: Option<DateTime<Utc>>,
    /// Exclusive upper bound, RFC 3339
    #[arg(long)]
    pub until: Option<DateTime<Utc>>,
    #[arg(long)]
    pub label: Option<ClipLabel>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: woodpest::Error| e.to_string())
}

/// A failure mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
        }
    }

    fn data(context: impl Display, e: impl Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }

    fn runtime(context: impl Display, e: impl Display) -> Self {
        CliError::Runtime(format!("{context}: {e}"))
    }
}

fn is_data_error(e: &woodpest::Error) -> bool {
    use woodpest::Error as E;
    match e {
        E::Format(_) | E::UnsupportedFormat(_) | E::InvalidDataset(_) | E::Checkpoint(_) | E::Json(_) => true,
        E::Fold { source, .. } => is_data_error(source),
        _ => false,
    }
}

impl From<woodpest::Error> for CliError {
    fn from(e: woodpest::Error) -> Self {
        match &e {
            woodpest::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ if is_data_error(&e) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Model(inner) => CliError::data("model", inner),
            ServeError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Source(inner) if matches!(inner, woodpest::Error::InvalidArgument(_)) => CliError::Usage(inner.to_string()),
            SimError::Source(inner) => CliError::data("source", inner),
            SimError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            }
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn emit(out: &mut dyn Write, value: &Value) -> CliResult<()> {
    writeln!(out, "{value}").and_then(|_| out.flush()).map_err(|e| CliError::runtime("stdout", e))
}

/// Echoes the configuration, runs the command and prints its summary.
pub fn execute(command: &Command, out: &mut dyn Write) -> CliResult<()> {
    let name = command.name();
    let config = command.config().map_err(|e| CliError::runtime("config", e))?;
    emit(out, &json!({ "command": name, "config": config }))?;
    let summary = match command {
        Command::GenSynth(a) => gen_synth(a)?,
        Command::Extract(a) => extract(a)?,
        Command::Train(a) => train(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Crossval(a) => crossval(a)?,
        Command::Compare(a) => compare(a)?,
        Command::Serve(a) => run_server(a, out)?,
        Command::SimulateDevice(a) => simulate(a)?,
        Command::Report(a) => report(a, out)?,
    };
    emit(out, &json!({ "command": name, "summary": summary }))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::runtime(parent.display(), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::runtime(path.display(), e))
}

fn to_json_pretty<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::runtime("json", e))?;
    v.push(b'\n');
    Ok(v)
}

fn load_dump(path: &Path) -> CliResult<FeatureDump> {
    FeatureDump::load(path).map_err(|e| CliError::data(path.display(), e))
}

fn gen_synth(a: &GenSynthArgs) -> CliResult<Value> {
    let manifest = gen_dataset(&a.out, a.n, &a.synth.config(), a.seed)?;
    Ok(json!({
        "out": a.out,
        "clips": manifest.clips.len(),
        "n_per_class": manifest.n_per_class,
        "master_seed": manifest.master_seed,
    }))
}

fn extract(a: &ExtractArgs) -> CliResult<Value> {
    if !(a.clip_seconds > 0.0 && a.clip_seconds.is_finite()) {
        return Err(CliError::Usage(format!("clip length must be positive, got {}", a.clip_seconds)));
    }
    let samples = (a.clip_seconds * CANONICAL_RATE as f64).round() as usize;
    let dump = extract_dir(&a.data, &FeatureConfig::default(), CANONICAL_RATE, samples).map_err(|e| match e {
        woodpest::Error::Io(io) => CliError::data(a.data.display(), io),
        other => other.into(),
    })?;
    dump.save(&a.out).map_err(|e| CliError::runtime(a.out.display(), e))?;
    let first = &dump.items[0].matrix;
    Ok(json!({
        "out": a.out,
        "clips": dump.items.len(),
        "clean": dump.count(ClipLabel::Clean),
        "infested": dump.count(ClipLabel::Infested),
        "frames": first.n_frames,
        "coefficients": first.n_coeffs,
    }))
}

fn checkpoint_for(model: &woodpest::eval::FittedModel, dump: &FeatureDump) -> CliResult<Checkpoint> {
    Ok(Checkpoint::new(&model.graph, &model.params, model.seed)?.with_features(dump.feature_config.clone(), model.stats.clone()))
}

fn train(a: &TrainArgs) -> CliResult<Value> {
    let cfg = a.training.config(a.seed);
    cfg.validate()?;
    let dump = load_dump(&a.features)?;
    let split = stratified_split(&dump.labels(), a.test_ratio, a.seed)?;
    let (model, ev) = fit_evaluate(a.kind, &dump, &split, &cfg)?;
    checkpoint_for(&model, &dump)?.save(&a.out).map_err(|e| CliError::runtime(a.out.display(), e))?;
    if let Some(path) = &a.history {
        write_file(path, to_json_pretty(&model.history)?)?;
    }
    Ok(json!({
        "kind": a.kind,
        "checkpoint": a.out,
        "train_size": split.train.len(),
        "test_size": split.test.len(),
        "epochs": model.history.train_loss.len(),
        "final_train_loss": model.history.train_loss.last(),
        "final_train_accuracy": model.history.train_accuracy.last(),
        "test": ev,
    }))
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    #[serde(rename = "true")]
    truth: String,
    predicted: String,
}

/// Reads a `true,predicted` CSV.
pub fn read_prediction_csv(path: &Path) -> CliResult<(Vec<ClipLabel>, Vec<ClipLabel>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| CliError::data(path.display(), e))?;
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    for (i, row) in reader.deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| CliError::data(path.display(), e))?;
        let parse = |s: &str| s.parse::<ClipLabel>().map_err(|e| CliError::data(format!("{} row {}", path.display(), i + 1), e));
        truth.push(parse(&row.truth)?);
        predicted.push(parse(&row.predicted)?);
    }
    if truth.is_empty() {
        return Err(CliError::Data(format!("{}: no predictions", path.display())));
    }
    Ok((truth, predicted))
}

fn evaluate_checkpoint(a: &EvaluateArgs, ckpt_path: &Path, features: &Path) -> CliResult<(Evaluation, Vec<f64>)> {
    let ckpt = Checkpoint::load(ckpt_path).map_err(|e| CliError::data(ckpt_path.display(), e))?;
    let dump = load_dump(features)?;
    let (Some(fc), Some(stats)) = (&ckpt.header.feature_config, &ckpt.header.standardize) else {
        return Err(CliError::Data(format!("{}: checkpoint carries no feature configuration", ckpt_path.display())));
    };
    if *fc != dump.feature_config {
        return Err(CliError::Data("feature dump was extracted with different settings than the checkpoint".into()));
    }
    let graph = ckpt.graph().map_err(|e| CliError::data(ckpt_path.display(), e))?;
    let kind = kind_of(&graph).map_err(|e| CliError::data(ckpt_path.display(), e))?;
    let idx: Vec<usize> = if a.holdout {
        stratified_split(&dump.labels(), a.test_ratio, a.seed)?.test
    } else {
        (0..dump.items.len()).collect()
    };
    let matrices: Vec<_> = idx.iter().map(|&i| &dump.items[i].matrix).collect();
    let labels: Vec<ClipLabel> = idx.iter().map(|&i| dump.items[i].label).collect();
    let set = models::prepare_features(kind, &matrices, &labels, stats).map_err(|e| CliError::data(features.display(), e))?;
    let predictions = models::predict_set(&graph, &ckpt.params_as::<f64>(), &set)?;
    let ev = evaluate_predictions(&labels, &predictions)?;
    Ok((ev, predictions.iter().map(|p| p.p_infested()).collect()))
}

fn evaluate(a: &EvaluateArgs) -> CliResult<Value> {
    let ev = match (&a.checkpoint, &a.features, &a.predictions) {
        (Some(ckpt), Some(features), None) => evaluate_checkpoint(a, ckpt, features)?.0,
        (None, _, Some(csv)) => {
            let (truth, predicted) = read_prediction_csv(csv)?;
            let confusion = confusion_from_predictions(&truth, &predicted).map_err(|e| CliError::data(csv.display(), e))?;
            Evaluation { metrics: metrics_from_confusion(&confusion)?, confusion }
        }
        _ => return Err(CliError::Usage("give --checkpoint with --features, or --predictions".into())),
    };
    if let Some(path) = &a.out {
        write_file(path, to_json_pretty(&ev)?)?;
    }
    if let Some(path) = &a.confusion_csv {
        write_file(path, ev.confusion.to_csv())?;
    }
    Ok(json!({
        "accuracy": ev.metrics.accuracy,
        "precision": ev.metrics.precision,
        "recall": ev.metrics.recall,
        "f1": ev.metrics.f1,
        "confusion": ev.confusion,
    }))
}

fn crossval(a: &CrossvalArgs) -> CliResult<Value> {
    let cfg = a.training.config(a.seed);
    cfg.validate()?;
    let dump = load_dump(&a.features)?;
    let report = crossval_run(a.kind, &dump, a.k, a.seed, &cfg)?;
    log::info!("\n{}", report.to_text());
    if let Some(path) = &a.out {
        write_file(path, to_json_pretty(&report)?)?;
    }
    let accuracies: Vec<f64> = report.folds.iter().map(|f| f.metrics.accuracy).collect();
    Ok(json!({
        "kind": report.model,
        "k": report.k,
        "fold_accuracy": accuracies,
        "mean_accuracy": report.mean_accuracy,
        "std_accuracy": report.std_accuracy,
    }))
}

/// File names written by `compare` for one architecture.
pub fn compare_artifacts(kind: ModelKind) -> [String; 3] {
    [format!("{kind}.wpck"), format!("{kind}_history.json"), format!("{kind}_confusion.csv")]
}

fn compare(a: &CompareArgs) -> CliResult<Value> {
    let cfg = a.training.config(a.seed);
    cfg.validate()?;
    let dump = load_dump(&a.features)?;
    let run = comparative_report(&dump, a.seed, &cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::runtime(a.out_dir.display(), e))?;
    for (model, row) in run.models.iter().zip(&run.report.rows) {
        let [ckpt, history, confusion] = compare_artifacts(model.kind);
        checkpoint_for(model, &dump)?.save(a.out_dir.join(&ckpt)).map_err(|e| CliError::runtime(&ckpt, e))?;
        write_file(&a.out_dir.join(history), to_json_pretty(&model.history)?)?;
        write_file(&a.out_dir.join(confusion), row.confusion.to_csv())?;
    }
    let table = run.report.to_text();
    write_file(&a.out_dir.join("comparison.json"), to_json_pretty(&run.report)?)?;
    write_file(&a.out_dir.join("comparison.txt"), &table)?;
    log::info!("\n{table}");
    let rows: Vec<Value> = run
        .report
        .rows
        .iter()
        .map(|r| json!({ "model": r.model, "name": r.name, "accuracy": r.accuracy, "f1": r.f1 }))
        .collect();
    Ok(json!({
        "out_dir": a.out_dir,
        "train_size": run.report.train_size,
        "test_size": run.report.test_size,
        "rows": rows,
    }))
}

fn run_server(a: &ServeArgs, out: &mut dyn Write) -> CliResult<Value> {
    if let Some(s) = a.max_seconds {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(CliError::Usage(format!("--max-seconds must be a non-negative number, got {s}")));
        }
    }
    let classifier = Classifier::load(&a.checkpoint).map_err(|e| CliError::data(a.checkpoint.display(), e))?;
    let config = ServerConfig {
        bind: format!("{}:{}", a.host, a.port),
        store: a.store.clone(),
        archive_dir: a.archive_dir.clone(),
        clip_seconds: a.clip_seconds,
    };
    let handle = serve(config, Arc::new(classifier))?;
    emit(out, &json!({ "listening": handle.local_addr().to_string() }))?;
    let deadline = a.max_seconds.map(|s| Instant::now() + Duration::from_secs_f64(s));
    loop {
        if a.max_records.is_some_and(|n| handle.stats().records_written >= n) {
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        thread::sleep(Duration::from_millis(20));
    }
    let stats = handle.shutdown()?;
    Ok(serde_json::to_value(stats).map_err(|e| CliError::runtime("stats", e))?)
}

fn simulate(a: &SimulateArgs) -> CliResult<Value> {
    let source = match &a.wav {
        Some(path) => SimSource::Wav { path: path.clone() },
        None => SimSource::Synth { config: a.synth.config(), label: a.label, seed: a.seed },
    };
    let cfg = SimConfig {
        addr: format!("{}:{}", a.host, a.port),
        device_id: a.device_id,
        frame_samples: a.frame_samples,
        realtime: a.realtime,
        local_dump: a.local_dump.clone(),
        first_seq: a.first_seq,
    };
    let frames = simulate_device(&cfg, &source)?;
    Ok(json!({ "device_id": a.device_id, "frames_sent": frames, "addr": cfg.addr }))
}

fn report(a: &ReportArgs, out: &mut dyn Write) -> CliResult<Value> {
    let filter = StoreFilter { device_id: a.device_id, since: a.since, until: a.until, label: a.label };
    let result = query_store(&a.store, &filter).map_err(|e| CliError::data(a.store.display(), e))?;
    for r in &result.records {
        emit(out, &serde_json::to_value(r).map_err(|e| CliError::runtime("record", e))?)?;
    }
    let infested = result.records.iter().filter(|r| r.label == ClipLabel::Infested).count();
    let mut devices: Vec<u64> = result.records.iter().map(|r| r.device_id).collect();
    devices.sort_unstable();
    devices.dedup();
    Ok(json!({
        "records": result.records.len(),
        "infested": infested,
        "clean": result.records.len() - infested,
        "devices": devices,
        "skipped_lines": result.skipped,
    }))
}
