//! Splits, cross-validation, metrics and comparison tables.
//!
//! Infested is the positive class throughout.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::ClipLabel;
use crate::dataset::FeatureDump;
use crate::error::{Error, Result};
use crate::mfcc::{fit_standardize, MfccMatrix, StandardizeStats};
use crate::models::{self, build_model, ModelKind, Prediction, TrainConfig, TrainHistory};
use crate::nn::{ModelGraph, ParamSet};
use crate::seed::derive_seed;

/// Train/test index sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_indices(labels: &[ClipLabel], seed: u64) -> [Vec<usize>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ClipLabel::ALL.map(|label| {
        let mut idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == label).map(|(i, _)| i).collect();
        idx.shuffle(&mut rng);
        idx
    })
}

/// Per class, `round_half_up(count * ratio)` (at least one) shuffled indices go to test.
pub fn stratified_split(labels: &[ClipLabel], ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("test ratio must lie in (0, 1), got {ratio}")));
    }
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for (label, idx) in ClipLabel::ALL.iter().zip(class_indices(labels, seed)) {
        if idx.is_empty() {
            return Err(Error::InvalidDataset(format!("class {label} has no samples")));
        }
        let n_test = ((idx.len() as f64 * ratio + 0.5).floor() as usize).clamp(1, idx.len());
        split.test.extend_from_slice(&idx[..n_test]);
        split.train.extend_from_slice(&idx[n_test..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Stratified k-fold: each class is shuffled and cut into `k` contiguous chunks
/// whose sizes differ by at most one (larger chunks first); fold `f` tests on
/// chunk `f` of every class.
pub fn kfold_indices(labels: &[ClipLabel], k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    let per_class = class_indices(labels, seed);
    for (label, idx) in ClipLabel::ALL.iter().zip(&per_class) {
        if idx.len() < k {
            return Err(Error::InvalidDataset(format!("class {label} has {} samples, fewer than k = {k}", idx.len())));
        }
    }
    let mut tests = vec![Vec::new(); k];
    for idx in &per_class {
        let (base, extra) = (idx.len() / k, idx.len() % k);
        let mut start = 0;
        for (f, test) in tests.iter_mut().enumerate() {
            let len = base + usize::from(f < extra);
            test.extend_from_slice(&idx[start..start + len]);
            start += len;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..labels.len()).filter(|i| test.binary_search(i).is_err()).collect();
            Split { train, test }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// 2x2 CSV with true classes as rows and predicted classes as columns.
    pub fn to_csv(&self) -> String {
        format!(
            "true\\predicted,clean,infested\nclean,{},{}\ninfested,{},{}\n",
            self.tn, self.fp, self.fn_, self.tp
        )
    }
}

pub fn confusion_from_predictions(truth: &[ClipLabel], predicted: &[ClipLabel]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let mut m = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t, p) {
            (ClipLabel::Infested, ClipLabel::Infested) => m.tp += 1,
            (ClipLabel::Infested, ClipLabel::Clean) => m.fn_ += 1,
            (ClipLabel::Clean, ClipLabel::Infested) => m.fp += 1,
            (ClipLabel::Clean, ClipLabel::Clean) => m.tn += 1,
        }
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Standard metrics; a ratio with a zero denominator is defined as 0.
pub fn metrics_from_confusion(m: &ConfusionMatrix) -> Result<MetricReport> {
    if m.total() == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(m.tp, m.tp + m.fp);
    let recall = ratio(m.tp, m.tp + m.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(MetricReport { accuracy: ratio(m.tp + m.tn, m.total()), precision, recall, f1 })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// A trained model with the statistics used to standardize its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub graph: ModelGraph,
    pub params: ParamSet<f64>,
    pub stats: StandardizeStats<f64>,
    pub history: TrainHistory,
    pub seed: u64,
}

impl FittedModel {
    pub fn predict_matrices(&self, matrices: &[&MfccMatrix<f64>]) -> Result<Vec<Prediction>> {
        let labels = vec![ClipLabel::Clean; matrices.len()];
        let set = models::prepare_features(self.kind, matrices, &labels, &self.stats)?;
        models::predict_set(&self.graph, &self.params, &set)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
}

pub fn evaluate_predictions(truth: &[ClipLabel], predictions: &[Prediction]) -> Result<Evaluation> {
    let predicted: Vec<ClipLabel> = predictions.iter().map(|p| p.label).collect();
    let confusion = confusion_from_predictions(truth, &predicted)?;
    Ok(Evaluation { metrics: metrics_from_confusion(&confusion)?, confusion })
}

fn pick<'a>(dump: &'a FeatureDump, idx: &[usize]) -> (Vec<&'a MfccMatrix<f64>>, Vec<ClipLabel>) {
    idx.iter().map(|&i| (&dump.items[i].matrix, dump.items[i].label)).unzip()
}

/// Trains `kind` on the train indices (standardization fit there only) and
/// scores it on the test indices, which also serve as per-epoch validation.
pub fn fit_evaluate(kind: ModelKind, dump: &FeatureDump, split: &Split, cfg: &TrainConfig) -> Result<(FittedModel, Evaluation)> {
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidDataset("split has an empty side".into()));
    }
    let (train_m, train_y) = pick(dump, &split.train);
    let (test_m, test_y) = pick(dump, &split.test);
    let stats = fit_standardize(&train_m)?;
    let train_set = models::prepare_features(kind, &train_m, &train_y, &stats)?;
    let test_set = models::prepare_features(kind, &test_m, &test_y, &stats)?;
    let graph = build_model(kind);
    let trained = models::train(&graph, &train_set, Some(&test_set), cfg)?;
    let predictions = models::predict_set(&graph, &trained.params, &test_set)?;
    let evaluation = evaluate_predictions(&test_y, &predictions)?;
    let model = FittedModel { kind, graph, params: trained.params, stats, history: trained.history, seed: cfg.seed };
    Ok((model, evaluation))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelKind,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation (divisor k).
    pub std_accuracy: f64,
}

impl CvReport {
    pub fn from_folds(model: ModelKind, seed: u64, folds: Vec<FoldResult>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.metrics.accuracy).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        Self { model, k: folds.len(), seed, folds, mean_accuracy, std_accuracy }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}-fold cross-validation\n", self.model.display_name(), self.k);
        let _ = writeln!(s, "{:<6} {:>9} {:>9} {:>9} {:>9}", "Fold", "Accuracy", "Precision", "Recall", "F1");
        for f in &self.folds {
            let m = &f.metrics;
            let _ = writeln!(s, "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", f.fold + 1, m.accuracy, m.precision, m.recall, m.f1);
        }
        let _ = writeln!(s, "mean accuracy {:.4}, std {:.4}", self.mean_accuracy, self.std_accuracy);
        s
    }
}

/// One fresh model per fold; fold `f` trains with seed `derive_seed(seed, f)`.
pub fn crossval_run(kind: ModelKind, dump: &FeatureDump, k: usize, seed: u64, cfg: &TrainConfig) -> Result<CvReport> {
    let folds = kfold_indices(&dump.labels(), k, seed)?;
    let mut results = Vec::with_capacity(k);
    for (fold, split) in folds.iter().enumerate() {
        let fold_cfg = TrainConfig { seed: derive_seed(seed, fold as u64), ..cfg.clone() };
        let (_, ev) = fit_evaluate(kind, dump, split, &fold_cfg).map_err(|e| Error::Fold { fold, source: Box::new(e) })?;
        log::info!("{kind} fold {}/{k}: accuracy {:.4}", fold + 1, ev.metrics.accuracy);
        results.push(FoldResult {
            fold,
            seed: fold_cfg.seed,
            train_size: split.train.len(),
            test_size: split.test.len(),
            confusion: ev.confusion,
            metrics: ev.metrics,
        });
    }
    Ok(CvReport::from_folds(kind, seed, results))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub name: String,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparativeReport {
    pub split_seed: u64,
    pub train_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub rows: Vec<ComparisonRow>,
}

impl ComparativeReport {
    /// Aligned table with the columns Model, Accuracy, F1 Score (percentages).
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("Model".len());
        let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "Model", "Accuracy", "F1 Score");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>7.1}%  {:>7.1}%", r.name, 100.0 * r.accuracy, 100.0 * r.f1);
        }
        s
    }

    pub fn row(&self, kind: ModelKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == kind)
    }
}

pub struct ComparisonRun {
    pub report: ComparativeReport,
    pub split: Split,
    pub models: Vec<FittedModel>,
}

/// Trains every architecture on one shared stratified 80/20 split.
pub fn comparative_report(dump: &FeatureDump, split_seed: u64, cfg: &TrainConfig) -> Result<ComparisonRun> {
    let split = stratified_split(&dump.labels(), 0.2, split_seed)?;
    let mut rows = Vec::new();
    let mut fitted = Vec::new();
    for kind in ModelKind::ALL {
        let (model, ev) = fit_evaluate(kind, dump, &split, cfg)?;
        log::info!("{kind}: test accuracy {:.4}, f1 {:.4}", ev.metrics.accuracy, ev.metrics.f1);
        rows.push(ComparisonRow {
            model: kind,
            name: kind.display_name().to_string(),
            accuracy: ev.metrics.accuracy,
            f1: ev.metrics.f1,
            confusion: ev.confusion,
        });
        fitted.push(model);
    }
    let report = ComparativeReport {
        split_seed,
        train_seed: cfg.seed,
        train_size: split.train.len(),
        test_size: split.test.len(),
        rows,
    };
    Ok(ComparisonRun { report, split, models: fitted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClipLabel::{Clean as C, Infested as I};

    fn labels(n_clean: usize, n_inf: usize) -> Vec<ClipLabel> {
        let mut v = vec![C; n_clean];
        v.extend(vec![I; n_inf]);
        v
    }

    fn assert_partition(split: &Split, n: usize) {
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        let y = labels(50, 50);
        let s = stratified_split(&y, 0.2, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        assert_eq!(s.test.iter().filter(|&&i| y[i] == I).count(), 10);
        assert_partition(&s, 100);
        assert_eq!(s, stratified_split(&y, 0.2, 3).unwrap());

        // 7 * 0.2 = 1.4 -> 1, 13 * 0.2 = 2.6 -> 3
        let s = stratified_split(&labels(7, 13), 0.2, 0).unwrap();
        assert_eq!(s.test.len(), 4);
        // 2.5 rounds up
        let s = stratified_split(&labels(5, 5), 0.5, 0).unwrap();
        assert_eq!(s.test.len(), 6);
        // minimum one per class
        let s = stratified_split(&labels(2, 2), 0.1, 0).unwrap();
        assert_eq!(s.test.len(), 2);
        assert!(matches!(stratified_split(&labels(0, 4), 0.2, 0), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn kfold_partitions_and_stratifies() {
        let y = labels(48, 52);
        let folds = kfold_indices(&y, 5, 11).unwrap();
        let mut seen = vec![0; 100];
        for f in &folds {
            assert_partition(f, 100);
            f.test.iter().for_each(|&i| seen[i] += 1);
            let inf = f.test.iter().filter(|&&i| y[i] == I).count();
            assert!(inf == 10 || inf == 11);
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(kfold_indices(&y, 1, 0).is_err());
        assert!(matches!(kfold_indices(&labels(3, 10), 5, 0), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn confusion_enumeration() {
        let m = confusion_from_predictions(&[I, I, C, C], &[I, C, C, I]).unwrap();
        assert_eq!(m, ConfusionMatrix { tp: 1, fn_: 1, fp: 1, tn: 1 });
        assert!(confusion_from_predictions(&[I], &[I, C]).is_err());
        assert!(confusion_from_predictions(&[], &[]).is_err());
    }

    #[test]
    fn metric_formulas() {
        let r = metrics_from_confusion(&ConfusionMatrix { tp: 48, fn_: 2, fp: 3, tn: 47 }).unwrap();
        assert!((r.accuracy - 0.95).abs() < 1e-12);
        assert!((r.precision - 48.0 / 51.0).abs() < 1e-12);
        assert!((r.recall - 0.96).abs() < 1e-12);
        let f1 = 2.0 * (48.0 / 51.0) * 0.96 / (48.0 / 51.0 + 0.96);
        assert!((r.f1 - f1).abs() < 1e-12);

        let r = metrics_from_confusion(&ConfusionMatrix { tp: 0, fn_: 0, fp: 0, tn: 5 }).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (0.0, 0.0, 0.0, 1.0));
        assert!(metrics_from_confusion(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[0.9, 1.0, 0.9, 1.0, 1.0]);
        assert!((m - 0.96).abs() < 1e-12);
        assert!((s - 0.0024f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[1.0; 5]), (1.0, 0.0));
    }

    #[test]
    fn csv_layout() {
        let csv = ConfusionMatrix { tp: 48, fn_: 2, fp: 3, tn: 47 }.to_csv();
        assert_eq!(csv, "true\\predicted,clean,infested\nclean,47,3\ninfested,2,48\n");
    }
}
