//! The four compared architectures and the mini-batch training loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::ClipLabel;
use crate::error::{Error, Result};
use crate::mfcc::{mfcc_mean, MfccMatrix, StandardizeStats};
use crate::nn::{AdamConfig, AdamState, InputSpec, LayerSpec, ModelGraph, ParamSet, Tensor};
use crate::scalar::Scalar;
use crate::seed::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Dense network on time-averaged MFCCs.
    DnnMean,
    CnnOnly,
    LstmOnly,
    CnnLstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::DnnMean, ModelKind::CnnOnly, ModelKind::LstmOnly, ModelKind::CnnLstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DnnMean => "dnn_mean",
            ModelKind::CnnOnly => "cnn_only",
            ModelKind::LstmOnly => "lstm_only",
            ModelKind::CnnLstm => "cnn_lstm",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::DnnMean => "DNN (mean MFCC)",
            ModelKind::CnnOnly => "CNN only",
            ModelKind::LstmOnly => "LSTM only",
            ModelKind::CnnLstm => "CNN-LSTM",
        }
    }

    /// Whether the model consumes `T x n_mfcc` frame matrices rather than mean vectors.
    pub fn is_sequence(self) -> bool {
        !matches!(self, ModelKind::DnnMean)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dnn_mean" | "dnn" => Ok(ModelKind::DnnMean),
            "cnn_only" | "cnn" => Ok(ModelKind::CnnOnly),
            "lstm_only" | "lstm" => Ok(ModelKind::LstmOnly),
            "cnn_lstm" => Ok(ModelKind::CnnLstm),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Layer widths shared by the architectures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSizes {
    pub n_features: usize,
    pub dense_units: [usize; 3],
    pub conv_filters: [usize; 2],
    pub conv_kernels: [usize; 2],
    pub pool_width: usize,
    pub lstm_hidden: usize,
    pub head_units: usize,
    pub dropout: f64,
    pub n_classes: usize,
}

impl Default for ArchSizes {
    fn default() -> Self {
        Self {
            n_features: 40,
            dense_units: [256, 128, 64],
            conv_filters: [32, 64],
            conv_kernels: [5, 3],
            pool_width: 2,
            lstm_hidden: 64,
            head_units: 64,
            dropout: 0.3,
            n_classes: 2,
        }
    }
}

impl ArchSizes {
    /// Same topology at a size small enough for exhaustive gradient checks.
    pub fn toy(n_features: usize) -> Self {
        Self {
            n_features,
            dense_units: [8, 6, 4],
            conv_filters: [3, 4],
            conv_kernels: [5, 3],
            pool_width: 2,
            lstm_hidden: 3,
            head_units: 4,
            dropout: 0.3,
            n_classes: 2,
        }
    }
}

pub fn build_model(kind: ModelKind) -> ModelGraph {
    build_model_with(kind, &ArchSizes::default()).expect("default sizes are valid")
}

pub fn build_model_with(kind: ModelKind, sizes: &ArchSizes) -> Result<ModelGraph> {
    use LayerSpec::*;
    let drop = Dropout { rate: sizes.dropout };
    let conv_stack = || {
        vec![
            Conv1d { filters: sizes.conv_filters[0], kernel: sizes.conv_kernels[0] },
            Relu,
            MaxPool1d { width: sizes.pool_width },
            Conv1d { filters: sizes.conv_filters[1], kernel: sizes.conv_kernels[1] },
            Relu,
            MaxPool1d { width: sizes.pool_width },
        ]
    };
    let head = [Dense { units: sizes.head_units }, Relu, drop, Dense { units: sizes.n_classes }, Softmax];
    let (input, layers) = match kind {
        ModelKind::DnnMean => {
            let mut layers = Vec::new();
            for units in sizes.dense_units {
                layers.extend([Dense { units }, Relu, drop]);
            }
            layers.extend([Dense { units: sizes.n_classes }, Softmax]);
            (InputSpec::Vector { features: sizes.n_features }, layers)
        }
        ModelKind::CnnOnly => {
            let mut layers = conv_stack();
            layers.push(GlobalAvgPool1d);
            layers.extend(head);
            (InputSpec::Sequence { channels: sizes.n_features }, layers)
        }
        ModelKind::LstmOnly => {
            let mut layers = vec![Lstm { hidden: sizes.lstm_hidden }];
            layers.extend(head);
            (InputSpec::Sequence { channels: sizes.n_features }, layers)
        }
        ModelKind::CnnLstm => {
            let mut layers = conv_stack();
            layers.push(Lstm { hidden: sizes.lstm_hidden });
            layers.extend(head);
            (InputSpec::Sequence { channels: sizes.n_features }, layers)
        }
    };
    ModelGraph::new(kind.name(), input, layers)
}

/// Recovers the kind from a graph's architecture name.
pub fn kind_of(graph: &ModelGraph) -> Result<ModelKind> {
    graph.arch().parse()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, seed: 0, shuffle: true, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Per-epoch curves. Training loss and accuracy are measured in inference mode
/// over the whole training set after the epoch's updates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

/// Model inputs with labels; every sample has the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet<T> {
    pub sample_shape: Vec<usize>,
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<ClipLabel>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(sample_shape: Vec<usize>, inputs: Vec<Vec<T>>, labels: Vec<ClipLabel>) -> Result<Self> {
        let width: usize = sample_shape.iter().product();
        if inputs.len() != labels.len() {
            return Err(Error::invalid("inputs and labels differ in length"));
        }
        if inputs.iter().any(|x| x.len() != width) {
            return Err(Error::shape(format!("every sample must have shape {sample_shape:?}")));
        }
        Ok(Self { sample_shape, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Stacked inputs and one-hot targets for the given sample indices.
    pub fn batch(&self, idx: &[usize], n_classes: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut shape = vec![idx.len()];
        shape.extend(&self.sample_shape);
        let x = Tensor::new(shape, idx.iter().flat_map(|&i| self.inputs[i].iter().copied()).collect())?;
        let mut y = Tensor::zeros(&[idx.len(), n_classes]);
        for (row, &i) in idx.iter().enumerate() {
            y.data_mut()[row * n_classes + self.labels[i].code()] = T::one();
        }
        Ok((x, y))
    }

    pub fn inputs_tensor(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let mut shape = vec![idx.len()];
        shape.extend(&self.sample_shape);
        Tensor::new(shape, idx.iter().flat_map(|&i| self.inputs[i].iter().copied()).collect())
    }
}

/// Standardizes MFCC matrices and shapes them for `kind`: the time mean for the
/// dense model, the full frame matrix otherwise.
///
/// Standardization is affine per coefficient, so the mean of the standardized
/// frames equals the standardized mean vector.
pub fn prepare_features<T: Scalar>(
    kind: ModelKind,
    matrices: &[&MfccMatrix<T>],
    labels: &[ClipLabel],
    stats: &StandardizeStats<T>,
) -> Result<FeatureSet<T>> {
    let first = matrices.first().ok_or_else(|| Error::invalid("no samples to prepare"))?;
    let sample_shape = if kind.is_sequence() { vec![first.n_frames, first.n_coeffs] } else { vec![first.n_coeffs] };
    let inputs = matrices
        .iter()
        .map(|m| {
            let z = stats.apply(m)?;
            if kind.is_sequence() {
                Ok(z.values)
            } else {
                Ok(mfcc_mean(&z)?.values)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureSet::new(sample_shape, inputs, labels.to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained<T> {
    pub params: ParamSet<T>,
    pub history: TrainHistory,
}

const EVAL_CHUNK: usize = 64;

// Independent ChaCha streams for shuffling and dropout; init uses the seed directly.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

/// Mean cross-entropy and accuracy in inference mode.
pub fn evaluate_loss<T: Scalar>(graph: &ModelGraph, params: &ParamSet<T>, data: &FeatureSet<T>) -> Result<(f64, f64)> {
    let n_classes = graph.output_width();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(idx, n_classes)?;
        let logits = graph.forward(params, &x)?;
        let ce = crate::nn::softmax_cross_entropy(&logits, &y)?;
        loss_sum += ce.loss.to_f64().unwrap_or(f64::NAN) * idx.len() as f64;
        for (row, &i) in ce.probs.data().chunks_exact(n_classes).zip(idx) {
            if argmax_label(row) == data.labels[i] {
                correct += 1;
            }
        }
    }
    let n = data.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

fn argmax_label<T: Scalar>(probs: &[T]) -> ClipLabel {
    // ties resolve to the lower class index, i.e. Clean
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    ClipLabel::from_code(best).unwrap_or(ClipLabel::Clean)
}

/// Mini-batch Adam training with per-epoch shuffling.
///
/// Initialization uses `cfg.seed` directly; shuffling and dropout draw from
/// separate streams of the same seed, so a run is a pure function of its inputs.
pub fn train<T: Scalar>(
    graph: &ModelGraph,
    train_set: &FeatureSet<T>,
    val_set: Option<&FeatureSet<T>>,
    cfg: &TrainConfig,
) -> Result<Trained<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    let params = graph.init_params::<T>(cfg.seed);
    train_from(graph, params, train_set, val_set, cfg)
}

/// Like [`train`] but starting from given parameters.
pub fn train_from<T: Scalar>(
    graph: &ModelGraph,
    mut params: ParamSet<T>,
    train_set: &FeatureSet<T>,
    val_set: Option<&FeatureSet<T>>,
    cfg: &TrainConfig,
) -> Result<Trained<T>> {
    cfg.validate()?;
    let n_classes = graph.output_width();
    let mut adam = AdamState::new(cfg.adam, &params);
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream_rng(cfg.seed, STREAM_DROPOUT);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        for (batch_no, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train_set.batch(idx, n_classes)?;
            let (loss, grads) = graph.loss_and_grad(&params, &x, &y, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "loss", epoch, batch: batch_no });
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite { what: "gradient", epoch, batch: batch_no });
            }
            adam.update(&mut params, &grads)?;
            if !params.is_finite() {
                return Err(Error::NonFinite { what: "parameters", epoch, batch: batch_no });
            }
        }
        let (loss, acc) = evaluate_loss(graph, &params, train_set)?;
        history.train_loss.push(loss);
        history.train_accuracy.push(acc);
        match val_set {
            Some(val) if !val.is_empty() => {
                let (vl, va) = evaluate_loss(graph, &params, val)?;
                history.val_loss.push(vl);
                history.val_accuracy.push(va);
                log::info!(
                    "{} epoch {}/{}: loss {loss:.4} acc {acc:.3} val_loss {vl:.4} val_acc {va:.3}",
                    graph.arch(),
                    epoch + 1,
                    cfg.epochs
                );
            }
            _ => log::info!("{} epoch {}/{}: loss {loss:.4} acc {acc:.3}", graph.arch(), epoch + 1, cfg.epochs),
        }
    }
    Ok(Trained { params, history })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `[p(clean), p(infested)]`
    pub probs: [f64; 2],
    pub label: ClipLabel,
}

impl Prediction {
    pub fn p_infested(&self) -> f64 {
        self.probs[ClipLabel::Infested.code()]
    }
}

/// Inference-mode class probabilities and labels (ties go to Clean).
pub fn predict<T: Scalar>(graph: &ModelGraph, params: &ParamSet<T>, inputs: &Tensor<T>) -> Result<Vec<Prediction>> {
    if graph.output_width() != 2 {
        return Err(Error::shape("prediction expects a two-class head"));
    }
    let probs = graph.predict_proba(params, inputs)?;
    Ok(probs
        .data()
        .chunks_exact(2)
        .map(|row| Prediction {
            probs: [row[0].to_f64().unwrap_or(f64::NAN), row[1].to_f64().unwrap_or(f64::NAN)],
            label: argmax_label(row),
        })
        .collect())
}

pub fn predict_set<T: Scalar>(graph: &ModelGraph, params: &ParamSet<T>, data: &FeatureSet<T>) -> Result<Vec<Prediction>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for idx in all.chunks(EVAL_CHUNK) {
        out.extend(predict(graph, params, &data.inputs_tensor(idx)?)?);
    }
    Ok(out)
}
