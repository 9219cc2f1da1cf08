use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, DropoutMode, Im2Col, LstmParams, LstmTrace};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One layer of a sequential network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv1d { filters: usize, kernel: usize },
    MaxPool1d { width: usize },
    Relu,
    Dropout { rate: f64 },
    /// Reads out the last hidden state.
    Lstm { hidden: usize },
    GlobalAvgPool1d,
    /// Output head; fused with the cross-entropy loss during training.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    /// `[batch, features]`
    Vector { features: usize },
    /// `[batch, time, channels]`; the time extent is free.
    Sequence { channels: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flow {
    Vector(usize),
    Sequence(usize),
}

/// Validated chain of layers with a named architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    arch: String,
    input: InputSpec,
    layers: Vec<LayerSpec>,
}

/// Trainable tensors per layer, in layer order (empty for parameter-free layers).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flatten()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flatten()
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| l.iter().map(|t| Tensor::zeros(t.shape())).collect()).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    /// All values in layer order.
    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites every value from a flat slice in layer order.
    pub fn load_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.count() {
            return Err(Error::shape(format!("expected {} parameters, got {}", self.count(), values.len())));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { layers: self.layers.iter().map(|l| l.iter().map(Tensor::cast).collect()).collect() }
    }
}

enum Cache<T> {
    Dense { input: Tensor<T> },
    Conv { unfolded: Im2Col<T> },
    Pool { in_shape: Vec<usize>, argmax: Vec<usize> },
    Relu { output: Tensor<T> },
    Dropout { mask: Option<Vec<T>> },
    Lstm { trace: LstmTrace<T> },
    Gap { in_shape: Vec<usize> },
    Identity,
}

/// Forward-pass record consumed by [`ModelGraph::backward`].
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
}

impl ModelGraph {
    pub fn new(arch: impl Into<String>, input: InputSpec, layers: Vec<LayerSpec>) -> Result<Self> {
        let graph = Self { arch: arch.into(), input, layers };
        graph.validate()?;
        Ok(graph)
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn input(&self) -> InputSpec {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    fn validate(&self) -> Result<(Vec<Flow>, Flow)> {
        let mut flow = match self.input {
            InputSpec::Vector { features } => Flow::Vector(features),
            InputSpec::Sequence { channels } => Flow::Sequence(channels),
        };
        let width = match flow {
            Flow::Vector(n) | Flow::Sequence(n) => n,
        };
        if width == 0 {
            return Err(Error::invalid("input width must be positive"));
        }
        let mut flows = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            flows.push(flow);
            let bad = |msg: &str| Error::invalid(format!("layer {i} ({layer:?}): {msg}"));
            flow = match (*layer, flow) {
                (LayerSpec::Dense { units }, Flow::Vector(_)) if units > 0 => Flow::Vector(units),
                (LayerSpec::Conv1d { filters, kernel }, Flow::Sequence(_)) if filters > 0 && kernel > 0 => {
                    if kernel % 2 == 0 {
                        return Err(bad("kernel width must be odd"));
                    }
                    Flow::Sequence(filters)
                }
                (LayerSpec::MaxPool1d { width }, Flow::Sequence(c)) if width > 0 => Flow::Sequence(c),
                (LayerSpec::Lstm { hidden }, Flow::Sequence(_)) if hidden > 0 => Flow::Vector(hidden),
                (LayerSpec::GlobalAvgPool1d, Flow::Sequence(c)) => Flow::Vector(c),
                (LayerSpec::Relu, f) => f,
                (LayerSpec::Dropout { rate }, f) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad("dropout rate outside [0, 1)"));
                    }
                    f
                }
                (LayerSpec::Softmax, f @ Flow::Vector(_)) if i + 1 == self.layers.len() => f,
                (LayerSpec::Softmax, _) => return Err(bad("softmax must be the final layer on vectors")),
                _ => return Err(bad("layer does not accept its input or has a zero size")),
            };
        }
        match flow {
            Flow::Vector(_) => Ok((flows, flow)),
            Flow::Sequence(_) => Err(Error::invalid("network must end in a vector output")),
        }
    }

    fn input_flows(&self) -> Vec<Flow> {
        self.validate().expect("graph validated at construction").0
    }

    /// Number of output classes.
    pub fn output_width(&self) -> usize {
        match self.validate().expect("graph validated at construction").1 {
            Flow::Vector(n) | Flow::Sequence(n) => n,
        }
    }

    /// Parameter tensor shapes per layer.
    pub fn param_shapes(&self) -> Vec<Vec<Vec<usize>>> {
        self.layers
            .iter()
            .zip(self.input_flows())
            .map(|(layer, flow)| {
                let width = match flow {
                    Flow::Vector(n) | Flow::Sequence(n) => n,
                };
                match *layer {
                    LayerSpec::Dense { units } => vec![vec![width, units], vec![units]],
                    LayerSpec::Conv1d { filters, kernel } => vec![vec![kernel, width, filters], vec![filters]],
                    LayerSpec::Lstm { hidden } => vec![vec![width, 4 * hidden], vec![hidden, 4 * hidden], vec![4 * hidden]],
                    _ => vec![],
                }
            })
            .collect()
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .zip(self.input_flows())
            .map(|(layer, flow)| {
                let width = match flow {
                    Flow::Vector(n) | Flow::Sequence(n) => n,
                };
                match *layer {
                    LayerSpec::Dense { units } => width * units + units,
                    LayerSpec::Conv1d { filters, kernel } => kernel * width * filters + filters,
                    LayerSpec::Lstm { hidden } => 4 * hidden * (width + hidden) + 4 * hidden,
                    _ => 0,
                }
            })
            .sum()
    }

    /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
    ///
    /// Draws come from one ChaCha8 stream seeded with `seed`, layer by layer, and
    /// within a layer in parameter order (weights before recurrent weights).
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |shape: &[usize], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| T::lit(rng.gen_range(-limit..=limit))).collect())
                .expect("shape matches count")
        };
        let layers = self
            .layers
            .iter()
            .zip(self.param_shapes())
            .map(|(layer, shapes)| match *layer {
                LayerSpec::Dense { units } => {
                    vec![glorot(&shapes[0], shapes[0][0], units), Tensor::zeros(&shapes[1])]
                }
                LayerSpec::Conv1d { filters, kernel } => {
                    let cin = shapes[0][1];
                    vec![glorot(&shapes[0], kernel * cin, kernel * filters), Tensor::zeros(&shapes[1])]
                }
                LayerSpec::Lstm { hidden } => {
                    let fan_in = shapes[0][0];
                    let w = glorot(&shapes[0], fan_in, 4 * hidden);
                    let u = glorot(&shapes[1], hidden, 4 * hidden);
                    let mut b = Tensor::zeros(&shapes[2]);
                    b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::one());
                    vec![w, u, b]
                }
                _ => vec![],
            })
            .collect();
        ParamSet { layers }
    }

    fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let shapes = self.param_shapes();
        let ok = params.layers.len() == shapes.len()
            && params
                .layers
                .iter()
                .zip(&shapes)
                .all(|(ts, ss)| ts.len() == ss.len() && ts.iter().zip(ss).all(|(t, s)| t.shape() == s.as_slice()));
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("parameters do not fit architecture {}", self.arch)))
        }
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        match self.input {
            InputSpec::Vector { features } => x.expect_shape("model input", &[None, Some(features)]),
            InputSpec::Sequence { channels } => x.expect_shape("model input", &[None, None, Some(channels)]),
        }
    }

    fn run<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        mut rng: Option<&mut R>,
        keep_trace: bool,
    ) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(if keep_trace { self.layers.len() } else { 0 });
        let mut act = x.clone();
        for (layer, p) in self.layers.iter().zip(&params.layers) {
            let (next, cache) = match *layer {
                LayerSpec::Dense { .. } => {
                    let y = ops::dense_apply(&act, &p[0], &p[1])?;
                    (y, Cache::Dense { input: act })
                }
                LayerSpec::Conv1d { .. } => {
                    let (y, unfolded) = ops::conv1d_forward(&act, &p[0], &p[1])?;
                    (y, Cache::Conv { unfolded })
                }
                LayerSpec::MaxPool1d { width } => {
                    let (y, argmax) = ops::maxpool1d_forward(&act, width)?;
                    (y, Cache::Pool { in_shape: act.shape().to_vec(), argmax })
                }
                LayerSpec::Relu => {
                    let y = ops::relu_forward(&act);
                    let cache = if keep_trace { Cache::Relu { output: y.clone() } } else { Cache::Identity };
                    (y, cache)
                }
                LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) => {
                        let (y, mask) = ops::dropout_apply(&act, rate, DropoutMode::Train, r)?;
                        (y, Cache::Dropout { mask })
                    }
                    None => (act, Cache::Dropout { mask: None }),
                },
                LayerSpec::Lstm { .. } => {
                    let (y, trace) = ops::lstm_forward(&act, LstmParams { w: &p[0], u: &p[1], b: &p[2] })?;
                    (y, Cache::Lstm { trace })
                }
                LayerSpec::GlobalAvgPool1d => {
                    let y = ops::global_avg_pool_forward(&act)?;
                    (y, Cache::Gap { in_shape: act.shape().to_vec() })
                }
                LayerSpec::Softmax => (act, Cache::Identity),
            };
            act = next;
            if keep_trace {
                caches.push(cache);
            }
        }
        Ok((act, Trace { caches }))
    }

    /// Inference-mode logits (dropout off, softmax not applied).
    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run::<T, ChaCha8Rng>(params, x, None, false).map(|(y, _)| y)
    }

    /// Inference-mode class probabilities.
    pub fn predict_proba<T: Scalar>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::softmax(&self.forward(params, x)?)
    }

    /// Training-mode logits; dropout masks are drawn from `rng`.
    pub fn forward_train<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Trace<T>)> {
        self.run(params, x, Some(rng), true)
    }

    /// Parameter gradients given `dL/dlogits`.
    pub fn backward<T: Scalar>(&self, params: &ParamSet<T>, trace: Trace<T>, dlogits: &Tensor<T>) -> Result<ParamSet<T>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::invalid("trace was not recorded for this graph"));
        }
        let mut grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];
        let mut grad = dlogits.clone();
        for (i, cache) in trace.caches.into_iter().enumerate().rev() {
            let p = &params.layers[i];
            grad = match cache {
                Cache::Dense { input } => {
                    let g = ops::dense_backward(&input, &p[0], &grad)?;
                    grads[i] = vec![g.dw, g.db];
                    g.dx
                }
                Cache::Conv { unfolded } => {
                    let g = ops::conv1d_backward(&unfolded, &p[0], &grad)?;
                    grads[i] = vec![g.dk, g.db];
                    g.dx
                }
                Cache::Pool { in_shape, argmax } => ops::maxpool1d_backward(&in_shape, &argmax, &grad)?,
                Cache::Relu { output } => ops::relu_backward(&output, &grad),
                Cache::Dropout { mask } => ops::dropout_backward(mask.as_deref(), &grad),
                Cache::Lstm { trace } => {
                    let g = ops::lstm_backward(&trace, LstmParams { w: &p[0], u: &p[1], b: &p[2] }, &grad)?;
                    grads[i] = vec![g.dw, g.du, g.db];
                    g.dx
                }
                Cache::Gap { in_shape } => ops::global_avg_pool_backward(&in_shape, &grad)?,
                Cache::Identity => grad,
            };
        }
        Ok(ParamSet { layers: grads })
    }

    /// Mean cross-entropy and its parameter gradient for one batch.
    pub fn loss_and_grad<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        onehot: &Tensor<T>,
        rng: &mut R,
    ) -> Result<(T, ParamSet<T>)> {
        let (logits, trace) = self.forward_train(params, x, rng)?;
        let ce = ops::softmax_cross_entropy(&logits, onehot)?;
        let grads = self.backward(params, trace, &ce.grad)?;
        Ok((ce.loss, grads))
    }

    /// Mean cross-entropy in training mode (dropout masks from `rng`).
    pub fn loss<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        onehot: &Tensor<T>,
        rng: &mut R,
    ) -> Result<T> {
        let (logits, _) = self.run(params, x, Some(rng), false)?;
        Ok(ops::softmax_cross_entropy(&logits, onehot)?.loss)
    }
}
