//! Layer primitives with hand-derived backward passes.
//!
//! Layouts are batch-first: vectors are `[batch, features]`, sequences are
//! `[batch, time, channels]`.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{matmul_into, MatRef, Scalar};

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn column_sums<T: Scalar>(values: &[T], cols: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); cols];
    for row in values.chunks_exact(cols) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s = *s + v;
        }
    }
    sums
}

fn dims3<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    x.expect_shape(what, &[None, None, None])?;
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

// ---------------------------------------------------------------- dense

/// `y = x W + b` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense_apply<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_shape("dense input", &[None, None])?;
    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
    w.expect_shape("dense weight", &[Some(fan_in), None])?;
    let fan_out = w.shape()[1];
    b.expect_shape("dense bias", &[Some(fan_out)])?;
    let mut y = Vec::with_capacity(batch * fan_out);
    for _ in 0..batch {
        y.extend_from_slice(b.data());
    }
    matmul_into(MatRef::new(x.data(), batch, fan_in), MatRef::new(w.data(), fan_in, fan_out), &mut y, true);
    Tensor::new(vec![batch, fan_out], y)
}

pub struct DenseGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<DenseGrads<T>> {
    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
    let fan_out = w.shape()[1];
    dy.expect_shape("dense upstream gradient", &[Some(batch), Some(fan_out)])?;
    let mut dx = vec![T::zero(); batch * fan_in];
    matmul_into(MatRef::new(dy.data(), batch, fan_out), MatRef::new(w.data(), fan_in, fan_out).t(), &mut dx, false);
    let mut dw = vec![T::zero(); fan_in * fan_out];
    matmul_into(MatRef::new(x.data(), batch, fan_in).t(), MatRef::new(dy.data(), batch, fan_out), &mut dw, false);
    Ok(DenseGrads {
        dx: Tensor::new(vec![batch, fan_in], dx)?,
        dw: Tensor::new(vec![fan_in, fan_out], dw)?,
        db: Tensor::new(vec![fan_out], column_sums(dy.data(), fan_out))?,
    })
}

// ---------------------------------------------------------------- conv1d

/// Unfolded input patches, `[batch * time, kernel * channels]`.
pub struct Im2Col<T> {
    pub cols: Vec<T>,
    pub batch: usize,
    pub steps: usize,
    pub channels: usize,
    pub kernel: usize,
}

fn im2col<T: Scalar>(x: &Tensor<T>, kernel: usize) -> Result<Im2Col<T>> {
    let (batch, steps, channels) = dims3(x, "conv input")?;
    let pad = (kernel - 1) / 2;
    let width = kernel * channels;
    let mut cols = vec![T::zero(); batch * steps * width];
    let data = x.data();
    for b in 0..batch {
        for t in 0..steps {
            let row = &mut cols[(b * steps + t) * width..(b * steps + t + 1) * width];
            for dt in 0..kernel {
                let src = t + dt;
                if src < pad || src - pad >= steps {
                    continue;
                }
                let s = (b * steps + src - pad) * channels;
                row[dt * channels..(dt + 1) * channels].copy_from_slice(&data[s..s + channels]);
            }
        }
    }
    Ok(Im2Col { cols, batch, steps, channels, kernel })
}

fn check_conv_params<T: Scalar>(k: &Tensor<T>, b: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    k.expect_shape("conv kernel", &[None, Some(channels), None])?;
    let (kernel, filters) = (k.shape()[0], k.shape()[2]);
    if kernel % 2 == 0 {
        return Err(Error::invalid(format!("conv kernel width {kernel} must be odd")));
    }
    b.expect_shape("conv bias", &[Some(filters)])?;
    Ok((kernel, filters))
}

/// Same-length 1-D convolution over time with zero padding `(k-1)/2`.
pub fn conv1d_apply<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    conv1d_forward(x, k, b).map(|(y, _)| y)
}

pub fn conv1d_forward<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Im2Col<T>)> {
    let (batch, steps, channels) = dims3(x, "conv input")?;
    let (kernel, filters) = check_conv_params(k, b, channels)?;
    let unfolded = im2col(x, kernel)?;
    let rows = batch * steps;
    let mut y = Vec::with_capacity(rows * filters);
    for _ in 0..rows {
        y.extend_from_slice(b.data());
    }
    matmul_into(
        MatRef::new(&unfolded.cols, rows, kernel * channels),
        MatRef::new(k.data(), kernel * channels, filters),
        &mut y,
        true,
    );
    Ok((Tensor::new(vec![batch, steps, filters], y)?, unfolded))
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dk: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv1d_backward<T: Scalar>(unfolded: &Im2Col<T>, k: &Tensor<T>, dy: &Tensor<T>) -> Result<ConvGrads<T>> {
    let Im2Col { cols, batch, steps, channels, kernel } = unfolded;
    let (batch, steps, channels, kernel) = (*batch, *steps, *channels, *kernel);
    let filters = k.shape()[2];
    dy.expect_shape("conv upstream gradient", &[Some(batch), Some(steps), Some(filters)])?;
    let rows = batch * steps;
    let width = kernel * channels;

    let mut dk = vec![T::zero(); width * filters];
    matmul_into(MatRef::new(cols, rows, width).t(), MatRef::new(dy.data(), rows, filters), &mut dk, false);
    let mut dcols = vec![T::zero(); rows * width];
    matmul_into(MatRef::new(dy.data(), rows, filters), MatRef::new(k.data(), width, filters).t(), &mut dcols, false);

    let pad = (kernel - 1) / 2;
    let mut dx = vec![T::zero(); batch * steps * channels];
    for b in 0..batch {
        for t in 0..steps {
            let row = &dcols[(b * steps + t) * width..(b * steps + t + 1) * width];
            for dt in 0..kernel {
                let src = t + dt;
                if src < pad || src - pad >= steps {
                    continue;
                }
                let d = (b * steps + src - pad) * channels;
                for (acc, &g) in dx[d..d + channels].iter_mut().zip(&row[dt * channels..(dt + 1) * channels]) {
                    *acc = *acc + g;
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: Tensor::new(vec![batch, steps, channels], dx)?,
        dk: Tensor::new(vec![kernel, channels, filters], dk)?,
        db: Tensor::new(vec![filters], column_sums(dy.data(), filters))?,
    })
}

// ---------------------------------------------------------------- pooling

/// Non-overlapping max over time; the trailing remainder is dropped.
/// Returns the pooled tensor and, per output element, the flat input index of its maximum.
pub fn maxpool1d_forward<T: Scalar>(x: &Tensor<T>, width: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    if width == 0 {
        return Err(Error::invalid("pool width must be at least 1"));
    }
    let (batch, steps, channels) = dims3(x, "pool input")?;
    let out_steps = steps / width;
    if out_steps == 0 {
        return Err(Error::shape(format!("sequence of {steps} steps is shorter than pool width {width}")));
    }
    let data = x.data();
    let mut y = Vec::with_capacity(batch * out_steps * channels);
    let mut argmax = Vec::with_capacity(batch * out_steps * channels);
    for b in 0..batch {
        for o in 0..out_steps {
            for c in 0..channels {
                let mut best = (b * steps + o * width) * channels + c;
                for w in 1..width {
                    let idx = (b * steps + o * width + w) * channels + c;
                    // strict comparison keeps the first index on ties
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                y.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![batch, out_steps, channels], y)?, argmax))
}

pub fn maxpool1d_apply<T: Scalar>(x: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    maxpool1d_forward(x, width).map(|(y, _)| y)
}

pub fn maxpool1d_backward<T: Scalar>(in_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() {
        return Err(Error::shape("pool gradient does not match forward output"));
    }
    let mut dx = Tensor::zeros(in_shape);
    let buf = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        buf[idx] = buf[idx] + g;
    }
    Ok(dx)
}

/// Mean over time: `[batch, time, channels] -> [batch, channels]`.
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, steps, channels) = dims3(x, "global pool input")?;
    let n = T::lit(steps as f64);
    let mut y = vec![T::zero(); batch * channels];
    for b in 0..batch {
        let out = &mut y[b * channels..(b + 1) * channels];
        for row in x.data()[b * steps * channels..(b + 1) * steps * channels].chunks_exact(channels) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        out.iter_mut().for_each(|o| *o = *o / n);
    }
    Tensor::new(vec![batch, channels], y)
}

pub fn global_avg_pool_backward<T: Scalar>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, steps, channels) = (in_shape[0], in_shape[1], in_shape[2]);
    dy.expect_shape("global pool upstream gradient", &[Some(batch), Some(channels)])?;
    let n = T::lit(steps as f64);
    let mut dx = Vec::with_capacity(batch * steps * channels);
    for b in 0..batch {
        let g = &dy.data()[b * channels..(b + 1) * channels];
        for _ in 0..steps {
            dx.extend(g.iter().map(|&v| v / n));
        }
    }
    Tensor::new(in_shape.to_vec(), dx)
}

// ---------------------------------------------------------------- activations

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given the forward *output*.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &out) in dx.data_mut().iter_mut().zip(y.data()) {
        if out <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Inverted dropout. In training mode each element survives with probability
/// `1 - rate` and is scaled by `1 / (1 - rate)`; the returned mask holds those factors.
pub fn dropout_apply<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == DropoutMode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 - rate;
    let scale = T::lit(1.0 / keep);
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v = *v * m;
    }
    Ok((y, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, dy: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => dy.clone(),
        Some(mask) => {
            let mut dx = dy.clone();
            for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
                *g = *g * m;
            }
            dx
        }
    }
}

// ---------------------------------------------------------------- softmax / loss

/// Row-wise softmax with max shift.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_shape("logits", &[None, None])?;
    let k = logits.shape()[1];
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / total);
    }
    Ok(probs)
}

pub struct CrossEntropy<T> {
    /// Mean over the batch.
    pub loss: T,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / batch`.
    pub grad: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, onehot: &Tensor<T>) -> Result<CrossEntropy<T>> {
    logits.expect_shape("logits", &[None, None])?;
    if onehot.shape() != logits.shape() {
        return Err(Error::shape(format!("targets {:?} vs logits {:?}", onehot.shape(), logits.shape())));
    }
    let (batch, k) = (logits.shape()[0], logits.shape()[1]);
    let probs = softmax(logits)?;
    let mut loss = T::zero();
    for (z, y) in logits.data().chunks_exact(k).zip(onehot.data().chunks_exact(k)) {
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let log_total = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (&zi, &yi) in z.iter().zip(y) {
            if yi != T::zero() {
                loss = loss - yi * (zi - max - log_total);
            }
        }
    }
    let n = T::lit(batch as f64);
    let mut grad = probs.clone();
    for (g, &y) in grad.data_mut().iter_mut().zip(onehot.data()) {
        *g = (*g - y) / n;
    }
    Ok(CrossEntropy { loss: loss / n, probs, grad })
}

// ---------------------------------------------------------------- lstm

/// LSTM weights, gate blocks ordered input, forget, cell candidate, output.
///
/// `w: [in, 4H]`, `u: [H, 4H]`, `b: [4H]`.
#[derive(Clone, Copy)]
pub struct LstmParams<'a, T> {
    pub w: &'a Tensor<T>,
    pub u: &'a Tensor<T>,
    pub b: &'a Tensor<T>,
}

impl<'a, T: Scalar> LstmParams<'a, T> {
    fn dims(&self) -> Result<(usize, usize)> {
        self.w.expect_shape("lstm input weight", &[None, None])?;
        let (fan_in, gates) = (self.w.shape()[0], self.w.shape()[1]);
        if gates % 4 != 0 || gates == 0 {
            return Err(Error::shape(format!("lstm weight width {gates} is not 4H")));
        }
        let hidden = gates / 4;
        self.u.expect_shape("lstm recurrent weight", &[Some(hidden), Some(gates)])?;
        self.b.expect_shape("lstm bias", &[Some(gates)])?;
        Ok((fan_in, hidden))
    }
}

/// Applies the gate nonlinearities to pre-activations `z: [batch, 4H]` in place
/// and advances the cell. Returns `(c_t, tanh(c_t), h_t)`.
fn gate_step<T: Scalar>(z: &mut [T], c_prev: &[T], hidden: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let batch = c_prev.len() / hidden;
    let mut c = vec![T::zero(); batch * hidden];
    let mut tc = vec![T::zero(); batch * hidden];
    let mut h = vec![T::zero(); batch * hidden];
    for b in 0..batch {
        let zr = &mut z[b * 4 * hidden..(b + 1) * 4 * hidden];
        for j in 0..hidden {
            let i = sigmoid(zr[j]);
            let f = sigmoid(zr[hidden + j]);
            let g = zr[2 * hidden + j].tanh();
            let o = sigmoid(zr[3 * hidden + j]);
            zr[j] = i;
            zr[hidden + j] = f;
            zr[2 * hidden + j] = g;
            zr[3 * hidden + j] = o;
            let idx = b * hidden + j;
            c[idx] = f * c_prev[idx] + i * g;
            tc[idx] = c[idx].tanh();
            h[idx] = o * tc[idx];
        }
    }
    (c, tc, h)
}

/// One LSTM time step for a batch: returns `(h_t, c_t)`.
pub fn lstm_step<T: Scalar>(
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    params: LstmParams<'_, T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (fan_in, hidden) = params.dims()?;
    x_t.expect_shape("lstm step input", &[None, Some(fan_in)])?;
    let batch = x_t.shape()[0];
    h_prev.expect_shape("lstm hidden state", &[Some(batch), Some(hidden)])?;
    c_prev.expect_shape("lstm cell state", &[Some(batch), Some(hidden)])?;
    let mut z = Vec::with_capacity(batch * 4 * hidden);
    for _ in 0..batch {
        z.extend_from_slice(params.b.data());
    }
    matmul_into(MatRef::new(x_t.data(), batch, fan_in), MatRef::new(params.w.data(), fan_in, 4 * hidden), &mut z, true);
    matmul_into(
        MatRef::new(h_prev.data(), batch, hidden),
        MatRef::new(params.u.data(), hidden, 4 * hidden),
        &mut z,
        true,
    );
    let (c, _, h) = gate_step(&mut z, c_prev.data(), hidden);
    Ok((Tensor::new(vec![batch, hidden], h)?, Tensor::new(vec![batch, hidden], c)?))
}

/// Everything backpropagation through time needs from the forward pass.
pub struct LstmTrace<T> {
    batch: usize,
    steps: usize,
    fan_in: usize,
    hidden: usize,
    input: Vec<T>,
    /// Activated gates per step, `[batch, 4H]`.
    gates: Vec<Vec<T>>,
    /// Cell states, `cells[0]` is the zero initial state.
    cells: Vec<Vec<T>>,
    tanh_cells: Vec<Vec<T>>,
    /// Hidden states, `hiddens[0]` is the zero initial state.
    hiddens: Vec<Vec<T>>,
}

/// Runs a zero-initialized LSTM over `x: [batch, time, in]`; returns the last hidden state.
pub fn lstm_forward<T: Scalar>(x: &Tensor<T>, params: LstmParams<'_, T>) -> Result<(Tensor<T>, LstmTrace<T>)> {
    let (fan_in, hidden) = params.dims()?;
    let (batch, steps, channels) = dims3(x, "lstm input")?;
    if channels != fan_in {
        return Err(Error::shape(format!("lstm expects {fan_in} channels, got {channels}")));
    }
    let g4 = 4 * hidden;
    let mut xw = vec![T::zero(); batch * steps * g4];
    matmul_into(MatRef::new(x.data(), batch * steps, fan_in), MatRef::new(params.w.data(), fan_in, g4), &mut xw, false);

    let mut trace = LstmTrace {
        batch,
        steps,
        fan_in,
        hidden,
        input: x.data().to_vec(),
        gates: Vec::with_capacity(steps),
        cells: vec![vec![T::zero(); batch * hidden]],
        tanh_cells: Vec::with_capacity(steps),
        hiddens: vec![vec![T::zero(); batch * hidden]],
    };
    for t in 0..steps {
        let mut z = Vec::with_capacity(batch * g4);
        for b in 0..batch {
            let row = &xw[(b * steps + t) * g4..(b * steps + t + 1) * g4];
            z.extend(row.iter().zip(params.b.data()).map(|(&a, &c)| a + c));
        }
        matmul_into(
            MatRef::new(&trace.hiddens[t], batch, hidden),
            MatRef::new(params.u.data(), hidden, g4),
            &mut z,
            true,
        );
        let (c, tc, h) = gate_step(&mut z, &trace.cells[t], hidden);
        trace.gates.push(z);
        trace.cells.push(c);
        trace.tanh_cells.push(tc);
        trace.hiddens.push(h);
    }
    let last = Tensor::new(vec![batch, hidden], trace.hiddens[steps].clone())?;
    Ok((last, trace))
}

pub struct LstmGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub du: Tensor<T>,
    pub db: Tensor<T>,
}

/// Backpropagation through time from a gradient on the last hidden state.
pub fn lstm_backward<T: Scalar>(
    trace: &LstmTrace<T>,
    params: LstmParams<'_, T>,
    dh_last: &Tensor<T>,
) -> Result<LstmGrads<T>> {
    let LstmTrace { batch, steps, fan_in, hidden, .. } = *trace;
    dh_last.expect_shape("lstm upstream gradient", &[Some(batch), Some(hidden)])?;
    let g4 = 4 * hidden;
    let one = T::one();

    let mut dz_all = vec![T::zero(); batch * steps * g4];
    let mut du = vec![T::zero(); hidden * g4];
    let mut db = vec![T::zero(); g4];
    let mut dh = dh_last.data().to_vec();
    let mut dc = vec![T::zero(); batch * hidden];
    let mut dz = vec![T::zero(); batch * g4];

    for t in (0..steps).rev() {
        let gates = &trace.gates[t];
        let c_prev = &trace.cells[t];
        let tc = &trace.tanh_cells[t];
        for b in 0..batch {
            for j in 0..hidden {
                let idx = b * hidden + j;
                let gr = &gates[b * g4..(b + 1) * g4];
                let (i, f, g, o) = (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                let d_o = dh[idx] * tc[idx];
                let dcell = dc[idx] + dh[idx] * o * (one - tc[idx] * tc[idx]);
                let zr = &mut dz[b * g4..(b + 1) * g4];
                zr[j] = dcell * g * i * (one - i);
                zr[hidden + j] = dcell * c_prev[idx] * f * (one - f);
                zr[2 * hidden + j] = dcell * i * (one - g * g);
                zr[3 * hidden + j] = d_o * o * (one - o);
                dc[idx] = dcell * f;
            }
        }
        for b in 0..batch {
            dz_all[(b * steps + t) * g4..(b * steps + t + 1) * g4].copy_from_slice(&dz[b * g4..(b + 1) * g4]);
        }
        matmul_into(MatRef::new(&trace.hiddens[t], batch, hidden).t(), MatRef::new(&dz, batch, g4), &mut du, true);
        for (acc, s) in db.iter_mut().zip(column_sums(&dz, g4)) {
            *acc = *acc + s;
        }
        matmul_into(MatRef::new(&dz, batch, g4), MatRef::new(params.u.data(), hidden, g4).t(), &mut dh, false);
    }

    let rows = batch * steps;
    let mut dw = vec![T::zero(); fan_in * g4];
    matmul_into(MatRef::new(&trace.input, rows, fan_in).t(), MatRef::new(&dz_all, rows, g4), &mut dw, false);
    let mut dx = vec![T::zero(); rows * fan_in];
    matmul_into(MatRef::new(&dz_all, rows, g4), MatRef::new(params.w.data(), fan_in, g4).t(), &mut dx, false);

    Ok(LstmGrads {
        dx: Tensor::new(vec![batch, steps, fan_in], dx)?,
        dw: Tensor::new(vec![fan_in, g4], dw)?,
        du: Tensor::new(vec![hidden, g4], du)?,
        db: Tensor::new(vec![g4], db)?,
    })
}
