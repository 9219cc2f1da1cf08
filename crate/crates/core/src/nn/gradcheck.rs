//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{ModelGraph, ParamSet};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-4;

/// `(f(θ+ε) - f(θ-ε)) / 2ε` for every parameter.
pub fn numeric_gradient<T: Scalar>(
    params: &ParamSet<T>,
    eps: T,
    mut loss: impl FnMut(&ParamSet<T>) -> Result<T>,
) -> Result<ParamSet<T>> {
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    let two_eps = eps + eps;
    for li in 0..params.layers.len() {
        for ti in 0..params.layers[li].len() {
            for k in 0..params.layers[li][ti].len() {
                let orig = params.layers[li][ti].data()[k];
                probe.layers[li][ti].data_mut()[k] = orig + eps;
                let plus = loss(&probe)?;
                probe.layers[li][ti].data_mut()[k] = orig - eps;
                let minus = loss(&probe)?;
                probe.layers[li][ti].data_mut()[k] = orig;
                grads.layers[li][ti].data_mut()[k] = (plus - minus) / two_eps;
            }
        }
    }
    Ok(grads)
}

/// `max |a - n| / max(1e-8, |a| + |n|)` over all parameters.
pub fn max_relative_error<T: Scalar>(analytic: &ParamSet<T>, numeric: &ParamSet<T>) -> T {
    let floor = T::lit(1e-8);
    analytic
        .tensors()
        .zip(numeric.tensors())
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| (a - n).abs() / floor.max(a.abs() + n.abs()))
        .fold(T::zero(), T::max)
}

/// Compares backpropagation against central differences on the cross-entropy loss.
///
/// Dropout masks are redrawn from `dropout_seed` for every evaluation, so each
/// probe sees the same masks as the analytic pass.
pub fn finite_diff_check<T: Scalar>(
    graph: &ModelGraph,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    onehot: &Tensor<T>,
    eps: T,
    dropout_seed: u64,
) -> Result<T> {
    let (_, analytic) = graph.loss_and_grad(params, x, onehot, &mut ChaCha8Rng::seed_from_u64(dropout_seed))?;
    let numeric = numeric_gradient(params, eps, |p| {
        graph.loss(p, x, onehot, &mut ChaCha8Rng::seed_from_u64(dropout_seed))
    })?;
    Ok(max_relative_error(&analytic, &numeric))
}
