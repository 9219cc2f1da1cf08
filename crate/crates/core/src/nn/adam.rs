use serde::{Deserialize, Serialize};

use super::graph::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for every parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    /// One bias-corrected Adam step. Non-finite gradients are rejected before
    /// anything is modified.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        if grads.layers.len() != params.layers.len()
            || grads.tensors().zip(params.tensors()).any(|(g, p)| g.shape() != p.shape())
            || grads.count() != params.count()
        {
            return Err(Error::shape("gradient does not match parameters"));
        }
        if let Some((layer, _)) = grads
            .layers
            .iter()
            .enumerate()
            .find(|(_, ts)| ts.iter().any(|t| !t.is_finite()))
        {
            return Err(Error::invalid(format!("non-finite gradient in layer {layer}")));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let step = self.t as i32;
        let bc1 = T::lit(1.0 - beta1.powi(step));
        let bc2 = T::lit(1.0 - beta2.powi(step));
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one, lr, eps) = (T::one(), T::lit(lr), T::lit(eps));

        let moments = self.m.tensors_mut().zip(self.v.tensors_mut());
        for ((p, g), (m, v)) in params.tensors_mut().zip(grads.tensors()).zip(moments) {
            let values = p.data_mut().iter_mut().zip(g.data());
            for ((theta, &g), (m, v)) in values.zip(m.data_mut().iter_mut().zip(v.data_mut())) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
