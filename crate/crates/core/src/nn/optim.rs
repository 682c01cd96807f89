use serde::{Deserialize, Serialize};

use super::params::NetworkParams;
use super::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(format!("invalid Adam configuration {self:?}"))
        }
    }
}

/// One Adam update from the accumulated gradients. Weight decay is added
/// to the gradient (`g + wd·θ`) before the moment updates.
pub fn adam_step<T: Scalar>(params: &mut NetworkParams<T>, config: &AdamConfig) {
    params.adam_step += 1;
    let t = params.adam_step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1t, b2t, wd, eps) = (T::of(b1), T::of(b2), T::of(config.weight_decay), T::of(config.eps));
    let step = T::of(config.lr / c1);
    let c2s = T::of(c2.sqrt());
    for i in 0..params.values.len() {
        let theta = &mut params.values[i].data;
        let grad = &params.grads[i].data;
        let m = &mut params.adam_m[i].data;
        let v = &mut params.adam_v[i].data;
        for j in 0..theta.len() {
            let g = grad[j] + wd * theta[j];
            m[j] = b1t * m[j] + (T::one() - b1t) * g;
            v[j] = b2t * v[j] + (T::one() - b2t) * g * g;
            theta[j] = theta[j] - step * m[j] / (v[j].sqrt() / c2s + eps);
        }
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0);
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<T>().sqrt().f64();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads {
            g.scale(s);
        }
    }
    norm
}
