//! AdamW with decoupled weight decay, and the per-epoch learning-rate decay.

use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

/// `initial · decay^epoch`, evaluated directly rather than by repeated
/// multiplication.
pub fn lr_schedule(initial: f64, decay: f64, epoch: u64) -> f64 {
    initial * decay.powf(epoch as f64)
}

/// Optimizer state for one parameter list: first and second moments in the
/// order of the list, plus the step count.
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Float>(cfg: AdamWConfig, params: &[Parameter<T>]) -> Self {
        Self {
            cfg,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    /// One update using the gradients currently stored on `params`.
    pub fn step<T: Float>(&mut self, params: &[Parameter<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer built for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        let grads = params
            .iter()
            .map(|p| {
                p.tensor
                    .grad()
                    .ok_or_else(|| Error::MissingGrad(p.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            weight_decay,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        let shrink = 1.0 - lr * weight_decay;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut data = p.tensor.data_mut();
            for j in 0..data.len() {
                let gj = g[j].as_f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                data[j] = T::of(data[j].as_f64() * shrink - lr * update);
            }
        }
        Ok(())
    }
}
