//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: per-parameter first/second moment buffers plus the
/// shared step counter.
pub struct Adam<T: Real> {
    cfg: AdamConfig,
    t: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<T>]) -> Self {
        let moments = params
            .iter()
            .map(|p| (vec![T::zero(); p.numel()], vec![T::zero(); p.numel()]))
            .collect();
        Self { cfg, t: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over the same parameter list the state was built for.
    /// Every parameter must have a populated gradient.
    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::Usage(format!(
                "adam state built for {} params, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let lr = T::from_f64(self.cfg.lr);
        let wd = T::from_f64(self.cfg.weight_decay);
        let eps = T::from_f64(self.cfg.eps);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for (pi, p) in params.iter().enumerate() {
            let grad = p
                .grad()
                .ok_or_else(|| Error::Usage(format!("adam_step: parameter {pi} has no gradient")))?;
            let (m, v) = &mut self.moments[pi];
            let mut data = p.to_vec();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                // decoupled weight decay: applied to the raw parameter,
                // not folded into the gradient
                data[i] = data[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * data[i]);
            }
            p.set_data(&data)?;
        }
        Ok(())
    }
}
