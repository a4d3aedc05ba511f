use serde::{Deserialize, Serialize};

use super::VaeParams;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are stored with exactly the
/// parameters' shapes so they can be pruned alongside them.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: VaeParams,
    second: VaeParams,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &VaeParams, config: AdamConfig) -> Self {
        Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &VaeParams {
        &self.first
    }

    pub fn second_moment(&self) -> &VaeParams {
        &self.second
    }

    pub fn step(&mut self, params: &mut VaeParams, grad: &VaeParams) -> Result<()> {
        if !params.same_shapes(grad) || !params.same_shapes(&self.first) {
            return Err(Error::Shape(
                "optimizer state, gradient and parameters have different shapes".into(),
            ));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let grads = grad.tensors();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(&grads).zip(firsts).zip(seconds) {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p[i] -= update;
            }
        }
        if params.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }

    /// Drops the same latent coordinates from the moment buffers as
    /// [`crate::pruning::prune_latent`] drops from the parameters.
    pub(crate) fn slice_latent(&mut self, drop: &[usize]) {
        self.first = self.first.without_latent(drop);
        self.second = self.second.without_latent(drop);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::numerics::RngState;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = init_model(4, 3, 2, &mut RngState::new(0)).unwrap();
        let before = p.clone();
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        let zero = p.zeros_like();
        opt.step(&mut p, &zero).unwrap();
        opt.step(&mut p, &zero).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = init_model(3, 2, 2, &mut RngState::new(0)).unwrap();
        let before = p.to_flat();
        let mut grad = p.zeros_like();
        let n = grad.num_parameters();
        grad.set_flat(&vec![0.25; n]).unwrap();
        let mut opt = OptimizerState::new(&p, AdamConfig { lr: 0.01, ..AdamConfig::default() });
        opt.step(&mut p, &grad).unwrap();
        for (a, b) in p.to_flat().iter().zip(&before) {
            // bias-corrected first step is lr · g/|g| up to eps
            assert!((b - a - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = init_model(3, 2, 2, &mut RngState::new(0)).unwrap();
        let other = init_model(3, 2, 3, &mut RngState::new(0)).unwrap();
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        assert!(opt.step(&mut p, &other.zeros_like()).is_err());
    }
}
