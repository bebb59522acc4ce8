//! Policy optimization: the clipped surrogate, counterfactual rollouts, the
//! CPO and GRPO group updates, and the training driver.

pub mod cpo;
pub mod surrogate;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cpo::{
    cpo_advantages, cpo_batch_update, counterfactual_rollout, grpo_advantages, grpo_batch_update,
    intervention_weights, sample_intervention, standardize, BatchMetrics, Branch, RolloutPair, UpdateContext,
};
pub use surrogate::ppo_surrogate;
pub use train::{Checkpoint, MetricsRow, Phase, ProbeConfig, PretrainConfig, TaskSource, TrainConfig, Trainer};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One step against the gradient.
    pub fn descend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }

    /// One step along the gradient (maximization).
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.descend(params, &neg);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    #[default]
    Cpo,
    Grpo,
}

/// Hyperparameters of one group update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub m: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub sigma_floor: f64,
    pub advantage_mode: AdvantageMode,
    /// Optimizer steps per batch against the same rollouts.
    pub ppo_epochs: usize,
    /// Groups (initial states) averaged into one optimizer step.
    pub groups_per_step: usize,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.01,
            m: 8,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            sigma_floor: 1e-6,
            advantage_mode: AdvantageMode::Cpo,
            ppo_epochs: 1,
            groups_per_step: 1,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if self.m < 2 {
            return bad("group size m must be at least 2");
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive");
        }
        if !(self.learning_rate > 0.0) || self.ppo_epochs == 0 || self.groups_per_step == 0 {
            return bad("learning_rate, ppo_epochs and groups_per_step must be positive");
        }
        Ok(())
    }

    pub fn adam(&self, n: usize) -> Adam {
        Adam::new(n, self.learning_rate, self.adam_beta1, self.adam_beta2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.descend(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut x = vec![1.0, 2.0];
        let mut opt = Adam::new(2, 0.1, 0.9, 0.999);
        opt.ascend(&mut x, &[0.0, 0.0]);
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn config_validation() {
        assert!(UpdateConfig::default().validate().is_ok());
        let c = UpdateConfig { m: 1, ..Default::default() };
        assert!(c.validate().is_err());
        let c = UpdateConfig { epsilon: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
