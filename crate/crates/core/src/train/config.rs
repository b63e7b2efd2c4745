use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warm-up, then cosine annealing with equal-length restarts.
    WarmupCosineRestarts,
    /// `base_lr` at every step.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub grad_accum_steps: usize,
    pub micro_batch: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_seq_len: usize,
    pub n_restarts: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 5e-6,
            min_lr: 1e-7,
            warmup_fraction: 0.10,
            epochs: 8,
            grad_accum_steps: 16,
            micro_batch: 1,
            weight_decay: 0.01,
            patience: 2,
            max_seq_len: 1024,
            n_restarts: 2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule: Schedule::WarmupCosineRestarts,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.min_lr > 0.0 && self.min_lr <= self.base_lr && self.base_lr.is_finite()) {
            return fail("need 0 < min_lr <= base_lr");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must be in [0, 1)");
        }
        if self.grad_accum_steps == 0 || self.micro_batch == 0 {
            return fail("grad_accum_steps and micro_batch must be >= 1");
        }
        if self.max_seq_len < 2 {
            return fail("max_seq_len must be >= 2");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return fail("need beta1, beta2 in [0, 1) and epsilon > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be >= 0");
        }
        Ok(())
    }

    /// Cases per optimizer step.
    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.grad_accum_steps
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.effective_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_json() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.effective_batch(), 16);
        assert_eq!(c.steps_per_epoch(400), 25);
        assert_eq!(c.steps_per_epoch(401), 26);
        let parsed: TrainConfig = serde_json::from_str(r#"{"base_lr": 1e-5, "schedule": "constant"}"#).unwrap();
        assert_eq!(parsed.base_lr, 1e-5);
        assert_eq!(parsed.schedule, Schedule::Constant);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"base_lr_typo": 1}"#).is_err());
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            TrainConfig { min_lr: 0.0, ..Default::default() },
            TrainConfig { min_lr: 1e-5, ..Default::default() },
            TrainConfig { warmup_fraction: 1.0, ..Default::default() },
            TrainConfig { grad_accum_steps: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
