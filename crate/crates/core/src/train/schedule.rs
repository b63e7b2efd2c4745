use std::f64::consts::PI;

use super::config::{Schedule, TrainConfig};
use crate::{Error, Result};

pub fn warmup_steps(total_steps: usize, cfg: &TrainConfig) -> usize {
    (cfg.warmup_fraction * total_steps as f64).round() as usize
}

/// Learning rate for optimizer step `step` (0-based) of `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::OutOfBounds(format!(
            "lr_at step {step} of {total_steps} total steps"
        )));
    }
    if cfg.schedule == Schedule::Constant {
        return Ok(cfg.base_lr);
    }
    let warm = warmup_steps(total_steps, cfg);
    if step < warm {
        return Ok(cfg.base_lr * step as f64 / warm as f64);
    }
    let rest = total_steps - warm;
    if rest == 0 {
        return Ok(cfg.base_lr);
    }
    let cycles = cfg.n_restarts + 1;
    let u = ((step - warm) * cycles) as f64 / rest as f64;
    let cycle = (u.floor() as usize).min(cfg.n_restarts);
    let t = u - cycle as f64;
    // written as a drop from base_lr so that t = 0 yields base_lr exactly
    let lr = cfg.base_lr - 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 - (PI * t).cos());
    Ok(lr.max(cfg.min_lr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(step: usize, total: usize, cfg: &TrainConfig) -> f64 {
        let w = (0.1 * total as f64).round() as usize;
        if step < w {
            return 5e-6 * step as f64 / w as f64;
        }
        let cycle_len = (total - w) as f64 / 3.0;
        let pos = (step - w) as f64;
        let k = ((pos / cycle_len).floor()).min(2.0);
        let t = (pos - k * cycle_len) / cycle_len;
        cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + (PI * t).cos())
    }

    #[test]
    fn boundary_values() {
        let cfg = TrainConfig::default();
        let total = 200;
        let w = warmup_steps(total, &cfg);
        assert_eq!(w, 20);
        assert_eq!(lr_at(0, total, &cfg).unwrap(), 0.0);
        assert_eq!(lr_at(w, total, &cfg).unwrap(), 5e-6);
        // a cycle is 60 steps; its midpoint is 30 steps in
        assert!((lr_at(w + 30, total, &cfg).unwrap() - 2.55e-6).abs() < 1e-12);
        for s in w..=total {
            let lr = lr_at(s, total, &cfg).unwrap();
            assert!(lr >= 1e-7);
            assert!((lr - oracle(s, total, &cfg)).abs() < 1e-15, "step {s}");
        }
        // restart: back to base at each cycle start
        assert_eq!(lr_at(w + 60, total, &cfg).unwrap(), 5e-6);
        assert!(lr_at(total + 1, total, &cfg).is_err());
        assert!(lr_at(0, 0, &cfg).is_err());
    }

    #[test]
    fn warmup_is_continuous_and_linear() {
        let cfg = TrainConfig::default();
        let total = 1000;
        let w = warmup_steps(total, &cfg);
        let before = lr_at(w - 1, total, &cfg).unwrap();
        assert!((5e-6 - before - 5e-6 / w as f64).abs() < 1e-18);
        let c = TrainConfig { schedule: Schedule::Constant, ..cfg };
        assert_eq!(lr_at(0, total, &c).unwrap(), 5e-6);
    }
}
