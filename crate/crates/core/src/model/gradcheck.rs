use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::forward::{backward, bce_loss, forward};
use super::params::{init_parameters, ParameterSet};
use crate::clintext::EncodedCase;
use crate::rng::named_stream;
use crate::Result;

const STEP: f64 = 1e-5;
/// Denominator floor so that parameters with (near-)zero gradient are
/// judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ProbeResult> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Random two-case batch that fits `cfg`, with a few global tokens.
fn probe_batch(cfg: &ModelConfig) -> (Vec<EncodedCase>, Vec<bool>) {
    let mut rng = named_stream(cfg.seed, "gradcheck/batch");
    let max_len = cfg.max_positions.min(12);
    let lens = [max_len, (max_len * 2 / 3).max(1)];
    let cases = lens
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let ids = (0..n)
                .map(|_| rng.random_range(0..cfg.vocab_size as u32))
                .collect();
            let global_mask = (0..n).map(|i| i == 0 || rng.random_bool(0.25)).collect();
            EncodedCase {
                uid: format!("probe{c}"),
                ids,
                attention_len: n,
                global_mask,
                label: None,
            }
        })
        .collect();
    (cases, vec![true, false])
}

/// Compares backward against central finite differences in 64-bit.
///
/// Parameters start from the usual initialization plus extra noise so that
/// norm gains and biases are away from their trivial values.
pub fn gradient_check(cfg: &ModelConfig, n_probes: usize) -> Result<GradCheckReport> {
    let mut params: ParameterSet<f64> = init_parameters(cfg)?;
    let noise = Normal::new(0.0, 0.1).unwrap();
    for t in &mut params.tensors {
        let mut rng = named_stream(cfg.seed, &format!("gradcheck/noise/{}", t.name));
        for x in &mut t.data {
            *x += noise.sample(&mut rng);
        }
    }
    let (batch, labels) = probe_batch(cfg);
    let (_, cache) = forward(&params, &batch, cfg)?;
    let grads = backward(&params, cfg, &cache, &labels)?;
    let loss_at = |p: &ParameterSet<f64>| -> Result<f64> {
        let (logits, _) = forward(p, &batch, cfg)?;
        bce_loss(&logits, &labels)
    };

    let mut rng = named_stream(cfg.seed, "gradcheck/probes");
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let ti = rng.random_range(0..params.tensors.len());
        let index = rng.random_range(0..params.tensors[ti].len());
        let orig = params.tensors[ti].data[index];
        params.tensors[ti].data[index] = orig + STEP;
        let up = loss_at(&params)?;
        params.tensors[ti].data[index] = orig - STEP;
        let down = loss_at(&params)?;
        params.tensors[ti].data[index] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grads.tensors[ti].data[index];
        probes.push(ProbeResult {
            tensor: params.tensors[ti].name.clone(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(separate: bool) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            hidden: 8,
            intermediate: 16,
            vocab_size: 10,
            max_positions: 12,
            window: 2,
            dilation_per_layer: vec![1, 2],
            separate_global_projections: separate,
            seed: 11,
        }
    }

    #[test]
    fn tiny_models_pass() {
        for separate in [true, false] {
            let r = gradient_check(&cfg(separate), 60).unwrap();
            assert_eq!(r.probes.len(), 60);
            assert!(r.max_rel_error < 1e-4, "{:?}", r.worst());
        }
    }

    #[test]
    fn every_parameter_of_a_micro_model() {
        let cfg = ModelConfig {
            hidden: 4,
            intermediate: 4,
            vocab_size: 4,
            max_positions: 6,
            ..cfg(true)
        };
        let r = gradient_check(&cfg, 400).unwrap();
        assert!(r.max_rel_error < 1e-4, "{:?}", r.worst());
    }

    #[test]
    fn zero_probes_and_determinism() {
        let r = gradient_check(&cfg(true), 0).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.worst().is_none());
        assert_eq!(gradient_check(&cfg(true), 5).unwrap(), gradient_check(&cfg(true), 5).unwrap());
    }
}
