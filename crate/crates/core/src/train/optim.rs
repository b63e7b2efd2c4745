use super::config::TrainConfig;
use crate::model::ParameterSet;
use crate::{Error, Result};

const PROJECTIONS: [&str; 5] = ["qkv_proj", "attn_out", "global_qkv_proj", "ff1", "ff2"];
const NORMS: [&str; 2] = ["norm1", "norm2"];

/// Whether weight decay skips this tensor: every bias and every norm
/// parameter. Names outside the parameter naming scheme are an error.
pub fn is_decay_excluded(name: &str) -> Result<bool> {
    let unknown = || Error::UnknownParameter(name.to_string());
    let (stem, leaf) = name.rsplit_once('.').ok_or_else(unknown)?;
    let is_norm = match stem {
        "embeddings.token" | "embeddings.position" | "pooler" | "classifier" => false,
        "embeddings.norm" => true,
        _ => {
            let (layer, part) = stem.split_once('.').ok_or_else(unknown)?;
            let idx = layer.strip_prefix("layer").ok_or_else(unknown)?;
            if idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) {
                return Err(unknown());
            }
            if NORMS.contains(&part) {
                true
            } else if PROJECTIONS.contains(&part) {
                false
            } else {
                return Err(unknown());
            }
        }
    };
    match (is_norm, leaf) {
        (true, "gain" | "bias") => Ok(true),
        (false, "bias") => Ok(true),
        (false, "weight") => Ok(false),
        _ => Err(unknown()),
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ParameterSet<f32>,
    pub v: ParameterSet<f32>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet<f32>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected moment update followed by decoupled weight decay on the
/// non-excluded tensors. On error nothing is modified.
pub fn optimizer_step(
    params: &mut ParameterSet<f32>,
    grads: &ParameterSet<f32>,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.m)?;
    params.check_same_layout(&state.v)?;
    if let Some(g) = grads.tensors.iter().find(|g| g.data.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {}", g.name)));
    }
    let excluded: Vec<bool> = params
        .tensors
        .iter()
        .map(|t| is_decay_excluded(&t.name))
        .collect::<Result<_>>()?;

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, p) in params.tensors.iter_mut().enumerate() {
        let decay = if excluded[k] { 1.0 } else { 1.0 - lr * cfg.weight_decay };
        let g = &grads.tensors[k].data;
        let m = &mut state.m.tensors[k].data;
        let v = &mut state.v.tensors[k].data;
        for i in 0..p.data.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.epsilon);
            let w = p.data[i] as f64 - update;
            p.data[i] = if decay == 1.0 { w as f32 } else { (w * decay) as f32 };
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, ModelConfig};

    fn small() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            intermediate: 16,
            vocab_size: 12,
            max_positions: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn exclusion_rule() {
        assert!(is_decay_excluded("layer3.norm1.gain").unwrap());
        assert!(!is_decay_excluded("layer3.ff1.weight").unwrap());
        assert!(is_decay_excluded("classifier.bias").unwrap());
        assert!(is_decay_excluded("embeddings.norm.bias").unwrap());
        assert!(!is_decay_excluded("embeddings.token.weight").unwrap());
        for bad in ["layer.ff1.weight", "layerx.ff1.weight", "layer1.ff3.weight", "pooler.gain", "nonsense"] {
            assert!(matches!(is_decay_excluded(bad), Err(Error::UnknownParameter(_))), "{bad}");
        }
        for (name, _) in crate::model::ParamLayout::new(&small()).entries {
            is_decay_excluded(&name).unwrap();
        }
    }

    #[test]
    fn zero_gradient_steps_only_decay_weights() {
        let cfg = TrainConfig::default();
        let init = init_parameters::<f32>(&small()).unwrap();
        let mut p = init.clone();
        let zero = p.zeros_like();
        let mut state = OptimizerState::new(&p);
        let lr = 1e-3;
        optimizer_step(&mut p, &zero, &mut state, lr, &cfg).unwrap();
        for (a, b) in p.tensors.iter().zip(&init.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                if is_decay_excluded(&a.name).unwrap() {
                    assert_eq!(x.to_bits(), y.to_bits());
                } else {
                    assert_eq!(*x, (*y as f64 * (1.0 - lr * 0.01)) as f32);
                }
            }
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn no_decay_means_uniform_treatment() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = init_parameters::<f32>(&small()).unwrap();
        let mut g = p.zeros_like();
        for t in &mut g.tensors {
            t.data.fill(0.5);
        }
        let before = p.clone();
        let mut state = OptimizerState::new(&p);
        optimizer_step(&mut p, &g, &mut state, 1e-3, &cfg).unwrap();
        // first bias-corrected step moves every scalar by lr·sign(g)
        for (a, b) in p.tensors.iter().zip(&before.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!(((*y - *x) as f64 - 1e-3).abs() < 1e-7, "{}", a.name);
            }
        }
    }

    #[test]
    fn state_matters() {
        let cfg = TrainConfig::default();
        let start = init_parameters::<f32>(&small()).unwrap();
        let mut g = start.zeros_like();
        g.tensors[0].data[0] = 0.3;
        let mut g2 = g.clone();
        g2.scale(2.0);
        g.tensors[0].data[1] = -0.1;
        g2.tensors[0].data[1] = -0.2;

        let mut twice = start.clone();
        let mut s = OptimizerState::new(&twice);
        optimizer_step(&mut twice, &g, &mut s, 1e-2, &cfg).unwrap();
        optimizer_step(&mut twice, &g, &mut s, 1e-2, &cfg).unwrap();
        let mut once = start.clone();
        let mut s1 = OptimizerState::new(&once);
        optimizer_step(&mut once, &g2, &mut s1, 1e-2, &cfg).unwrap();
        assert_ne!(twice.tensors[0].data[0], once.tensors[0].data[0]);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let cfg = TrainConfig::default();
        let mut p = init_parameters::<f32>(&small()).unwrap();
        let mut g = p.zeros_like();
        g.get_mut("layer1.ff2.bias").unwrap().data[0] = f32::NAN;
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        match optimizer_step(&mut p, &g, &mut s, 1e-3, &cfg) {
            Err(Error::NonFinite(m)) => assert!(m.contains("layer1.ff2.bias")),
            other => panic!("{other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }
}
