use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub window: usize,
    /// One dilation per layer; empty means 1 everywhere.
    pub dilation_per_layer: Vec<usize>,
    pub separate_global_projections: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            hidden: 64,
            intermediate: 256,
            vocab_size: 8192,
            max_positions: 1025,
            window: 8,
            dilation_per_layer: vec![1, 1],
            separate_global_projections: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 12 layers, 12 heads, hidden 768, intermediate 3072, with the standard
    /// Longformer-base vocabulary (50,265) and position table (4,098).
    pub fn base_scale() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            hidden: 768,
            intermediate: 3072,
            vocab_size: 50_265,
            max_positions: 4_098,
            window: 512,
            dilation_per_layer: vec![1; 12],
            separate_global_projections: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("hidden", self.hidden),
            ("intermediate", self.intermediate),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.hidden % self.n_heads != 0 {
            return bad(format!(
                "hidden {} not divisible by n_heads {}",
                self.hidden, self.n_heads
            ));
        }
        if self.window < 2 || self.window % 2 != 0 {
            return bad(format!("window {} must be even and >= 2", self.window));
        }
        if !self.dilation_per_layer.is_empty() && self.dilation_per_layer.len() != self.n_layers {
            return bad(format!(
                "dilation_per_layer has {} entries for {} layers",
                self.dilation_per_layer.len(),
                self.n_layers
            ));
        }
        if self.dilation_per_layer.contains(&0) {
            return bad("dilations must be >= 1".into());
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        self.dilation_per_layer.get(layer).copied().unwrap_or(1)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }
}

/// Indices of one layer's tensors within a [`ParamLayout`].
#[derive(Debug, Clone, Copy)]
pub struct LayerSlots {
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub global_qkv: Option<(usize, usize)>,
    pub norm1_g: usize,
    pub norm1_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
    pub norm2_g: usize,
    pub norm2_b: usize,
}

/// Ordered tensor names and shapes implied by a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub entries: Vec<(String, Vec<usize>)>,
    pub token: usize,
    pub position: usize,
    pub emb_norm_g: usize,
    pub emb_norm_b: usize,
    pub layers: Vec<LayerSlots>,
    pub pooler_w: usize,
    pub pooler_b: usize,
    pub classifier_w: usize,
    pub classifier_b: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            entries.push((name, shape));
            entries.len() - 1
        };
        let (h, i, v, p) = (cfg.hidden, cfg.intermediate, cfg.vocab_size, cfg.max_positions);
        let token = push("embeddings.token.weight".into(), vec![v, h]);
        let position = push("embeddings.position.weight".into(), vec![p, h]);
        let emb_norm_g = push("embeddings.norm.gain".into(), vec![h]);
        let emb_norm_b = push("embeddings.norm.bias".into(), vec![h]);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let n = |s: &str| format!("layer{l}.{s}");
            let qkv_w = push(n("qkv_proj.weight"), vec![h, 3 * h]);
            let qkv_b = push(n("qkv_proj.bias"), vec![3 * h]);
            let out_w = push(n("attn_out.weight"), vec![h, h]);
            let out_b = push(n("attn_out.bias"), vec![h]);
            let global_qkv = cfg.separate_global_projections.then(|| {
                (
                    push(n("global_qkv_proj.weight"), vec![h, 3 * h]),
                    push(n("global_qkv_proj.bias"), vec![3 * h]),
                )
            });
            let norm1_g = push(n("norm1.gain"), vec![h]);
            let norm1_b = push(n("norm1.bias"), vec![h]);
            let ff1_w = push(n("ff1.weight"), vec![h, i]);
            let ff1_b = push(n("ff1.bias"), vec![i]);
            let ff2_w = push(n("ff2.weight"), vec![i, h]);
            let ff2_b = push(n("ff2.bias"), vec![h]);
            let norm2_g = push(n("norm2.gain"), vec![h]);
            let norm2_b = push(n("norm2.bias"), vec![h]);
            layers.push(LayerSlots {
                qkv_w,
                qkv_b,
                out_w,
                out_b,
                global_qkv,
                norm1_g,
                norm1_b,
                ff1_w,
                ff1_b,
                ff2_w,
                ff2_b,
                norm2_g,
                norm2_b,
            });
        }
        let pooler_w = push("pooler.weight".into(), vec![h, h]);
        let pooler_b = push("pooler.bias".into(), vec![h]);
        let classifier_w = push("classifier.weight".into(), vec![h, 1]);
        let classifier_b = push("classifier.bias".into(), vec![1]);
        Self {
            entries,
            token,
            position,
            emb_norm_g,
            emb_norm_b,
            layers,
            pooler_w,
            pooler_b,
            classifier_w,
            classifier_b,
        }
    }
}

/// Closed-form parameter count.
pub fn count_parameters(cfg: &ModelConfig) -> u64 {
    let (h, i, v, p) = (
        cfg.hidden as u64,
        cfg.intermediate as u64,
        cfg.vocab_size as u64,
        cfg.max_positions as u64,
    );
    let embeddings = v * h + p * h + 2 * h;
    let qkv = h * 3 * h + 3 * h;
    let global = if cfg.separate_global_projections { qkv } else { 0 };
    let per_layer = qkv + global + (h * h + h) + 2 * h + (h * i + i) + (i * h + h) + 2 * h;
    let head = (h * h + h) + (h + 1);
    embeddings + cfg.n_layers as u64 * per_layer + head
}
