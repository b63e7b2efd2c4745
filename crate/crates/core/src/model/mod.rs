//! The sparse-attention encoder classifier.
//!
//! Layout per case of length `L` (CLS at position 0):
//!
//! ```text
//! h = LayerNorm(token_emb[ids] + position_emb[0..L])
//! for each layer:
//!     h = h + attn_out(SparseMHA(LayerNorm1(h)))
//!     h = h + ff2(GELU(ff1(LayerNorm2(h))))
//! pooled = tanh(pooler(h[0]))
//! logit  = classifier(pooled)
//! ```
//!
//! Attention rows follow [`AttentionPattern`](crate::attention::AttentionPattern)
//! with the layer's dilation; global positions come from the encoded
//! case's global mask. With separate global projections, global query rows
//! use their own query/key/value projections over the whole sequence.
//!
//! Gradients are computed by hand in [`backward`] / [`case_gradient`]; the
//! same code runs in `f32` for training and `f64` for finite-difference
//! checks.

mod checkpoint;
mod config;
mod forward;
mod gradcheck;
mod params;

use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, Manifest, TensorEntry, FORMAT_VERSION, MANIFEST_FILE,
    WEIGHTS_FILE,
};
pub use config::{count_parameters, ModelConfig, ParamLayout};
pub use forward::{
    backward, bce_loss, case_gradient, case_logit, forward, sigmoid, ActivationCache, CaseCache,
};
pub use gradcheck::{gradient_check, GradCheckReport, ProbeResult};
pub use params::{init_parameters, ParameterSet, Tensor};

/// Floating-point element type of parameters and activations.
pub trait Real:
    Float + NumAssign + LinalgScalar + ScalarOperand + FromPrimitive + Debug + Send + Sync + 'static
{
}
impl Real for f32 {}
impl Real for f64 {}
