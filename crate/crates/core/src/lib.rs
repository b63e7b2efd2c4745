//! Long-document binary classification of clinical case text.
//!
//! The crate is organised as the pipeline runs:
//!
//! - [`corpus`]: case records, JSON persistence, split validation and the
//!   template-driven synthetic generator.
//! - [`clintext`]: normalization, measurement handling, abbreviation
//!   expansion, tokenization, vocabulary and encoding.
//! - [`attention`]: sliding-window / dilated / global attention patterns and a
//!   dense reference.
//! - [`model`]: a small sparse-attention encoder with hand-written reverse
//!   mode gradients and checkpoint persistence.
//! - [`train`]: learning-rate schedule, decoupled-decay optimizer, training
//!   loop with gradient accumulation and early stopping, phase ladder.
//! - [`evalstat`]: metrics, McNemar, bootstrap intervals, effect sizes and
//!   stratified reports.

pub mod attention;
pub mod clintext;
pub mod corpus;
pub mod error;
pub mod evalstat;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, ErrorKind, Result};
