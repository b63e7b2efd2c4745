//! Clinical text preprocessing.
//!
//! The encoding pipeline is: [`normalize_text`] → [`expand_abbreviations`] →
//! [`tokenize`] → [`parse_measurements`] / [`rewrite_measurements`] →
//! vocabulary lookup → CLS prefix → head truncation. Which optional steps run
//! is controlled by [`PipelineConfig`].

mod encode;
mod lexicon;
mod measure;
mod text;
mod vocab;

pub use encode::{encode, preprocess_tokens, EncodedCase, PipelineAssets, PipelineConfig};
pub use lexicon::{expand_abbreviations, AbbreviationMap, MedicalLexicon};
pub use measure::{
    magnitude_bucket, parse_measurements, rewrite_measurements, Measurement, Unit, NUM_LARGE,
    NUM_MED, NUM_SMALL,
};
pub use text::{normalize_text, token_count, tokenize, tokenize_with_spans, TokenSpan};
pub use vocab::{build_vocabulary, Vocabulary, CLS_ID, PAD_ID, UNK_ID};
