use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lexicon::{expand_abbreviations, AbbreviationMap, MedicalLexicon};
use super::measure::{parse_measurements, rewrite_measurements};
use super::text::{normalize_text, tokenize};
use super::vocab::{Vocabulary, CLS_ID};
use crate::corpus::ClinicalCase;
use crate::Result;

/// Which optional preprocessing steps run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub expand_abbreviations: bool,
    pub rewrite_measurements: bool,
    /// Global attention on lexicon mentions (CLS is always global).
    pub global_entity_attention: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            expand_abbreviations: true,
            rewrite_measurements: true,
            global_entity_attention: true,
        }
    }
}

impl PipelineConfig {
    /// Normalization and tokenization only.
    pub fn plain() -> Self {
        Self {
            expand_abbreviations: false,
            rewrite_measurements: false,
            global_entity_attention: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedCase {
    pub uid: String,
    pub ids: Vec<u32>,
    /// Number of leading positions that take part in attention; `ids` may
    /// carry padding past this point.
    pub attention_len: usize,
    pub global_mask: Vec<bool>,
    pub label: Option<bool>,
}

/// The token stream of one text under `pipeline`, before id mapping.
pub fn preprocess_tokens(
    text: &str,
    pipeline: &PipelineConfig,
    abbrev: &AbbreviationMap,
) -> Result<Vec<String>> {
    let mut norm = normalize_text(text);
    if pipeline.expand_abbreviations {
        norm = expand_abbreviations(&norm, abbrev);
    }
    let tokens = tokenize(&norm);
    if pipeline.rewrite_measurements {
        rewrite_measurements(&tokens, &parse_measurements(&norm))
    } else {
        Ok(tokens)
    }
}

/// Encode one case: preprocess, map to ids, prefix CLS, keep the first
/// `max_len` positions.
pub fn encode(
    case: &ClinicalCase,
    vocab: &Vocabulary,
    abbrev: &AbbreviationMap,
    lexicon: &MedicalLexicon,
    pipeline: &PipelineConfig,
    max_len: usize,
) -> Result<EncodedCase> {
    let max_len = max_len.max(2);
    let tokens = preprocess_tokens(&case.text, pipeline, abbrev)?;
    let keep = tokens.len().min(max_len - 1);
    let mut ids = Vec::with_capacity(keep + 1);
    let mut global_mask = Vec::with_capacity(keep + 1);
    ids.push(CLS_ID);
    global_mask.push(true);
    for tok in &tokens[..keep] {
        ids.push(vocab.id(tok));
        global_mask.push(pipeline.global_entity_attention && lexicon.contains(tok));
    }
    Ok(EncodedCase {
        uid: case.uid.clone(),
        attention_len: ids.len(),
        ids,
        global_mask,
        label: case.label,
    })
}

/// Everything needed to turn raw cases into model input.
#[derive(Debug, Clone)]
pub struct PipelineAssets {
    pub vocab: Vocabulary,
    pub abbreviations: AbbreviationMap,
    pub lexicon: MedicalLexicon,
    pub pipeline: PipelineConfig,
}

impl PipelineAssets {
    pub fn encode(&self, case: &ClinicalCase, max_len: usize) -> Result<EncodedCase> {
        encode(case, &self.vocab, &self.abbreviations, &self.lexicon, &self.pipeline, max_len)
    }

    /// Encodes in parallel; output order follows `cases`.
    pub fn encode_all(&self, cases: &[ClinicalCase], max_len: usize) -> Result<Vec<EncodedCase>> {
        cases.par_iter().map(|c| self.encode(c, max_len)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clintext::{build_vocabulary, NUM_MED, UNK_ID};
    use proptest::prelude::*;

    fn case(text: &str) -> ClinicalCase {
        ClinicalCase::new("u1", text, Some(true))
    }

    #[test]
    fn truncates_to_max_len_keeping_head() {
        let text = (0..2000).map(|i| format!("w{}", i % 7)).collect::<Vec<_>>().join(" ");
        let c = case(&text);
        let vocab = build_vocabulary(
            std::slice::from_ref(&c),
            &PipelineConfig::default(),
            &AbbreviationMap::default(),
            1,
            100,
        )
        .unwrap();
        let enc = encode(
            &c,
            &vocab,
            &AbbreviationMap::default(),
            &MedicalLexicon::default(),
            &PipelineConfig::default(),
            1024,
        )
        .unwrap();
        assert_eq!(enc.ids.len(), 1024);
        assert_eq!(enc.attention_len, 1024);
        assert_eq!(enc.ids[0], CLS_ID);
        assert_eq!(vocab.token(enc.ids[1]), Some("w0"));
    }

    #[test]
    fn global_mask_marks_lexicon_tokens() {
        let c = case("lesion of 18 mm");
        let vocab = Vocabulary::from_tokens(vec!["lesion".into(), "of".into()]).unwrap();
        let lex = MedicalLexicon::new(["lesion"]).unwrap();
        let enc = encode(&c, &vocab, &AbbreviationMap::default(), &lex, &PipelineConfig::default(), 64)
            .unwrap();
        assert_eq!(enc.global_mask, [true, true, false, false, false]);
        assert_eq!(enc.ids[3], UNK_ID);

        let enc = encode(
            &c,
            &vocab,
            &AbbreviationMap::default(),
            &MedicalLexicon::default(),
            &PipelineConfig::default(),
            64,
        )
        .unwrap();
        assert_eq!(enc.global_mask, [true, false, false, false, false]);
    }

    #[test]
    fn pipeline_expands_and_buckets() {
        let abbrev = AbbreviationMap::from_pairs([("pt", "patient")]).unwrap();
        let toks = preprocess_tokens("Pt has lesion of 18 MM", &PipelineConfig::default(), &abbrev).unwrap();
        assert_eq!(toks, ["patient", "has", "lesion", "of", NUM_MED, "mm"]);
        let toks = preprocess_tokens("Pt has lesion of 18 MM", &PipelineConfig::plain(), &abbrev).unwrap();
        assert_eq!(toks, ["pt", "has", "lesion", "of", "18", "mm"]);
    }

    proptest! {
        #[test]
        fn encode_invariants(text in "[a-z0-9 .,]{0,80}", max_len in 2usize..40) {
            let c = case(&text);
            let vocab = Vocabulary::from_tokens(vec!["a".into(), "of".into()]).unwrap();
            let lex = MedicalLexicon::new(["a"]).unwrap();
            let enc = encode(&c, &vocab, &AbbreviationMap::builtin(), &lex, &PipelineConfig::default(), max_len).unwrap();
            prop_assert!(!enc.ids.is_empty() && enc.ids.len() <= max_len);
            prop_assert_eq!(enc.ids.len(), enc.global_mask.len());
            prop_assert!(enc.global_mask[0]);
            prop_assert_eq!(enc.ids[0], CLS_ID);
            prop_assert!(enc.ids.iter().all(|&i| (i as usize) < vocab.size()));
        }
    }
}
