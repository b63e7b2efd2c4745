use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encode::{preprocess_tokens, PipelineConfig};
use super::lexicon::AbbreviationMap;
use crate::corpus::ClinicalCase;
use crate::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

const SPECIALS: [&str; 3] = ["<pad>", "<cls>", "<unk>"];

/// Word-level vocabulary. Ids 0..3 are `<pad>`, `<cls>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;
    fn try_from(f: VocabFile) -> Result<Self> {
        if f.tokens.len() < SPECIALS.len() || f.tokens[..3] != SPECIALS {
            return Err(Error::InvalidConfig(
                "vocabulary must start with <pad>, <cls>, <unk>".into(),
            ));
        }
        Vocabulary::from_tokens(f.tokens[3..].to_vec())
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            tokens: v.id_to_token,
        }
    }
}

impl Vocabulary {
    /// Build from ranked non-special tokens (specials are prepended).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token,
        })
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// SHA-256 over the id-ordered token list, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.id_to_token {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json("vocabulary", e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Count preprocessed tokens over `cases` (the training split), keep those
/// with frequency ≥ `min_freq`, rank by (frequency desc, token asc) and keep
/// the first `max_size - 3`.
pub fn build_vocabulary(
    cases: &[ClinicalCase],
    pipeline: &PipelineConfig,
    abbrev: &AbbreviationMap,
    min_freq: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    if cases.is_empty() {
        return Err(Error::Empty("vocabulary corpus"));
    }
    if max_size < SPECIALS.len() {
        return Err(Error::InvalidConfig(format!(
            "vocabulary max_size {max_size} cannot hold the 3 special tokens"
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for case in cases {
        for tok in preprocess_tokens(&case.text, pipeline, abbrev)? {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq.max(1) && !SPECIALS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - SPECIALS.len());
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cases(texts: &[&str]) -> Vec<ClinicalCase> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| ClinicalCase::new(format!("c{i}"), *t, Some(true)))
            .collect()
    }

    fn build(texts: &[&str], min_freq: usize, max_size: usize) -> Vocabulary {
        build_vocabulary(
            &cases(texts),
            &PipelineConfig::default(),
            &AbbreviationMap::default(),
            min_freq,
            max_size,
        )
        .unwrap()
    }

    #[test]
    fn ranking_rule() {
        let v = build(&["fever cough", "fever"], 1, 8192);
        assert_eq!(v.tokens(), ["<pad>", "<cls>", "<unk>", "fever", "cough"]);
        assert_eq!(v.id("fever"), 3);
        assert_eq!(v.id("cough"), 4);
        assert_eq!(v.id("rash"), UNK_ID);
    }

    #[test]
    fn frequency_filter_and_truncation() {
        let v = build(&["fever cough", "fever"], 2, 8192);
        assert_eq!(v.tokens()[3..], ["fever"]);
        let v = build(&["fever cough", "fever"], 1, 4);
        assert_eq!(v.size(), 4);
        assert_eq!(v.tokens()[3], "fever");
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build(&["b a c", "c b a"], 1, 100);
        assert_eq!(v.tokens()[3..], ["a", "b", "c"]);
    }

    #[test]
    fn empty_corpus_is_error() {
        let err = build_vocabulary(&[], &PipelineConfig::default(), &AbbreviationMap::default(), 1, 10);
        assert!(matches!(err, Err(Error::Empty(_))));
    }

    #[test]
    fn deterministic_and_round_trips() {
        let texts = ["lesion of 18 mm noted", "mass of 2 cm", "lesion again"];
        let a = build(&texts, 1, 100);
        let b = build(&texts, 1, 100);
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let json = serde_json::to_string(&a).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
