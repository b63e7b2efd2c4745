//! Clinical case corpora: the JSON record format, split validation, length
//! statistics and the synthetic generator.
//!
//! A corpus file is a JSON array of records:
//!
//! ```json
//! [{"uid": "Task101_case1", "text": "...", "single_label_binary_classification_target": true}]
//! ```
//!
//! The label field is optional (test files omit it).

mod generate;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use generate::{generate_corpus, GeneratorConfig, TemplateSet, FILLER_WORDS, LONG_RANGE_ANCHOR};

pub const LABEL_FIELD: &str = "single_label_binary_classification_target";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalCase {
    pub uid: String,
    pub text: String,
    #[serde(
        rename = "single_label_binary_classification_target",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub label: Option<bool>,
}

impl ClinicalCase {
    pub fn new(uid: impl Into<String>, text: impl Into<String>, label: Option<bool>) -> Self {
        Self {
            uid: uid.into(),
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<ClinicalCase>,
    pub validation: Vec<ClinicalCase>,
    pub test: Vec<ClinicalCase>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// The same uid appears in two splits (or twice in one).
    UidOverlap { uid: String, first: String, second: String },
    MissingLabel { uid: String, split: String },
}

/// Parse a corpus from JSON text. `source` names the input in errors.
pub fn parse_corpus(json: &str, source: &str, expect_labels: bool) -> Result<Vec<ClinicalCase>> {
    let records: Vec<serde_json::Value> =
        serde_json::from_str(json).map_err(|e| Error::json(source, e))?;
    let mut seen = HashSet::with_capacity(records.len());
    let mut cases = Vec::with_capacity(records.len());
    for (index, rec) in records.iter().enumerate() {
        let field = |name: &'static str| {
            rec.get(name)
                .and_then(|v| v.as_str())
                .filter(|s| !s.is_empty())
                .ok_or(Error::MissingField { index, field: name })
        };
        let uid = field("uid")?.to_string();
        let text = field("text")?.to_string();
        let label = match rec.get(LABEL_FIELD) {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(v.as_bool().ok_or(Error::MissingField {
                index,
                field: LABEL_FIELD,
            })?),
        };
        if !seen.insert(uid.clone()) {
            return Err(Error::DuplicateUid { uid, index });
        }
        if expect_labels && label.is_none() {
            return Err(Error::MissingLabel { uid, index });
        }
        cases.push(ClinicalCase { uid, text, label });
    }
    Ok(cases)
}

pub fn load_corpus(path: &Path, expect_labels: bool) -> Result<Vec<ClinicalCase>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&raw, &path.display().to_string(), expect_labels)
}

/// Serialize cases as a pretty-printed JSON array.
pub fn corpus_to_json(cases: &[ClinicalCase], include_labels: bool) -> String {
    let records: Vec<ClinicalCase> = cases
        .iter()
        .map(|c| ClinicalCase {
            label: if include_labels { c.label } else { None },
            ..c.clone()
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&records).expect("cases serialize");
    s.push('\n');
    s
}

pub fn write_corpus(cases: &[ClinicalCase], path: &Path, include_labels: bool) -> Result<()> {
    std::fs::write(path, corpus_to_json(cases, include_labels)).map_err(|e| Error::io(path, e))
}

/// Check uid disjointness across splits and that train/validation are labeled.
pub fn validate_splits(split: &CorpusSplit) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for (name, cases, needs_labels) in [
        ("train", &split.train, true),
        ("validation", &split.validation, true),
        ("test", &split.test, false),
    ] {
        for c in cases {
            if let Some(first) = owner.insert(&c.uid, name) {
                violations.push(Violation::UidOverlap {
                    uid: c.uid.clone(),
                    first: first.to_string(),
                    second: name.to_string(),
                });
            }
            if needs_labels && c.label.is_none() {
                violations.push(Violation::MissingLabel {
                    uid: c.uid.clone(),
                    split: name.to_string(),
                });
            }
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub case_count: usize,
    pub mean_tokens: f64,
    /// Sample standard deviation (n − 1); 0 for a single case.
    pub sd_tokens: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Fraction of labeled cases that are positive; `None` when no case is labeled.
    pub positive_rate: Option<f64>,
}

pub fn corpus_stats<F>(cases: &[ClinicalCase], tokenizer: F) -> Result<CorpusStats>
where
    F: Fn(&str) -> usize,
{
    if cases.is_empty() {
        return Err(Error::Empty("corpus statistics need at least one case"));
    }
    let lens: Vec<usize> = cases.iter().map(|c| tokenizer(&c.text)).collect();
    let n = lens.len() as f64;
    let mean = lens.iter().sum::<usize>() as f64 / n;
    let sd = if lens.len() > 1 {
        (lens.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let labels: Vec<bool> = cases.iter().filter_map(|c| c.label).collect();
    let positive_rate = (!labels.is_empty())
        .then(|| labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64);
    Ok(CorpusStats {
        case_count: cases.len(),
        mean_tokens: mean,
        sd_tokens: sd,
        min_tokens: *lens.iter().min().unwrap(),
        max_tokens: *lens.iter().max().unwrap(),
        positive_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn whitespace_len(s: &str) -> usize {
        s.split_whitespace().count()
    }

    #[test]
    fn loads_single_record() {
        let json = r#"[{"uid": "Task101_case1", "text": "Individual reports intermittent fever...", "single_label_binary_classification_target": true}]"#;
        let cases = parse_corpus(json, "inline", true).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].uid, "Task101_case1");
        assert_eq!(cases[0].label, Some(true));
    }

    #[test]
    fn empty_array_is_empty_corpus() {
        assert!(parse_corpus("[]", "inline", true).unwrap().is_empty());
    }

    #[test]
    fn duplicate_uid_is_named() {
        let json = r#"[{"uid":"A","text":"x"},{"uid":"A","text":"y"}]"#;
        match parse_corpus(json, "inline", false) {
            Err(Error::DuplicateUid { uid, index }) => {
                assert_eq!(uid, "A");
                assert_eq!(index, 1);
            }
            other => panic!("expected duplicate uid, got {other:?}"),
        }
    }

    #[test]
    fn load_errors() {
        assert!(matches!(parse_corpus("[{", "x", false), Err(Error::Json { .. })));
        assert!(matches!(
            parse_corpus(r#"[{"text":"x"}]"#, "x", false),
            Err(Error::MissingField { index: 0, field: "uid" })
        ));
        assert!(matches!(
            parse_corpus(r#"[{"uid":"a","text":""}]"#, "x", false),
            Err(Error::MissingField { field: "text", .. })
        ));
        assert!(matches!(
            parse_corpus(r#"[{"uid":"a","text":"t"}]"#, "x", true),
            Err(Error::MissingLabel { .. })
        ));
        assert!(parse_corpus(r#"[{"uid":"a","text":"t"}]"#, "x", false).is_ok());
    }

    #[test]
    fn write_without_labels_and_empty() {
        let cases = vec![ClinicalCase::new("a", "fever", Some(true))];
        let json = corpus_to_json(&cases, false);
        assert!(!json.contains(LABEL_FIELD));
        let back = parse_corpus(&json, "x", false).unwrap();
        assert_eq!(back[0].label, None);
        assert_eq!(parse_corpus(&corpus_to_json(&[], true), "x", true).unwrap(), vec![]);
    }

    #[test]
    fn write_then_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let cases = vec![ClinicalCase::new("a", "lesion of 18 mm", Some(false))];
        write_corpus(&cases, &path, true).unwrap();
        assert_eq!(load_corpus(&path, true).unwrap(), cases);
        assert!(write_corpus(&cases, &dir.path().join("missing/c.json"), true).is_err());
    }

    fn labeled(prefix: &str, n: usize, label: Option<bool>) -> Vec<ClinicalCase> {
        (0..n)
            .map(|i| ClinicalCase::new(format!("{prefix}{i}"), "text", label))
            .collect()
    }

    #[test]
    fn validate_split_cases() {
        let mut split = CorpusSplit {
            train: labeled("tr", 400, Some(true)),
            validation: labeled("va", 100, Some(false)),
            test: labeled("te", 100, None),
        };
        assert!(validate_splits(&split).is_empty());

        split.test[0].uid = "tr5".into();
        let v = validate_splits(&split);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::UidOverlap { uid, .. } if uid == "tr5"));

        split.test[0].uid = "te0".into();
        split.train[3].label = None;
        let v = validate_splits(&split);
        assert_eq!(v, vec![Violation::MissingLabel { uid: "tr3".into(), split: "train".into() }]);
    }

    #[test]
    fn stats_examples() {
        let cases = vec![
            ClinicalCase::new("a", "one two three", Some(true)),
            ClinicalCase::new("b", "one two three four five", Some(true)),
        ];
        let s = corpus_stats(&cases, whitespace_len).unwrap();
        assert_eq!(s.mean_tokens, 4.0);
        assert_eq!((s.min_tokens, s.max_tokens), (3, 5));
        assert!((s.sd_tokens - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.positive_rate, Some(1.0));

        let s = corpus_stats(&cases[..1], whitespace_len).unwrap();
        assert_eq!(s.sd_tokens, 0.0);
        assert!(corpus_stats(&[], whitespace_len).is_err());
        let unlabeled = vec![ClinicalCase::new("a", "x", None)];
        assert_eq!(corpus_stats(&unlabeled, whitespace_len).unwrap().positive_rate, None);
    }

    proptest! {
        #[test]
        fn write_load_identity(
            texts in proptest::collection::vec(("\\PC{1,30}", proptest::option::of(any::<bool>())), 0..8)
        ) {
            let cases: Vec<ClinicalCase> = texts
                .into_iter()
                .enumerate()
                .map(|(i, (t, l))| ClinicalCase::new(format!("case{i}"), t, l))
                .collect();
            let back = parse_corpus(&corpus_to_json(&cases, true), "x", false).unwrap();
            prop_assert_eq!(back, cases);
        }
    }
}
