use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Whole-word abbreviation expansions. Keys are lowercase and whitespace-free.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct AbbreviationMap {
    entries: BTreeMap<String, String>,
}

impl AbbreviationMap {
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self> {
        for (k, v) in &entries {
            if k.is_empty() || k.chars().any(char::is_whitespace) || k.to_lowercase() != *k {
                return Err(Error::InvalidConfig(format!(
                    "abbreviation key {k:?} must be lowercase without whitespace"
                )));
            }
            if k == v {
                return Err(Error::InvalidConfig(format!("abbreviation {k:?} maps to itself")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }

    /// The small default map bundled with the crate.
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../data/abbreviations.json"))
            .expect("bundled abbreviation map is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl TryFrom<BTreeMap<String, String>> for AbbreviationMap {
    type Error = Error;
    fn try_from(m: BTreeMap<String, String>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<AbbreviationMap> for BTreeMap<String, String> {
    fn from(m: AbbreviationMap) -> Self {
        m.entries
    }
}

/// Single pass, whole word, left to right. Words are maximal alphanumeric
/// runs; replacements are copied through without being rescanned.
pub fn expand_abbreviations(text: &str, map: &AbbreviationMap) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if !word.is_empty() {
            out.push_str(map.get(word).unwrap_or(word));
            word.clear();
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Terms whose token mentions receive global attention and count toward the
/// complexity score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MedicalLexicon {
    terms: BTreeSet<String>,
}

impl MedicalLexicon {
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for t in terms {
            let t: String = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) || t.to_lowercase() != t {
                return Err(Error::InvalidConfig(format!(
                    "lexicon term {t:?} must be a single lowercase token"
                )));
            }
            set.insert(t);
        }
        Ok(Self { terms: set })
    }

    /// Parse the line format: one term per line, `#` starts a comment.
    pub fn parse(src: &str) -> Result<Self> {
        Self::new(
            src.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/lexicon.txt")).expect("bundled lexicon is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.terms.contains(token)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }
}
