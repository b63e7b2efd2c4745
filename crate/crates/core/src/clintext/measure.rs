use serde::{Deserialize, Serialize};

use super::text::tokenize_with_spans;
use crate::{Error, Result};

pub const NUM_SMALL: &str = "<num_small>";
pub const NUM_MED: &str = "<num_med>";
pub const NUM_LARGE: &str = "<num_large>";

/// The closed set of recognised units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Mm,
    Cm,
    M,
    Ml,
    L,
    Mg,
    G,
    Kg,
    Bpm,
    Mmhg,
    #[serde(rename = "°c")]
    Celsius,
    #[serde(rename = "%")]
    Percent,
}

impl Unit {
    pub fn parse(s: &str) -> Option<Unit> {
        Some(match s {
            "mm" => Unit::Mm,
            "cm" => Unit::Cm,
            "m" => Unit::M,
            "ml" => Unit::Ml,
            "l" => Unit::L,
            "mg" => Unit::Mg,
            "g" => Unit::G,
            "kg" => Unit::Kg,
            "bpm" => Unit::Bpm,
            "mmhg" => Unit::Mmhg,
            "°c" => Unit::Celsius,
            "%" => Unit::Percent,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Mm => "mm",
            Unit::Cm => "cm",
            Unit::M => "m",
            Unit::Ml => "ml",
            Unit::L => "l",
            Unit::Mg => "mg",
            Unit::G => "g",
            Unit::Kg => "kg",
            Unit::Bpm => "bpm",
            Unit::Mmhg => "mmhg",
            Unit::Celsius => "°c",
            Unit::Percent => "%",
        }
    }

    /// Factor to the bucketing base unit: mm for lengths, mg for masses, ml
    /// for volumes, identity otherwise.
    pub fn base_factor(self) -> f64 {
        match self {
            Unit::Cm => 10.0,
            Unit::M => 1000.0,
            Unit::L => 1000.0,
            Unit::G => 1000.0,
            Unit::Kg => 1.0e6,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub entity: String,
    pub value: f64,
    pub unit: Unit,
    /// Character offsets `[start, end)` of the whole `ENTITY of NUMBER UNIT` phrase.
    pub span: (usize, usize),
}

fn is_entity_word(tok: &str) -> bool {
    tok != "of" && tok.chars().next().is_some_and(char::is_alphabetic)
}

fn parse_number(tok: &str) -> Option<f64> {
    if !tok.chars().next()?.is_ascii_digit() {
        return None;
    }
    // a comma between digits is a thousands separator
    tok.replace(',', "").parse::<f64>().ok()
}

/// Find every `ENTITY of NUMBER UNIT` phrase, scanning left to right over
/// tokens; matches never overlap.
pub fn parse_measurements(text: &str) -> Vec<Measurement> {
    let toks = tokenize_with_spans(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i + 3 < toks.len() {
        let window = &toks[i..i + 4];
        if is_entity_word(&window[0].text) && window[1].text == "of" {
            if let (Some(value), Some(unit)) =
                (parse_number(&window[2].text), Unit::parse(&window[3].text))
            {
                out.push(Measurement {
                    entity: window[0].text.clone(),
                    value,
                    unit,
                    span: (window[0].start, window[3].end),
                });
                i += 4;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Bucket token for a magnitude after unit scaling: small < 10 ≤ med < 100 ≤ large.
pub fn magnitude_bucket(value: f64, unit: Unit) -> &'static str {
    let scaled = value * unit.base_factor();
    if scaled < 10.0 {
        NUM_SMALL
    } else if scaled < 100.0 {
        NUM_MED
    } else {
        NUM_LARGE
    }
}

/// Replace each measurement's number token with its magnitude bucket.
///
/// Measurements are located in order as `entity, "of", number, unit` token
/// windows; a measurement that cannot be found after the previous one is a
/// span mismatch.
pub fn rewrite_measurements(tokens: &[String], measurements: &[Measurement]) -> Result<Vec<String>> {
    let mut out = tokens.to_vec();
    let mut cursor = 0;
    for m in measurements {
        let found = (cursor..tokens.len().saturating_sub(3)).find(|&i| {
            tokens[i] == m.entity
                && tokens[i + 1] == "of"
                && parse_number(&tokens[i + 2]) == Some(m.value)
                && tokens[i + 3] == m.unit.as_str()
        });
        let Some(i) = found else {
            return Err(Error::SpanMismatch(format!(
                "{} of {} {} not found after token {cursor}",
                m.entity,
                m.value,
                m.unit.as_str()
            )));
        };
        out[i + 2] = magnitude_bucket(m.value, m.unit).to_string();
        cursor = i + 4;
    }
    Ok(out)
}
