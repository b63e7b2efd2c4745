use serde::{Deserialize, Serialize};

use super::metrics::{check_aligned, confusion};
use super::stats::percentile;
use crate::clintext::{normalize_text, tokenize, MedicalLexicon};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrataScheme {
    Length,
    Complexity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub name: String,
    pub case_count: usize,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub scheme: StrataScheme,
    pub buckets: Vec<Bucket>,
}

pub const LENGTH_BUCKETS: [&str; 3] = ["short (<=200)", "medium (201-400)", "long (>400)"];
pub const COMPLEXITY_BUCKETS: [&str; 3] = ["low", "medium", "high"];

fn bucketed(
    scheme: StrataScheme,
    names: [&str; 3],
    assignment: &[usize],
    predictions: &[bool],
    labels: &[bool],
) -> Result<StratifiedReport> {
    let buckets = names
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let idx: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == b).collect();
            let (f1, accuracy) = if idx.is_empty() {
                (0.0, 0.0)
            } else {
                let p: Vec<bool> = idx.iter().map(|&i| predictions[i]).collect();
                let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
                let cm = confusion(&p, &y)?;
                (cm.f1(), cm.accuracy())
            };
            Ok(Bucket {
                name: name.to_string(),
                case_count: idx.len(),
                f1,
                accuracy,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StratifiedReport { scheme, buckets })
}

pub fn length_bucket(tokens: usize) -> usize {
    match tokens {
        0..=200 => 0,
        201..=400 => 1,
        _ => 2,
    }
}

pub fn stratify_length(token_counts: &[usize], predictions: &[bool], labels: &[bool]) -> Result<StratifiedReport> {
    check_aligned("token counts vs predictions", token_counts.len(), predictions.len())?;
    check_aligned("predictions vs labels", predictions.len(), labels.len())?;
    let assignment: Vec<usize> = token_counts.iter().map(|&t| length_bucket(t)).collect();
    bucketed(StrataScheme::Length, LENGTH_BUCKETS, &assignment, predictions, labels)
}

/// Lexicon occurrences per 100 tokens plus the number of distinct lexicon
/// terms present.
pub fn complexity_score(text: &str, lexicon: &MedicalLexicon) -> Result<f64> {
    if lexicon.is_empty() {
        return Err(Error::Empty("medical lexicon"));
    }
    let tokens = tokenize(&normalize_text(text));
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<&String> = tokens.iter().filter(|t| lexicon.contains(t)).collect();
    let mut distinct = hits.clone();
    distinct.sort();
    distinct.dedup();
    Ok(hits.len() as f64 * 100.0 / tokens.len() as f64 + distinct.len() as f64)
}

/// Tertile cut points of the evaluated scores; a score equal to a cut point
/// goes to the lower bucket.
pub fn tertile_bounds(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::Empty("complexity scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((percentile(&sorted, 1.0 / 3.0), percentile(&sorted, 2.0 / 3.0)))
}

pub fn stratify_complexity(scores: &[f64], predictions: &[bool], labels: &[bool]) -> Result<StratifiedReport> {
    check_aligned("complexity scores vs predictions", scores.len(), predictions.len())?;
    check_aligned("predictions vs labels", predictions.len(), labels.len())?;
    let (t1, t2) = tertile_bounds(scores)?;
    let assignment: Vec<usize> = scores
        .iter()
        .map(|&s| if s <= t1 { 0 } else if s <= t2 { 1 } else { 2 })
        .collect();
    bucketed(StrataScheme::Complexity, COMPLEXITY_BUCKETS, &assignment, predictions, labels)
}
