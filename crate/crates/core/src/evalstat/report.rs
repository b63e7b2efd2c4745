use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{auc_pr, auc_roc, check_aligned, confusion, ConfusionMatrix};
use super::stats::{bootstrap_ci, cohens_d, mcnemar, ConfidenceInterval, DEFAULT_RESAMPLES};
use super::strata::{complexity_score, stratify_complexity, stratify_length, StratifiedReport};
use crate::clintext::{token_count, MedicalLexicon};
use crate::corpus::ClinicalCase;
use crate::{Error, Result};

pub const ZERO_DENOMINATOR_NOTE: &str =
    "metrics with a zero denominator (e.g. precision without positive predictions) are reported as 0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub mcc: f64,
    /// 95% percentile-bootstrap intervals keyed by metric name.
    pub confidence_intervals: BTreeMap<String, ConfidenceInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub metrics: MetricsReport,
    pub length: StratifiedReport,
    pub complexity: StratifiedReport,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub b: u64,
    pub c: u64,
    pub chi2: f64,
    pub p_value: f64,
    /// Over per-case 0/1 correctness, second model minus first. `None` when
    /// both models have constant, different correctness (zero pooled sd).
    pub cohen_d: Option<f64>,
    /// Second model minus first, per metric.
    pub deltas: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub first: FullReport,
    pub second: FullReport,
    pub comparison: PairedComparison,
    pub notes: Vec<String>,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub uid: String,
    pub score: f64,
    pub prediction: bool,
}

pub fn write_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(preds).map_err(|e| Error::json("predictions", e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let preds: Vec<Prediction> =
        serde_json::from_str(&text).map_err(|e| Error::json(&path.display().to_string(), e))?;
    if let Some(p) = preds.iter().find(|p| !(0.0..=1.0).contains(&p.score)) {
        return Err(Error::OutOfBounds(format!("score {} for {} outside [0, 1]", p.score, p.uid)));
    }
    Ok(preds)
}

const CI_METRICS: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

pub fn metrics_report(scores: &[f64], predictions: &[bool], labels: &[bool], seed: u64) -> Result<MetricsReport> {
    check_aligned("scores vs predictions", scores.len(), predictions.len())?;
    let cm = confusion(predictions, labels)?;
    let mut confidence_intervals = BTreeMap::new();
    if labels.len() >= 2 {
        for name in CI_METRICS {
            let stat = |idx: &[usize]| {
                let p: Vec<bool> = idx.iter().map(|&i| predictions[i]).collect();
                let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
                let m = confusion(&p, &y).ok()?.metrics();
                Some(match name {
                    "accuracy" => m.accuracy,
                    "precision" => m.precision,
                    "recall" => m.recall,
                    _ => m.f1,
                })
            };
            confidence_intervals.insert(
                name.to_string(),
                bootstrap_ci(labels.len(), stat, DEFAULT_RESAMPLES, seed)?,
            );
        }
    }
    Ok(MetricsReport {
        n: labels.len(),
        confusion: cm,
        accuracy: cm.accuracy(),
        precision: cm.precision(),
        recall: cm.recall(),
        f1: cm.f1(),
        auc_roc: auc_roc(scores, labels)?,
        auc_pr: auc_pr(scores, labels)?,
        mcc: cm.mcc(),
        confidence_intervals,
    })
}

pub fn full_report(
    scores: &[f64],
    predictions: &[bool],
    labels: &[bool],
    cases: &[ClinicalCase],
    lexicon: &MedicalLexicon,
    seed: u64,
) -> Result<FullReport> {
    check_aligned("cases vs labels", cases.len(), labels.len())?;
    let metrics = metrics_report(scores, predictions, labels, seed)?;
    let lengths: Vec<usize> = cases.iter().map(|c| token_count(&c.text)).collect();
    let complexity: Vec<f64> = cases
        .iter()
        .map(|c| complexity_score(&c.text, lexicon))
        .collect::<Result<_>>()?;
    Ok(FullReport {
        metrics,
        length: stratify_length(&lengths, predictions, labels)?,
        complexity: stratify_complexity(&complexity, predictions, labels)?,
        notes: vec![
            ZERO_DENOMINATOR_NOTE.to_string(),
            "confidence intervals: 95% percentile bootstrap over cases".to_string(),
        ],
    })
}

fn metric_map(r: &MetricsReport) -> [(&'static str, f64); 7] {
    [
        ("accuracy", r.accuracy),
        ("precision", r.precision),
        ("recall", r.recall),
        ("f1", r.f1),
        ("auc_roc", r.auc_roc),
        ("auc_pr", r.auc_pr),
        ("mcc", r.mcc),
    ]
}

/// McNemar, Cohen's d and metric deltas for two models on the same cases.
pub fn paired_comparison(
    first: &MetricsReport,
    second: &MetricsReport,
    predictions_first: &[bool],
    predictions_second: &[bool],
    labels: &[bool],
) -> Result<PairedComparison> {
    check_aligned("first predictions vs labels", predictions_first.len(), labels.len())?;
    check_aligned("second predictions vs labels", predictions_second.len(), labels.len())?;
    let correct = |p: &[bool]| -> Vec<bool> { p.iter().zip(labels).map(|(a, b)| a == b).collect() };
    let (ca, cb) = (correct(predictions_first), correct(predictions_second));
    let m = mcnemar(&ca, &cb)?;
    let as_f = |v: &[bool]| -> Vec<f64> { v.iter().map(|&x| x as u8 as f64).collect() };
    let d = if labels.len() >= 2 {
        match cohens_d(&as_f(&cb), &as_f(&ca)) {
            Ok(d) => Some(d),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        Some(0.0)
    };
    let deltas = metric_map(first)
        .iter()
        .zip(metric_map(second))
        .map(|((name, a), (_, b))| (name.to_string(), b - a))
        .collect();
    Ok(PairedComparison {
        b: m.b,
        c: m.c,
        chi2: m.chi2,
        p_value: m.p_value,
        cohen_d: d,
        deltas,
    })
}
