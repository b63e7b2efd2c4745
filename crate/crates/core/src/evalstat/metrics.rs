use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

/// Point metrics derived from a confusion matrix. A metric whose
/// denominator is zero is reported as 0.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn accuracy(&self) -> f64 {
        ratio((self.tp + self.tn) as f64, self.total() as f64)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn f1(&self) -> f64 {
        ratio(2.0 * self.tp as f64, (2 * self.tp + self.fp + self.fn_) as f64)
    }

    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        ratio(tp * tn - fp * fn_, den)
    }

    pub fn metrics(&self) -> ConfusionMetrics {
        ConfusionMetrics {
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            mcc: self.mcc(),
        }
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> ConfusionMetrics {
    cm.metrics()
}

pub(crate) fn check_aligned(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { what, left, right });
    }
    if left == 0 {
        return Err(Error::Empty(what));
    }
    Ok(())
}

pub fn confusion(predictions: &[bool], labels: &[bool]) -> Result<ConfusionMatrix> {
    check_aligned("predictions vs labels", predictions.len(), labels.len())?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Probability of the positive class turned into a hard call.
pub fn threshold(scores: &[f64], cutoff: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= cutoff).collect()
}

/// Mann–Whitney estimate: fraction of positive/negative pairs ranked
/// correctly, ties counting one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned("scores vs labels", scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "auc_roc needs at least one positive and one negative".into(),
        ));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, then the rank-sum statistic
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision over positives ranked by descending score; ties keep
/// input order.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned("scores vs labels", scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("auc_pr needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(tn: u64, fp: u64, fn_: u64, tp: u64) -> ConfusionMatrix {
        ConfusionMatrix { tn, fp, fn_, tp }
    }

    #[test]
    fn confusion_examples() {
        let labels: Vec<bool> = (0..100).map(|i| i < 50).collect();
        assert_eq!(confusion(&labels, &labels).unwrap(), cm(50, 0, 0, 50));
        let y = [true, false, true, false];
        assert_eq!(confusion(&[true; 4], &y).unwrap(), cm(0, 2, 0, 2));
        assert_eq!(confusion(&[true], &[false]).unwrap(), cm(0, 1, 0, 0));
        assert!(confusion(&[], &[]).is_err());
        assert!(confusion(&[true], &[true, false]).is_err());
    }

    #[test]
    fn matrix_metric_examples() {
        let m = cm(43, 7, 7, 43).metrics();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            assert!((v - 0.86).abs() < 1e-12);
        }
        assert!((m.mcc - 0.72).abs() < 1e-12);
        let m = cm(35, 15, 12, 38).metrics();
        assert!((m.accuracy - 0.730).abs() < 1e-12);
        assert!((m.precision - 0.717).abs() < 1e-3);
        assert!((m.recall - 0.760).abs() < 1e-12);
        assert!((m.f1 - 0.738).abs() < 1e-3);
        assert!((m.mcc - 0.461).abs() < 1e-3);
        let m = cm(5, 0, 0, 5).metrics();
        assert_eq!([m.accuracy, m.precision, m.recall, m.f1, m.mcc], [1.0; 5]);
        let m = cm(5, 0, 5, 0).metrics();
        assert_eq!([m.precision, m.recall, m.f1, m.mcc], [0.0; 4]);
    }

    #[test]
    fn auc_examples() {
        let y = [true, true, false, false];
        assert_eq!(auc_roc(&[0.9, 0.8, 0.2, 0.1], &y).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.9, 0.4, 0.5, 0.1], &y).unwrap(), 0.75);
        assert_eq!(auc_roc(&[0.3; 4], &y).unwrap(), 0.5);
        assert!(matches!(auc_roc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));

        assert_eq!(auc_pr(&[0.9, 0.8, 0.2, 0.1], &y).unwrap(), 1.0);
        let ap = auc_pr(&[0.9, 0.5, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let ap = auc_pr(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
        assert!((ap - 0.25).abs() < 1e-12);
        assert!(auc_pr(&[0.1], &[false]).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_counting(data in prop::collection::vec((0u8..6, any::<bool>()), 2..50)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if labels[i] && !labels[j] {
                        den += 1.0;
                        num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            match auc_roc(&scores, &labels) {
                Ok(a) => prop_assert!((a - num / den).abs() < 1e-12),
                Err(_) => prop_assert_eq!(den, 0.0),
            }
        }

        #[test]
        fn auc_invariant_under_monotone_transform(data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let moved: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            if let Ok(a) = auc_roc(&scores, &labels) {
                prop_assert!((a - auc_roc(&moved, &labels).unwrap()).abs() < 1e-12);
            }
        }
    }
}
