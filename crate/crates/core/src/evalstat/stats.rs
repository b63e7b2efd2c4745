use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_named, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A correct, B wrong.
    pub b: u64,
    /// A wrong, B correct.
    pub c: u64,
    pub chi2: f64,
    pub p_value: f64,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        libm::erfc((x / 2.0).sqrt())
    }
}

/// Continuity-corrected McNemar test from discordant counts.
pub fn mcnemar_counts(b: u64, c: u64) -> McNemar {
    if b + c == 0 {
        return McNemar {
            b,
            c,
            chi2: 0.0,
            p_value: 1.0,
        };
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let chi2 = diff.max(0.0).powi(2) / (b + c) as f64;
    McNemar {
        b,
        c,
        chi2,
        p_value: chi2_1_sf(chi2).clamp(0.0, 1.0),
    }
}

pub fn mcnemar(correct_a: &[bool], correct_b: &[bool]) -> Result<McNemar> {
    if correct_a.len() != correct_b.len() {
        return Err(Error::LengthMismatch {
            what: "paired correctness vectors",
            left: correct_a.len(),
            right: correct_b.len(),
        });
    }
    let b = correct_a.iter().zip(correct_b).filter(|(&a, &b)| a && !b).count() as u64;
    let c = correct_a.iter().zip(correct_b).filter(|(&a, &b)| !a && b).count() as u64;
    Ok(mcnemar_counts(b, c))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standardized mean difference `(mean_a − mean_b) / pooled_sd`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Empty("cohens_d needs at least two values per sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    let diff = ma - mb;
    if pooled == 0.0 {
        if diff == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::UndefinedMetric(
            "cohens_d with zero pooled sd and different means".into(),
        ));
    }
    Ok(diff / pooled)
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub n_resamples: usize,
    /// Resamples on which the statistic was undefined.
    pub skipped: usize,
}

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Percentile bootstrap over case indices. `statistic` receives the
/// resampled indices and returns `None` when undefined on that resample.
pub fn bootstrap_ci<F>(n_cases: usize, statistic: F, n_resamples: usize, seed: u64) -> Result<ConfidenceInterval>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_cases < 2 {
        return Err(Error::Empty("bootstrap needs at least two cases"));
    }
    if n_resamples == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one resample".into()));
    }
    let base = derive_named(seed, "bootstrap");
    let values: Vec<Option<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(base, r as u64);
            let idx: Vec<usize> = (0..n_cases).map(|_| rng.random_range(0..n_cases)).collect();
            statistic(&idx)
        })
        .collect();
    let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = n_resamples - defined.len();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "statistic undefined on all {n_resamples} resamples"
        )));
    }
    defined.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        lower: percentile(&defined, 0.025),
        upper: percentile(&defined, 0.975),
        n_resamples,
        skipped,
    })
}
