//! Metrics, paired significance tests, bootstrap intervals and stratified
//! reports for binary predictions.

mod metrics;
mod report;
mod stats;
mod strata;

pub use metrics::{auc_pr, auc_roc, confusion, metrics_from_confusion, threshold, ConfusionMatrix, ConfusionMetrics};
pub use report::{
    full_report, load_predictions, metrics_report, paired_comparison, write_predictions, ComparisonReport,
    FullReport, MetricsReport, PairedComparison, Prediction, ZERO_DENOMINATOR_NOTE,
};
pub use stats::{
    bootstrap_ci, chi2_1_sf, cohens_d, mcnemar, mcnemar_counts, percentile, ConfidenceInterval, McNemar,
    DEFAULT_RESAMPLES,
};
pub use strata::{
    complexity_score, length_bucket, stratify_complexity, stratify_length, tertile_bounds, Bucket, StrataScheme,
    StratifiedReport, COMPLEXITY_BUCKETS, LENGTH_BUCKETS,
};
