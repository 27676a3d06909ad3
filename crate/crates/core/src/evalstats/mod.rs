//! Classification metrics, ROC analysis and significance testing.

pub mod compare;
pub mod hypothesis;
pub mod metrics;
pub mod report;
pub mod special;

pub use compare::{compare_models, mean_std, ComparisonReport, MetricComparison, PairwiseResult};
pub use hypothesis::{bh_fdr, paired_ttest, repeated_measures_anova, StatTestResult, ALPHA};
pub use metrics::{confusion, macro_metrics, roc_auc, ConfusionMatrix, MacroMetrics, MetricsReport, Roc, RocPoint, METRIC_NAMES};
