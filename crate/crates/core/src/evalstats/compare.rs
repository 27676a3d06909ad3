//! Three-way model comparison over repeated runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalstats::hypothesis::{bh_fdr, paired_ttest, repeated_measures_anova, StatTestResult, ALPHA};
use crate::evalstats::metrics::{MetricsReport, METRIC_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    pub mean_difference: f64,
    pub result: StatTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub anova: StatTestResult,
    /// Whether the post-hoc tests were run (ANOVA p < alpha).
    pub post_hoc_run: bool,
    pub pairwise: Vec<PairwiseResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<String>,
    pub runs: usize,
    pub alpha: f64,
    /// How multiple comparisons were corrected.
    pub correction: String,
    pub metrics: Vec<MetricComparison>,
}

impl ComparisonReport {
    pub fn metric(&self, name: &str) -> Option<&MetricComparison> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    /// The pairwise result for `a` vs `b` on `metric`, if post-hoc ran.
    pub fn pair(&self, metric: &str, a: &str, b: &str) -> Option<&PairwiseResult> {
        self.metric(metric)?.pairwise.iter().find(|p| p.a == a && p.b == b)
    }
}

pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = if x.len() > 1 { (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

/// Tests for a degenerate (zero-variance) comparison: no effect gives
/// p = 1, a constant non-zero effect p = 0 with an infinite statistic.
fn degenerate_result(test: &str, effect: f64, dof: Vec<f64>) -> StatTestResult {
    let (stat, p) = if effect.abs() > 1e-12 { (f64::INFINITY, 0.0) } else { (0.0, 1.0) };
    StatTestResult {
        test: test.into(),
        statistic: stat.is_finite().then_some(stat),
        dof,
        p_raw: p,
        p_adjusted: p,
        significant: p < ALPHA,
    }
}

/// Per metric: repeated-measures ANOVA, then (only when it is significant)
/// all pairwise paired t-tests, BH-corrected within the metric.
pub fn compare_models(models: &[(&str, &[MetricsReport])]) -> Result<ComparisonReport> {
    if models.len() < 2 {
        return Err(Error::invalid("compare_models", "need at least two models"));
    }
    let runs = models[0].1.len();
    if runs < 2 || models.iter().any(|(_, r)| r.len() != runs) {
        return Err(Error::invalid("compare_models", "every model needs the same number (>= 2) of runs"));
    }
    let mut metrics = Vec::new();
    for name in METRIC_NAMES {
        let columns: Vec<Vec<f64>> = models
            .iter()
            .map(|(_, rs)| rs.iter().map(|r| r.metric(name).expect("known metric")).collect())
            .collect();
        let matrix: Vec<Vec<f64>> = (0..runs).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        let (means, stds): (Vec<f64>, Vec<f64>) = columns.iter().map(|c| mean_std(c)).unzip();
        let k = models.len() as f64;
        let anova = match repeated_measures_anova(&matrix) {
            Ok(r) => r,
            Err(Error::Degenerate { .. }) => {
                let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - means.iter().cloned().fold(f64::INFINITY, f64::min);
                degenerate_result("rm_anova", spread, vec![k - 1.0, (k - 1.0) * (runs as f64 - 1.0)])
            }
            Err(e) => return Err(e),
        };
        let post_hoc_run = anova.p_raw < ALPHA;
        let mut pairwise = Vec::new();
        if post_hoc_run {
            for i in 0..models.len() {
                for j in i + 1..models.len() {
                    let diff = means[i] - means[j];
                    let result = match paired_ttest(&columns[i], &columns[j]) {
                        Ok(r) => r,
                        Err(Error::Degenerate { .. }) => degenerate_result("paired_t", diff, vec![runs as f64 - 1.0]),
                        Err(e) => return Err(e),
                    };
                    pairwise.push(PairwiseResult {
                        a: models[i].0.to_string(),
                        b: models[j].0.to_string(),
                        mean_difference: diff,
                        result,
                    });
                }
            }
            let raw: Vec<f64> = pairwise.iter().map(|p| p.result.p_raw).collect();
            for (p, adj) in pairwise.iter_mut().zip(bh_fdr(&raw)?) {
                p.result = p.result.clone().with_adjusted(adj);
            }
        }
        metrics.push(MetricComparison { metric: name.to_string(), means, stds, anova, post_hoc_run, pairwise });
    }
    Ok(ComparisonReport {
        models: models.iter().map(|(n, _)| n.to_string()).collect(),
        runs,
        alpha: ALPHA,
        correction: "benjamini-hochberg within each metric family".into(),
        metrics,
    })
}
