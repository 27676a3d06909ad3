//! Paired t-tests, one-way repeated-measures ANOVA and Benjamini-Hochberg.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalstats::special::{f_survival, t_two_sided_p};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub test: String,
    /// `None` when the statistic is infinite (zero error variance with a
    /// non-zero effect).
    pub statistic: Option<f64>,
    pub dof: Vec<f64>,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

impl StatTestResult {
    fn new(test: &str, statistic: f64, dof: Vec<f64>, p: f64) -> Self {
        StatTestResult {
            test: test.into(),
            statistic: statistic.is_finite().then_some(statistic),
            dof,
            p_raw: p,
            p_adjusted: p,
            significant: p < ALPHA,
        }
    }

    pub fn with_adjusted(mut self, p_adjusted: f64) -> Self {
        self.p_adjusted = p_adjusted;
        self.significant = p_adjusted < ALPHA;
        self
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("paired_ttest", format!("need equal lengths >= 2, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "paired_ttest input".into() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    let scale = d.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if var.sqrt() <= 1e-12 * scale || var == 0.0 {
        return Err(Error::degenerate("paired_ttest", "differences have zero variance"));
    }
    let t = m / (var.sqrt() / n.sqrt());
    let dof = n - 1.0;
    Ok(StatTestResult::new("paired_t", t, vec![dof], t_two_sided_p(t, dof)))
}

/// Sums of squares of a runs x conditions matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaDecomposition {
    pub ss_conditions: f64,
    pub ss_subjects: f64,
    pub ss_error: f64,
    pub ss_total: f64,
}

pub fn anova_decomposition(matrix: &[Vec<f64>]) -> Result<AnovaDecomposition> {
    let n = matrix.len();
    let k = matrix.first().map_or(0, Vec::len);
    if n < 2 || k < 2 || matrix.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("repeated_measures_anova", "need a rectangular matrix with >= 2 runs and >= 2 models"));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "ANOVA input".into() });
    }
    let grand = matrix.iter().flatten().sum::<f64>() / (n * k) as f64;
    let col_mean = |j: usize| matrix.iter().map(|r| r[j]).sum::<f64>() / n as f64;
    let ss_conditions = n as f64 * (0..k).map(|j| (col_mean(j) - grand).powi(2)).sum::<f64>();
    let ss_subjects = k as f64 * matrix.iter().map(|r| (mean(r) - grand).powi(2)).sum::<f64>();
    let ss_total: f64 = matrix.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_error = (ss_total - ss_conditions - ss_subjects).max(0.0);
    Ok(AnovaDecomposition { ss_conditions, ss_subjects, ss_error, ss_total })
}

/// One-way within-subjects ANOVA on a runs x models matrix.
///
/// A matrix without condition effect gives F = 0, p = 1; zero error
/// variance with a condition effect is a degenerate-input error.
pub fn repeated_measures_anova(matrix: &[Vec<f64>]) -> Result<StatTestResult> {
    let s = anova_decomposition(matrix)?;
    let (n, k) = (matrix.len() as f64, matrix[0].len() as f64);
    let dof = vec![k - 1.0, (k - 1.0) * (n - 1.0)];
    let tiny = 1e-12 * s.ss_total.max(f64::MIN_POSITIVE);
    if s.ss_conditions <= tiny {
        return Ok(StatTestResult::new("rm_anova", 0.0, dof, 1.0));
    }
    if s.ss_error <= tiny {
        return Err(Error::degenerate("repeated_measures_anova", "zero error sum of squares"));
    }
    let f = (s.ss_conditions / dof[0]) / (s.ss_error / dof[1]);
    let p = f_survival(f, dof[0], dof[1]);
    Ok(StatTestResult::new("rm_anova", f, dof, p))
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_fdr(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid("bh_fdr", format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adj = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        // p * m / rank >= p holds exactly; guard against rounding below p
        adj[i] = running.min(1.0).max(p[i]);
    }
    Ok(adj)
}
