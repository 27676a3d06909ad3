//! Confusion matrices, macro-averaged metrics and ROC analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts; the positive class is label 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn new(tn: usize, fp: usize, fn_: usize, tp: usize) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_binary(name: &str, v: &[u8]) -> Result<()> {
    match v.iter().find(|&&x| x > 1) {
        Some(bad) => Err(Error::invalid("confusion", format!("{name} value {bad} is not 0/1"))),
        None => Ok(()),
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::invalid(
            "confusion",
            format!("{} labels vs {} predictions", labels.len(), predictions.len()),
        ));
    }
    check_binary("label", labels)?;
    check_binary("prediction", predictions)?;
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (0, _) => cm.fp += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Accuracy and per-class precision / recall / F1 averaged over both classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro-averaged metrics; per-class terms with a zero denominator count as 0.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MacroMetrics> {
    if cm.total() == 0 {
        return Err(Error::invalid("macro_metrics", "empty confusion matrix"));
    }
    let (p1, r1) = (ratio(cm.tp, cm.tp + cm.fp), ratio(cm.tp, cm.tp + cm.fn_));
    let (p0, r0) = (ratio(cm.tn, cm.tn + cm.fn_), ratio(cm.tn, cm.tn + cm.fp));
    Ok(MacroMetrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision: (p0 + p1) / 2.0,
        recall: (r0 + r1) / 2.0,
        f1: (f1(p0, r0) + f1(p1, r1)) / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +inf
    /// and is serialised as `null`.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    pub points: Vec<RocPoint>,
}

/// ROC over every distinct score and its trapezoidal area.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<Roc> {
    if labels.len() != scores.len() {
        return Err(Error::invalid("roc_auc", "labels and scores differ in length"));
    }
    check_binary("label", labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { context: "roc_auc scores".into() });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("roc_auc", "AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: None }];
    let (mut tp, mut fp, mut i) = (0usize, 0usize, 0usize);
    let mut auc = 0.0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("non-empty");
        let p = RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold: Some(s) };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(Roc { auc, points })
}

/// Everything reported for one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the evaluation set holds a single class.
    pub auc: Option<f64>,
    pub roc: Vec<RocPoint>,
}

/// The five compared metrics, in table order.
pub const METRIC_NAMES: [&str; 5] = ["accuracy", "auc", "precision", "recall", "f1"];

impl MetricsReport {
    /// Metrics from positive-class probabilities, thresholded at 0.5.
    pub fn from_scores(labels: &[u8], scores: &[f64]) -> Result<Self> {
        let preds: Vec<u8> = scores.iter().map(|&s| (s >= 0.5) as u8).collect();
        let cm = confusion(labels, &preds)?;
        let m = macro_metrics(&cm)?;
        let roc = match roc_auc(labels, scores) {
            Ok(r) => Some(r),
            Err(Error::InvalidArgument { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            n: labels.len(),
            confusion: cm,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            auc: roc.as_ref().map(|r| r.auc),
            roc: roc.map(|r| r.points).unwrap_or_default(),
        })
    }

    /// Value of one of [`METRIC_NAMES`]; a missing AUC reads as 0.5.
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "accuracy" => self.accuracy,
            "auc" => self.auc.unwrap_or(0.5),
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            _ => return None,
        })
    }
}
