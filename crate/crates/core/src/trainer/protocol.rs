//! Repeated runs and the three-way (MRI / US / fusion) comparison on a
//! shared paired test set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datapipe::SampleManifest;
use crate::error::{Error, Result};
use crate::evalstats::compare::{compare_models, mean_std, ComparisonReport};
use crate::evalstats::metrics::{MetricsReport, METRIC_NAMES};
use crate::evalstats::report::{comparison_csv, grouped_bars_svg, roc_svg, write_json, write_text};
use crate::models::ModelKind;
use crate::trainer::config::{merge, TrainConfig};
use crate::trainer::data::{ensure_split, Datasets};
use crate::trainer::train::{evaluate, train_on, Criterion, RunRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub best: f64,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    /// `best (mean ± sd)` with three decimals.
    pub fn display(&self) -> String {
        format!("{:.3} ({:.3} ± {:.3})", self.best, self.mean, self.std)
    }
}

/// Per-metric best, mean and sample standard deviation over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: String,
    pub runs: usize,
    pub metrics: Vec<MetricSummary>,
}

impl RunSummary {
    pub fn from_reports(model: &str, reports: &[MetricsReport]) -> Self {
        let metrics = METRIC_NAMES
            .iter()
            .map(|&name| {
                let v: Vec<f64> = reports.iter().map(|r| r.metric(name).expect("known metric")).collect();
                let (mean, std) = if v.is_empty() { (0.0, 0.0) } else { mean_std(&v) };
                let best = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                MetricSummary { metric: name.to_string(), best: if v.is_empty() { 0.0 } else { best }, mean, std }
            })
            .collect();
        RunSummary { model: model.to_string(), runs: reports.len(), metrics }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// Table with one row per model and the five metric columns.
pub fn summary_csv(summaries: &[RunSummary]) -> String {
    let mut s = String::from("model,runs");
    for m in METRIC_NAMES {
        let _ = write!(s, ",{m}_best,{m}_mean,{m}_std,{m}");
    }
    s.push('\n');
    for sum in summaries {
        let _ = write!(s, "{},{}", sum.model, sum.runs);
        for m in &sum.metrics {
            let _ = write!(s, ",{:.6},{:.6},{:.6},{}", m.best, m.mean, m.std, m.display());
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRun {
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
}

/// `n_runs` trainings with seeds `config.seed + i` on the same splits.
pub fn multi_run(config: &TrainConfig, data: &Datasets, n_runs: usize, out_dir: Option<&Path>) -> Result<MultiRun> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be >= 1".into()));
    }
    let mut records = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let cfg = TrainConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        let dir = out_dir.map(|d| d.join(format!("run{i}")));
        records.push(train_on(&cfg, data, dir.as_deref(), &[])?.record);
    }
    let reports: Vec<MetricsReport> = records.iter().filter_map(|r| r.test.clone()).collect();
    let summary = RunSummary::from_reports(config.model.as_str(), &reports);
    let out = MultiRun { records, summary };
    if let Some(d) = out_dir {
        write_json(&d.join("multirun.json"), &out)?;
        write_text(&d.join("summary.csv"), &summary_csv(std::slice::from_ref(&out.summary)))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub runs: usize,
    /// Initialise the fusion branches from the same run's unimodal models.
    pub warm_start: bool,
    pub mri: TrainConfig,
    pub us: TrainConfig,
    pub fusion: TrainConfig,
}

impl ProtocolConfig {
    pub fn defaults(profile: crate::models::ScaleProfile) -> Self {
        ProtocolConfig {
            runs: 5,
            warm_start: true,
            mri: TrainConfig::defaults(ModelKind::Mri, profile.clone()),
            us: TrainConfig::defaults(ModelKind::Us, profile.clone()),
            fusion: TrainConfig::defaults(ModelKind::Fusion, profile),
        }
    }

    /// Parse `{runs, warm_start, profile, seed, mri: {...}, us: {...},
    /// fusion: {...}}`; top-level `profile` and `seed` apply to every
    /// model section that does not set its own.
    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::Config("protocol config must be a JSON object".into()))?;
        for key in obj.keys() {
            if !["runs", "warm_start", "profile", "seed", "mri", "us", "fusion"].contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown protocol key {key:?}")));
            }
        }
        let section = |kind: ModelKind| -> Result<TrainConfig> {
            let mut s = serde_json::json!({ "model": kind.as_str() });
            for shared in ["profile", "seed"] {
                if let Some(x) = obj.get(shared) {
                    s[shared] = x.clone();
                }
            }
            if let Some(own) = obj.get(kind.as_str()) {
                merge(&mut s, own);
            }
            if s["model"] != kind.as_str() {
                return Err(Error::Config(format!("section {kind} must train model {kind}")));
            }
            TrainConfig::from_value(&s)
        };
        let runs = match obj.get("runs") {
            None => 5,
            Some(r) => r.as_u64().filter(|&r| r >= 1).ok_or_else(|| Error::Config("runs must be a positive integer".into()))? as usize,
        };
        let warm_start = match obj.get("warm_start") {
            None => true,
            Some(w) => w.as_bool().ok_or_else(|| Error::Config("warm_start must be a boolean".into()))?,
        };
        Ok(ProtocolConfig {
            runs,
            warm_start,
            mri: section(ModelKind::Mri)?,
            us: section(ModelKind::Us)?,
            fusion: section(ModelKind::Fusion)?,
        })
    }
}

pub struct ProtocolManifests<'a> {
    pub mri: &'a SampleManifest,
    pub us: &'a SampleManifest,
    pub paired: &'a SampleManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    /// Training records (unimodal tests are on their own test splits).
    pub records: BTreeMap<ModelKind, Vec<RunRecord>>,
    /// Every model evaluated on the shared paired test split, per run.
    pub shared_test: BTreeMap<ModelKind, Vec<MetricsReport>>,
    pub test_patients: Vec<String>,
    pub summaries: Vec<RunSummary>,
    pub comparison: ComparisonReport,
}

const ORDER: [ModelKind; 3] = [ModelKind::Fusion, ModelKind::Mri, ModelKind::Us];

/// Train MRI and US models on their manifests and the fusion model on the
/// paired manifest (branches warm-started from the same run's unimodal
/// models, all weights trainable), then evaluate all three on the paired
/// test split and compare them across runs.
pub fn comparative_protocol(cfg: &ProtocolConfig, manifests: &ProtocolManifests, out_dir: Option<&Path>) -> Result<ProtocolResult> {
    if manifests.paired.pairing.is_empty() {
        return Err(Error::Data("the paired manifest has no pairing".into()));
    }
    let load = |c: &TrainConfig, m: &SampleManifest| -> Result<Datasets> {
        let m = ensure_split(m, c.split_ratios, c.split_seed)?;
        Datasets::load(&m, c.model, &c.effective_profile())
    };
    let mri_data = load(&cfg.mri, manifests.mri)?;
    let us_data = load(&cfg.us, manifests.us)?;
    let paired = load(&cfg.fusion, manifests.paired)?;
    if paired.test.is_empty() {
        return Err(Error::Data("the paired manifest has an empty test split".into()));
    }
    let test_labels: Vec<u8> = paired.test.iter().map(|i| i.label).collect();
    let mut records: BTreeMap<ModelKind, Vec<RunRecord>> = BTreeMap::new();
    let mut shared: BTreeMap<ModelKind, Vec<MetricsReport>> = BTreeMap::new();
    let mut rocs: Vec<String> = Vec::new();
    for run in 0..cfg.runs {
        let seeded = |c: &TrainConfig| TrainConfig { seed: c.seed.wrapping_add(run as u64), ..c.clone() };
        let dir = |k: ModelKind| out_dir.map(|d| d.join(format!("run{run}")).join(k.as_str()));
        let mri = train_on(&seeded(&cfg.mri), &mri_data, dir(ModelKind::Mri).as_deref(), &[])?;
        let us = train_on(&seeded(&cfg.us), &us_data, dir(ModelKind::Us).as_deref(), &[])?;
        let warm = if cfg.warm_start { vec![&mri.model, &us.model] } else { vec![] };
        let fusion = train_on(&seeded(&cfg.fusion), &paired, dir(ModelKind::Fusion).as_deref(), &warm)?;

        let mut curves = Vec::new();
        for (kind, outcome, c) in [
            (ModelKind::Fusion, &fusion, &cfg.fusion),
            (ModelKind::Mri, &mri, &cfg.mri),
            (ModelKind::Us, &us, &cfg.us),
        ] {
            let items = paired.restricted_to(kind);
            let criterion = Criterion { kind, class_weights: None, label_smoothing: None };
            let (scores, _) = evaluate(&outcome.model, &items, &criterion, c.batch_size)?;
            let report = MetricsReport::from_scores(&test_labels, &scores)?;
            curves.push((kind, report.clone()));
            shared.entry(kind).or_default().push(report);
        }
        let roc_input: Vec<(String, &[crate::evalstats::RocPoint], Option<f64>)> =
            curves.iter().map(|(k, r)| (k.as_str().to_string(), r.roc.as_slice(), r.auc)).collect();
        rocs.push(roc_svg(&roc_input));
        for (kind, o) in [(ModelKind::Mri, mri), (ModelKind::Us, us), (ModelKind::Fusion, fusion)] {
            records.entry(kind).or_default().push(o.record);
        }
    }
    let summaries: Vec<RunSummary> = ORDER.iter().map(|k| RunSummary::from_reports(k.as_str(), &shared[k])).collect();
    let comparison = if cfg.runs >= 2 {
        let cols: Vec<(&str, &[MetricsReport])> = ORDER.iter().map(|k| (k.as_str(), shared[k].as_slice())).collect();
        compare_models(&cols)?
    } else {
        ComparisonReport {
            models: ORDER.iter().map(|k| k.as_str().to_string()).collect(),
            runs: cfg.runs,
            alpha: crate::evalstats::ALPHA,
            correction: "not run: fewer than two runs".into(),
            metrics: Vec::new(),
        }
    };
    let result = ProtocolResult {
        records,
        shared_test: shared,
        test_patients: paired.test.iter().map(|i| i.patient_id.clone()).collect(),
        summaries,
        comparison,
    };
    if let Some(d) = out_dir {
        write_json(&d.join("protocol.json"), &result)?;
        write_json(&d.join("comparison.json"), &result.comparison)?;
        write_text(&d.join("comparison.csv"), &comparison_csv(&result.comparison))?;
        write_text(&d.join("summary.csv"), &summary_csv(&result.summaries))?;
        if !result.comparison.metrics.is_empty() {
            write_text(&d.join("metrics_bars.svg"), &grouped_bars_svg(&result.comparison))?;
        }
        for (run, svg) in rocs.iter().enumerate() {
            write_text(&d.join(format!("roc_run{run}.svg")), svg)?;
        }
    }
    Ok(result)
}
