//! Subcommand implementations. Each returns the seeds it used so they can
//! be recorded in `run.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use mmfuse_core::datapipe::{
    load_image, load_volume, preprocess_mri, preprocess_us, write_rimg, write_rvol, Modality, Pairing, Sample, SampleManifest, Split,
};
use mmfuse_core::evalstats::metrics::{macro_metrics, ConfusionMatrix, MacroMetrics, MetricsReport};
use mmfuse_core::evalstats::report::{comparison_csv, grouped_bars_svg, metrics_csv, roc_svg, write_json, write_text};
use mmfuse_core::evalstats::{compare_models, ComparisonReport};
use mmfuse_core::gradcam::{default_layers, gradcam_layers, render_overlay, representative_depths, write_index};
use mmfuse_core::models::{checkpoint::MODULE_VERSION, load_checkpoint, Model, ModelKind};
use mmfuse_core::synthgen::{generate_dataset, SynthSpec};
use mmfuse_core::trainer::data::{assemble, ensure_split, BatchEntry, Item};
use mmfuse_core::trainer::protocol::{summary_csv, RunSummary};
use mmfuse_core::trainer::train::Criterion;
use mmfuse_core::trainer::{
    comparative_protocol, evaluate, multi_run, train_on, Datasets, ProtocolConfig, ProtocolManifests, ProtocolResult, TrainConfig,
};

use crate::{CliConfig, CliError, Command};

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn progress(cfg: &CliConfig, msg: impl AsRef<str>) {
    if cfg.verbosity > 0 {
        eprintln!("[{}] {}", cfg.command.as_str(), msg.as_ref());
    }
}

fn get<'a>(doc: &'a Value, key: &str) -> &'a Value {
    let ptr = format!("/{}", key.replace('.', "/"));
    doc.pointer(&ptr).unwrap_or(&Value::Null)
}

fn path_of(doc: &Value, key: &str) -> Result<PathBuf, CliError> {
    match get(doc, key) {
        Value::String(s) if !s.is_empty() => Ok(PathBuf::from(s)),
        Value::Null => Err(config_err(format!("{key} must be set"))),
        other => Err(config_err(format!("{key} must be a path string, got {other}"))),
    }
}

fn typed<T: serde::de::DeserializeOwned>(doc: &Value, key: &str) -> Result<T, CliError> {
    serde_json::from_value(get(doc, key).clone()).map_err(|e| config_err(format!("{key}: {e}")))
}

fn load_manifest(path: &Path) -> Result<SampleManifest, CliError> {
    Ok(SampleManifest::load(path)?)
}

/// Run the command; returns the seeds used.
pub fn dispatch(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    match cfg.command {
        Command::Synth => synth(cfg, doc),
        Command::Preprocess => preprocess(cfg, doc),
        Command::Train => train(cfg, doc),
        Command::Multirun => multirun(cfg, doc),
        Command::Compare => compare(cfg, doc),
        Command::Eval => eval(cfg, doc),
        Command::Explain => explain(cfg, doc),
        Command::Stats => stats(cfg, doc),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance record. It holds the effective configuration and its hash but
/// no clocks or output paths, so identical runs write identical files.
pub fn write_run_record(cfg: &CliConfig, doc: &Value, seeds: &Value) -> Result<(), CliError> {
    let canonical = serde_json::to_vec(doc).map_err(mmfuse_core::Error::from)?;
    let record = json!({
        "command": cfg.command.as_str(),
        "config_file": cfg.config.as_ref().map(|p| p.display().to_string()),
        "config": doc,
        "config_sha256": sha256_hex(&canonical),
        "deterministic": cfg.deterministic,
        "seeds": seeds,
        "versions": {
            "mmfuse": MODULE_VERSION,
            "manifest_format": mmfuse_core::datapipe::manifest::MANIFEST_VERSION,
        },
    });
    Ok(write_json(&cfg.out.join("run.json"), &record)?)
}

fn synth(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    let mut spec = get(doc, "synth").clone();
    spec["profile"] = get(doc, "profile").clone();
    spec["seed"] = get(doc, "seed").clone();
    let spec: SynthSpec = serde_json::from_value(spec).map_err(|e| config_err(format!("synth: {e}")))?;
    spec.validate()?;
    progress(cfg, format!("generating {} pairs into {}", spec.n_pairs, cfg.out.display()));
    let (_, report) = generate_dataset(&spec, &cfg.out)?;
    progress(cfg, format!("{} positives; oracle {:?}", report.n_positive, report.oracle));
    Ok(json!({ "synth": spec.seed }))
}

fn preprocess(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    let profile = profile(doc)?;
    let manifest = load_manifest(&path_of(doc, "data.manifest")?)?;
    manifest.validate()?;
    let mut renamed: BTreeMap<String, String> = BTreeMap::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for (i, s) in manifest.samples.iter().enumerate() {
        let src = manifest.resolve(&s.uri);
        let uri = match s.modality {
            Modality::Mri => {
                let uri = format!("mri/{i:05}_{}.rvol", s.patient_id);
                write_rvol(&cfg.out.join(&uri), &preprocess_mri(&load_volume(&src)?, profile.mri_input)?)?;
                uri
            }
            Modality::Us => {
                let uri = format!("us/{i:05}_{}.rimg", s.patient_id);
                write_rimg(&cfg.out.join(&uri), &preprocess_us(&load_image(&src)?, profile.us_input)?)?;
                uri
            }
        };
        renamed.insert(s.uri.clone(), uri.clone());
        samples.push(Sample { uri, ..s.clone() });
    }
    let pairing = manifest
        .pairing
        .iter()
        .map(|p| Pairing { mri: renamed[&p.mri].clone(), us: renamed[&p.us].clone(), ..p.clone() })
        .collect();
    let out = SampleManifest::new(samples, pairing);
    out.save(&cfg.out.join("manifest.json"))?;
    progress(cfg, format!("wrote {} samples", out.samples.len()));
    Ok(json!({}))
}

fn profile(doc: &Value) -> Result<mmfuse_core::models::ScaleProfile, CliError> {
    match get(doc, "profile") {
        Value::String(n) => Ok(mmfuse_core::models::ScaleProfile::by_name(n)?),
        v => serde_json::from_value(v.clone()).map_err(|e| config_err(format!("profile: {e}"))),
    }
}

fn train_config(doc: &Value) -> Result<TrainConfig, CliError> {
    let mut v = get(doc, "trainer").clone();
    v["profile"] = get(doc, "profile").clone();
    v["seed"] = get(doc, "seed").clone();
    Ok(TrainConfig::from_value(&v)?)
}

/// Split the manifest if needed, save the split version and load it.
fn split_and_load(cfg: &CliConfig, doc: &Value, tc: &TrainConfig) -> Result<Datasets, CliError> {
    let manifest = load_manifest(&path_of(doc, "data.manifest")?)?;
    let split = ensure_split(&manifest, tc.split_ratios, tc.split_seed)?;
    let mut saved = split.clone();
    // Keep sample paths valid from the output directory.
    for s in &mut saved.samples {
        s.uri = absolute(&split.resolve(&s.uri));
    }
    for p in &mut saved.pairing {
        p.mri = absolute(&split.resolve(&p.mri));
        p.us = absolute(&split.resolve(&p.us));
    }
    saved.save(&cfg.out.join("split_manifest.json"))?;
    progress(cfg, "loading and preprocessing samples");
    Ok(Datasets::load(&split, tc.model, &tc.effective_profile())?)
}

fn absolute(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn write_metrics(dir: &Path, rows: &[(String, &MetricsReport)]) -> Result<(), CliError> {
    write_text(&dir.join("metrics.csv"), &metrics_csv(rows))?;
    let curves: Vec<(String, &[mmfuse_core::evalstats::RocPoint], Option<f64>)> =
        rows.iter().map(|(n, r)| (n.clone(), r.roc.as_slice(), r.auc)).collect();
    write_text(&dir.join("roc.svg"), &roc_svg(&curves))?;
    Ok(())
}

fn train(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    let tc = train_config(doc)?;
    let data = split_and_load(cfg, doc, &tc)?;
    progress(cfg, format!("training {} for {} epochs", tc.model, tc.epochs));
    let outcome = train_on(&tc, &data, Some(&cfg.out), &[])?;
    if let Some(test) = &outcome.record.test {
        write_json(&cfg.out.join("metrics.json"), test)?;
        write_metrics(&cfg.out, &[(tc.model.as_str().to_string(), test)])?;
        progress(cfg, format!("test accuracy {:.4}", test.accuracy));
    }
    Ok(json!({ "train": tc.seed }))
}

fn multirun(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    let tc = train_config(doc)?;
    let runs: usize = typed(doc, "multirun.runs")?;
    let data = split_and_load(cfg, doc, &tc)?;
    progress(cfg, format!("{runs} runs of {}", tc.model));
    let result = multi_run(&tc, &data, runs, Some(&cfg.out))?;
    let rows: Vec<(String, &MetricsReport)> = result
        .records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.test.as_ref().map(|t| (format!("run{i}"), t)))
        .collect();
    if !rows.is_empty() {
        write_metrics(&cfg.out, &rows)?;
    }
    Ok(json!({ "runs": result.records.iter().map(|r| r.seed).collect::<Vec<_>>() }))
}

fn compare(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    let mut p = get(doc, "protocol").clone();
    p["profile"] = get(doc, "profile").clone();
    p["seed"] = get(doc, "seed").clone();
    let pc = ProtocolConfig::from_value(&p)?;
    let mri = load_manifest(&path_of(doc, "data.mri_manifest")?)?;
    let us = load_manifest(&path_of(doc, "data.us_manifest")?)?;
    let paired = load_manifest(&path_of(doc, "data.paired_manifest")?)?;
    progress(cfg, format!("{} runs of mri, us and fusion", pc.runs));
    let result = comparative_protocol(&pc, &ProtocolManifests { mri: &mri, us: &us, paired: &paired }, Some(&cfg.out))?;
    for s in &result.summaries {
        progress(cfg, format!("{}: accuracy {}", s.model, s.metric("accuracy").map(|m| m.display()).unwrap_or_default()));
    }
    let seeds = |c: &TrainConfig| (0..pc.runs as u64).map(|r| c.seed.wrapping_add(r)).collect::<Vec<_>>();
    Ok(json!({ "mri": seeds(&pc.mri), "us": seeds(&pc.us), "fusion": seeds(&pc.fusion) }))
}

/// Checkpoint, manifest and the requested split's items.
fn checkpoint_items(doc: &Value, section: &str) -> Result<(Model, Vec<Item>), CliError> {
    let (model, _) = load_checkpoint(&path_of(doc, &format!("{section}.checkpoint"))?)?;
    let manifest = load_manifest(&path_of(doc, &format!("{section}.manifest"))?)?;
    let split: String = typed(doc, &format!("{section}.split"))?;
    let items = if split == "all" {
        let mut all = manifest.clone();
        for s in &mut all.samples {
            s.split = Split::Test;
        }
        Datasets::load(&all, model.kind, &model.profile)?.test
    } else {
        if manifest.samples.iter().any(|s| s.split == Split::Unassigned) {
            return Err(config_err(format!(
                "{section}.split is {split:?} but the manifest has unassigned samples; use split_manifest.json from train or split \"all\""
            )));
        }
        let data = Datasets::load(&manifest, model.kind, &model.profile)?;
        match split.as_str() {
            "train" => data.train,
            "val" => data.val,
            "test" => data.test,
            other => return Err(config_err(format!("{section}.split must be train, val, test or all, got {other:?}"))),
        }
    };
    if items.is_empty() {
        return Err(CliError::Core(mmfuse_core::Error::Data(format!(
            "split {split:?} of the manifest has no {} samples",
            model.kind
        ))));
    }
    Ok((model, items))
}

fn eval(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    let (model, items) = checkpoint_items(doc, "eval")?;
    let batch: usize = typed(doc, "eval.batch_size")?;
    if batch == 0 {
        return Err(config_err("eval.batch_size must be >= 1"));
    }
    let criterion = Criterion { kind: model.kind, class_weights: None, label_smoothing: None };
    let (scores, _) = evaluate(&model, &items, &criterion, batch)?;
    let labels: Vec<u8> = items.iter().map(|i| i.label).collect();
    let report = MetricsReport::from_scores(&labels, &scores)?;
    write_json(&cfg.out.join("metrics.json"), &report)?;
    write_metrics(&cfg.out, &[(model.kind.as_str().to_string(), &report)])?;
    let mut csv = String::from("patient_id,label,score\n");
    for (i, s) in items.iter().zip(&scores) {
        csv.push_str(&format!("{},{},{s:.9}\n", i.patient_id, i.label));
    }
    write_text(&cfg.out.join("scores.csv"), &csv)?;
    progress(cfg, format!("accuracy {:.4} on {} samples", report.accuracy, report.n));
    Ok(json!({}))
}

fn explain(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    let (model, items) = checkpoint_items(doc, "explain")?;
    let class_index: usize = typed(doc, "explain.class_index")?;
    let max_samples: usize = typed(doc, "explain.max_samples")?;
    let positives_only: bool = typed(doc, "explain.positives_only")?;
    let slices: usize = typed(doc, "explain.slices")?;
    let layers: Option<Vec<String>> = typed(doc, "explain.layers")?;
    let layers: Vec<String> = layers.unwrap_or_else(|| default_layers(model.kind).into_iter().map(String::from).collect());
    let layer_refs: Vec<&str> = layers.iter().map(String::as_str).collect();
    let mut index = Vec::new();
    let chosen = items.iter().filter(|i| !positives_only || i.label == 1).take(max_samples);
    for item in chosen {
        let input = assemble(&[BatchEntry { item, copy: 0, augment: false }], model.kind, 0, 0, 0.0)?;
        for map in gradcam_layers(&model, &input, class_index, &layer_refs)? {
            let map = map.with_sample(&item.patient_id);
            if map.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(CliError::Core(mmfuse_core::Error::NonFinite { context: format!("heatmap {}", map.layer) }));
            }
            let (source, depths) = if map.extents.len() == 3 {
                let t = input.mri.as_ref().expect("MRI heatmap implies MRI input");
                (t.data().to_vec(), representative_depths(map.extents[2], slices))
            } else {
                let t = input.us.as_ref().expect("US heatmap implies US input");
                (t.data()[..map.values.len()].to_vec(), Vec::new())
            };
            index.extend(render_overlay(&map, &source, &cfg.out, &depths)?);
        }
    }
    write_index(&cfg.out, &index)?;
    progress(cfg, format!("wrote {} files", index.len()));
    Ok(json!({}))
}

fn write_comparison(dir: &Path, report: &ComparisonReport, summaries: &[RunSummary]) -> Result<(), CliError> {
    write_json(&dir.join("comparison.json"), report)?;
    write_text(&dir.join("comparison.csv"), &comparison_csv(report))?;
    write_text(&dir.join("summary.csv"), &summary_csv(summaries))?;
    write_text(&dir.join("metrics_bars.svg"), &grouped_bars_svg(report))?;
    Ok(())
}

fn stats(cfg: &CliConfig, doc: &Value) -> Result<Value, CliError> {
    let confusion: BTreeMap<String, ConfusionMatrix> = typed(doc, "stats.confusion")?;
    let reports: BTreeMap<String, Vec<PathBuf>> = typed(doc, "stats.reports")?;
    let protocol: Option<PathBuf> = typed(doc, "stats.protocol")?;
    if confusion.is_empty() && reports.is_empty() && protocol.is_none() {
        return Err(config_err("stats needs stats.confusion, stats.reports or stats.protocol"));
    }
    if !confusion.is_empty() {
        let mut rows: BTreeMap<String, MacroMetrics> = BTreeMap::new();
        let mut csv = String::from("name,tn,fp,fn,tp,accuracy,precision,recall,f1\n");
        for (name, cm) in &confusion {
            let m = macro_metrics(cm)?;
            csv.push_str(&format!(
                "{name},{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                cm.tn, cm.fp, cm.fn_, cm.tp, m.accuracy, m.precision, m.recall, m.f1
            ));
            rows.insert(name.clone(), m);
        }
        write_json(&cfg.out.join("confusion_metrics.json"), &rows)?;
        write_text(&cfg.out.join("confusion_metrics.csv"), &csv)?;
    }
    let mut models: Vec<(String, Vec<MetricsReport>)> = Vec::new();
    if let Some(path) = protocol {
        let text = std::fs::read_to_string(&path).map_err(|e| mmfuse_core::Error::Data(format!("{}: {e}", path.display())))?;
        let result: ProtocolResult = serde_json::from_str(&text).map_err(mmfuse_core::Error::from)?;
        for (kind, reps) in [ModelKind::Fusion, ModelKind::Mri, ModelKind::Us].iter().filter_map(|k| result.shared_test.get(k).map(|r| (k, r))) {
            models.push((kind.as_str().to_string(), reps.clone()));
        }
    }
    for (name, paths) in &reports {
        let reps = paths
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).map_err(|e| mmfuse_core::Error::Data(format!("{}: {e}", p.display())))?;
                Ok(serde_json::from_str::<MetricsReport>(&text).map_err(mmfuse_core::Error::from)?)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        models.push((name.clone(), reps));
    }
    if !models.is_empty() {
        let cols: Vec<(&str, &[MetricsReport])> = models.iter().map(|(n, r)| (n.as_str(), r.as_slice())).collect();
        let report = compare_models(&cols)?;
        let summaries: Vec<RunSummary> = models.iter().map(|(n, r)| RunSummary::from_reports(n, r)).collect();
        write_comparison(&cfg.out, &report, &summaries)?;
    }
    Ok(json!({}))
}
