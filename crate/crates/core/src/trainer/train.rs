//! The epoch loop with best-validation-accuracy checkpointing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::split::{class_weights, oversample_minority, Draw};
use crate::error::{Error, Result};
use crate::evalstats::metrics::MetricsReport;
use crate::evalstats::report::write_text;
use crate::models::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::models::{Mode, Model, ModelKind};
use crate::ndcore::{ParamStore, Tape, Var};
use crate::trainer::adam::{Adam, AdamConfig};
use crate::trainer::config::TrainConfig;
use crate::trainer::data::{assemble, batch_ranges, BatchEntry, Datasets, Item};
use crate::trainer::scheduler::PlateauScheduler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch of the kept weights (0 when no epoch ran).
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Best-weights file, relative to the run's output directory.
    pub checkpoint: Option<PathBuf>,
    /// Evaluation of the restored best weights on the test split.
    pub test: Option<MetricsReport>,
    pub test_patients: Vec<String>,
    pub test_scores: Vec<f64>,
}

impl RunRecord {
    pub fn val_accuracy(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_accuracy).collect()
    }
}

/// Index of the largest value, earliest on ties.
pub fn best_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn epochs_csv(epochs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_accuracy,lr\n");
    for e in epochs {
        let _ = writeln!(s, "{},{:.8},{:.8},{:.6},{:e}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.lr);
    }
    s
}

/// The loss of one model family, given a forward pass.
#[derive(Debug, Clone)]
pub struct Criterion {
    pub kind: ModelKind,
    pub class_weights: Option<Vec<f64>>,
    pub label_smoothing: Option<f64>,
}

impl Criterion {
    pub fn new(config: &TrainConfig, train: &[Item]) -> Result<Self> {
        let class_weights = if config.class_weights {
            let mut counts = [0usize; 2];
            for it in train {
                counts[it.label as usize] += 1;
            }
            Some(class_weights(&counts)?)
        } else {
            None
        };
        Ok(Criterion { kind: config.model, class_weights, label_smoothing: config.label_smoothing })
    }

    pub fn loss(&self, tape: &mut Tape<f32>, logits: Var, probability: Var, labels: &[usize]) -> Result<Var> {
        let w = self.class_weights.as_deref();
        match self.kind {
            ModelKind::Fusion => tape.bce(probability, labels, w),
            _ => tape.cross_entropy(logits, labels, w, self.label_smoothing),
        }
    }
}

/// Positive-class probabilities and mean loss of `model` on `items` in
/// evaluation mode.
pub fn evaluate(model: &Model, items: &[Item], criterion: &Criterion, batch_size: usize) -> Result<(Vec<f64>, f64)> {
    let mut scores = Vec::with_capacity(items.len());
    let mut loss_sum = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for r in batch_ranges(items.len(), batch_size) {
        let entries: Vec<BatchEntry> = items[r.clone()].iter().map(|item| BatchEntry { item, copy: 0, augment: false }).collect();
        let input = assemble(&entries, model.kind, 0, 0, 0.0)?;
        let labels: Vec<usize> = entries.iter().map(|e| e.item.label as usize).collect();
        let mut tape = Tape::with_params(&model.params).no_grad();
        let out = model.forward(&mut tape, input, Mode::Eval, &mut rng)?;
        let loss = criterion.loss(&mut tape, out.logits, out.probability, &labels)?;
        loss_sum += tape.value(loss).item() as f64 * r.len() as f64;
        let p = tape.value(out.probability).data();
        match model.kind {
            ModelKind::Fusion => scores.extend(p.iter().map(|&x| x as f64)),
            _ => scores.extend(p.chunks(2).map(|row| row[1] as f64)),
        }
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { context: "evaluation probabilities".into() });
    }
    Ok((scores, loss_sum / items.len().max(1) as f64))
}

pub fn accuracy(items: &[Item], scores: &[f64]) -> f64 {
    let correct = items.iter().zip(scores).filter(|(it, &s)| (s >= 0.5) == (it.label == 1)).count();
    correct as f64 / items.len().max(1) as f64
}

/// Trained model (restored to its best epoch) and the run's record.
pub struct TrainOutcome {
    pub model: Model,
    pub record: RunRecord,
}

fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// File name of the best weights inside a run directory.
pub const CHECKPOINT_FILE: &str = "best.ndc";

const SHUFFLE_TAG: u64 = 1;
const DROPOUT_TAG: u64 = 2;
const OVERSAMPLE_TAG: u64 = 3;

/// Build the model for `config`, warm-starting fusion branches from the
/// configured checkpoints and/or the given in-memory models.
pub fn build_model(config: &TrainConfig, warm: &[&Model]) -> Result<Model> {
    let mut model = Model::new(config.model, config.effective_profile(), config.seed)?;
    for path in [&config.warm_start.mri, &config.warm_start.us].into_iter().flatten() {
        let (src, _) = load_checkpoint(path)?;
        if model.load_matching(&src)? == 0 {
            return Err(Error::Config(format!("warm start {} shares no parameters with the model", path.display())));
        }
    }
    for src in warm {
        model.load_matching(src)?;
    }
    Ok(model)
}

/// Train on preloaded datasets. With `out_dir`, the best checkpoint is
/// written to `out_dir/best.ndc` and the epoch log to `out_dir/epochs.csv`.
pub fn train_on(config: &TrainConfig, data: &Datasets, out_dir: Option<&Path>, warm: &[&Model]) -> Result<TrainOutcome> {
    config.validate()?;
    if data.kind != config.model {
        return Err(Error::Config(format!("datasets for {} but config trains {}", data.kind, config.model)));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Data(format!(
            "{} training needs non-empty train and val splits ({} / {})",
            config.model,
            data.train.len(),
            data.val.len()
        )));
    }
    let mut model = build_model(config, warm)?;
    let criterion = Criterion::new(config, &data.train)?;
    let draws: Vec<Draw> = if config.oversample {
        let labels: Vec<u8> = data.train.iter().map(|i| i.label).collect();
        oversample_minority(&labels, mix(config.seed, OVERSAMPLE_TAG))?
    } else {
        (0..data.train.len()).map(|index| Draw { index, copy: 0, force_augment: false }).collect()
    };
    let mut adam = Adam::new(AdamConfig::default());
    let mut scheduler = config.scheduler.map(|s| PlateauScheduler::new(s, config.lr));
    let mut lr = config.lr;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, DROPOUT_TAG));
    let checkpoint = out_dir.map(|d| d.join(CHECKPOINT_FILE));
    let mut best: Option<(ParamStore<f32>, ParamStore<f32>)> = None;
    let mut epochs: Vec<EpochLog> = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order = draws.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(mix(config.seed, SHUFFLE_TAG), epoch as u64)));
        let mut loss_sum = 0.0;
        for (bi, r) in batch_ranges(order.len(), config.batch_size).into_iter().enumerate() {
            let entries: Vec<BatchEntry> = order[r.clone()]
                .iter()
                .map(|d| BatchEntry { item: &data.train[d.index], copy: d.copy, augment: config.augment || d.force_augment })
                .collect();
            let input = assemble(&entries, config.model, config.seed, epoch as u64, config.zoom_prob)?;
            let labels: Vec<usize> = entries.iter().map(|e| e.item.label as usize).collect();
            let (grads, pending, loss) = {
                let mut tape = Tape::with_params(&model.params);
                let out = model.forward(&mut tape, input, Mode::Train, &mut dropout_rng)?;
                let loss_var = criterion.loss(&mut tape, out.logits, out.probability, &labels)?;
                let loss = tape.value(loss_var).item() as f64;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("{} training loss at epoch {epoch}, batch {bi} (lr {lr:e})", config.model),
                    });
                }
                (tape.backward(loss_var)?, out.pending, loss)
            };
            pending.apply(&mut model.buffers);
            adam.step(&mut model.params, &grads, lr)?;
            loss_sum += loss * r.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_scores, val_loss) = evaluate(&model, &data.val, &criterion, config.batch_size)?;
        let val_accuracy = accuracy(&data.val, &val_scores);
        epochs.push(EpochLog { epoch, train_loss, val_loss, val_accuracy, lr });
        if best_index(&epochs.iter().map(|e| e.val_accuracy).collect::<Vec<_>>()) == Some(epoch - 1) {
            best = Some((model.params.clone(), model.buffers.clone()));
            if let Some(path) = &checkpoint {
                let mut meta = CheckpointMeta::for_model(&model);
                meta.epoch = epoch;
                meta.validation_accuracy = epochs.iter().map(|e| e.val_accuracy).collect();
                meta.validation_loss = epochs.iter().map(|e| e.val_loss).collect();
                save_checkpoint(&model, path, &meta)?;
            }
        }
        if let Some(s) = scheduler.as_mut() {
            lr = s.step(val_loss);
        }
    }
    if let Some((params, buffers)) = best {
        model.params = params;
        model.buffers = buffers;
    }
    let accs: Vec<f64> = epochs.iter().map(|e| e.val_accuracy).collect();
    let best_epoch = best_index(&accs).map_or(0, |i| i + 1);
    let (test, test_scores) = if data.test.is_empty() {
        (None, Vec::new())
    } else {
        let (scores, _) = evaluate(&model, &data.test, &criterion, config.batch_size)?;
        let labels: Vec<u8> = data.test.iter().map(|i| i.label).collect();
        (Some(MetricsReport::from_scores(&labels, &scores)?), scores)
    };
    let record = RunRecord {
        model: config.model,
        seed: config.seed,
        best_epoch,
        best_val_accuracy: best_epoch.checked_sub(1).map_or(0.0, |i| accs[i]),
        epochs,
        checkpoint: checkpoint.filter(|_| best_epoch > 0).map(|_| PathBuf::from(CHECKPOINT_FILE)),
        test,
        test_patients: data.test.iter().map(|i| i.patient_id.clone()).collect(),
        test_scores,
    };
    if let Some(dir) = out_dir {
        write_text(&dir.join("epochs.csv"), &epochs_csv(&record.epochs))?;
        crate::evalstats::report::write_json(&dir.join("run_record.json"), &record)?;
    }
    Ok(TrainOutcome { model, record })
}

/// Load the manifest's splits for `config.model` and train.
pub fn train(config: &TrainConfig, manifest: &crate::datapipe::SampleManifest, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let m = crate::trainer::data::ensure_split(manifest, config.split_ratios, config.split_seed)?;
    let data = Datasets::load(&m, config.model, &config.effective_profile())?;
    train_on(config, &data, out_dir, &[])
}
