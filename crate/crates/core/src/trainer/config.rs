//! Training configuration with per-model defaults and JSON overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::models::profile::{named_or_inline, ScaleProfile};
use crate::models::ModelKind;
use crate::trainer::scheduler::SchedulerConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmStart {
    pub mri: Option<PathBuf>,
    pub us: Option<PathBuf>,
}

impl WarmStart {
    pub fn is_empty(&self) -> bool {
        self.mri.is_none() && self.us.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    #[serde(with = "named_or_inline")]
    pub profile: ScaleProfile,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: Option<f64>,
    /// Overrides the profile's MRI head dropout.
    pub mri_dropout: Option<f64>,
    /// Overrides the profile's fusion head dropout.
    pub fusion_dropout: Option<f64>,
    /// `None` keeps the learning rate constant.
    pub scheduler: Option<SchedulerConfig>,
    /// Seeds initialisation, shuffling, dropout, oversampling and augmentation.
    pub seed: u64,
    #[serde(default)]
    pub warm_start: WarmStart,
    /// Inverse-frequency class weights in the loss.
    pub class_weights: bool,
    /// Duplicate minority training samples up to the majority count.
    pub oversample: bool,
    /// Random augmentation of training samples (duplicates are always augmented).
    pub augment: bool,
    /// Probability of the MRI zoom augmentation.
    pub zoom_prob: f64,
    /// (train, val, test) ratios applied when the manifest has unassigned samples.
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
}

impl TrainConfig {
    /// Defaults for each model family: Adam at 1e-4, batch 8; cross-entropy
    /// with oversampling (MRI) or class weights and label smoothing 0.1
    /// (US); BCE without scheduler or augmentation for fusion.
    pub fn defaults(model: ModelKind, profile: ScaleProfile) -> Self {
        let unimodal = model != ModelKind::Fusion;
        TrainConfig {
            model,
            profile,
            lr: 1e-4,
            batch_size: 8,
            epochs: match model {
                ModelKind::Mri => 100,
                ModelKind::Us => 200,
                ModelKind::Fusion => 100,
            },
            label_smoothing: (model == ModelKind::Us).then_some(0.1),
            mri_dropout: None,
            fusion_dropout: None,
            scheduler: unimodal.then(SchedulerConfig::default),
            seed: 0,
            warm_start: WarmStart::default(),
            class_weights: model == ModelKind::Us,
            oversample: model == ModelKind::Mri,
            augment: unimodal,
            zoom_prob: 1.0,
            split_ratios: if unimodal { [0.7, 0.1, 0.2] } else { [0.6, 0.15, 0.25] },
            split_seed: 0,
        }
    }

    /// Profile with the dropout overrides applied.
    pub fn effective_profile(&self) -> ScaleProfile {
        let mut p = self.profile.clone();
        if let Some(d) = self.mri_dropout {
            p.mri_dropout = d;
        }
        if let Some(d) = self.fusion_dropout {
            p.fusion_dropout = d;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if let Some(s) = self.label_smoothing {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Config(format!("label_smoothing {s} outside [0, 1)")));
            }
        }
        if let Some(s) = &self.scheduler {
            if !(s.factor > 0.0 && s.factor < 1.0) || s.patience == 0 || s.min_lr < 0.0 {
                return Err(Error::Config(format!("invalid scheduler {s:?}")));
            }
        }
        if !(0.0..=1.0).contains(&self.zoom_prob) {
            return Err(Error::Config(format!("zoom_prob {} outside [0, 1]", self.zoom_prob)));
        }
        if self.model != ModelKind::Fusion && !self.warm_start.is_empty() {
            return Err(Error::Config("warm_start applies to the fusion model only".into()));
        }
        self.effective_profile().validate()
    }

    /// Build from a JSON object whose missing keys fall back to
    /// [`TrainConfig::defaults`] for its `model` (and `profile`).
    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::Config("train config must be a JSON object".into()))?;
        let model: ModelKind = match obj.get("model") {
            Some(m) => serde_json::from_value(m.clone()).map_err(|e| Error::Config(format!("model: {e}")))?,
            None => return Err(Error::Config("train config needs a \"model\" key".into())),
        };
        let profile = match obj.get("profile") {
            Some(Value::String(name)) => ScaleProfile::by_name(name)?,
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
            None => ScaleProfile::micro(),
        };
        let mut merged = serde_json::to_value(Self::defaults(model, profile))?;
        merge(&mut merged, v);
        let cfg: TrainConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Recursively overlay `patch` onto `base` (objects merge, other values replace).
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}
