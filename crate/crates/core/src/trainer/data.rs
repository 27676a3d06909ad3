//! Preprocessed in-memory datasets and batch assembly.

use crate::datapipe::augment::{augment_mri, augment_us};
use crate::datapipe::manifest::{load_image, load_volume, Modality, SampleManifest, Split};
use crate::datapipe::preprocess::{preprocess_mri, preprocess_us};
use crate::datapipe::split::stratified_split;
use crate::datapipe::volume::{Image, Volume};
use crate::datapipe::sample_rng;
use crate::error::{Error, Result};
use crate::models::{Input, ModelKind, ScaleProfile};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub patient_id: String,
    pub label: u8,
    pub mri: Option<Volume>,
    pub us: Option<Image>,
}

/// Train, validation and test items for one model family.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub kind: ModelKind,
    pub train: Vec<Item>,
    pub val: Vec<Item>,
    pub test: Vec<Item>,
}

fn load_mri(m: &SampleManifest, uri: &str, p: &ScaleProfile) -> Result<Volume> {
    preprocess_mri(&load_volume(&m.resolve(uri))?, p.mri_input)
}

fn load_us(m: &SampleManifest, uri: &str, p: &ScaleProfile) -> Result<Image> {
    preprocess_us(&load_image(&m.resolve(uri))?, p.us_input)
}

/// Split `manifest` with `ratios` if any sample is still unassigned.
pub fn ensure_split(manifest: &SampleManifest, ratios: [f64; 3], seed: u64) -> Result<SampleManifest> {
    if manifest.samples.iter().any(|s| s.split == Split::Unassigned) {
        let mut out = stratified_split(manifest, ratios, seed)?;
        out.root = manifest.root.clone();
        Ok(out)
    } else {
        Ok(manifest.clone())
    }
}

impl Datasets {
    /// Load and preprocess every sample of `kind` (pairs for fusion).
    pub fn load(manifest: &SampleManifest, kind: ModelKind, profile: &ScaleProfile) -> Result<Self> {
        manifest.validate()?;
        let mut sets = Datasets { kind, train: vec![], val: vec![], test: vec![] };
        let mut push = |split: Split, item: Item| match split {
            Split::Train => sets.train.push(item),
            Split::Val => sets.val.push(item),
            Split::Test => sets.test.push(item),
            Split::Unassigned => {}
        };
        match kind {
            ModelKind::Fusion => {
                if manifest.pairing.is_empty() {
                    return Err(Error::Data("fusion training needs a manifest with pairing".into()));
                }
                for split in Split::ASSIGNED {
                    for p in manifest.pairs_in(split) {
                        push(
                            split,
                            Item {
                                patient_id: p.patient_id.clone(),
                                label: p.label,
                                mri: Some(load_mri(manifest, &p.mri, profile)?),
                                us: Some(load_us(manifest, &p.us, profile)?),
                            },
                        );
                    }
                }
            }
            ModelKind::Mri | ModelKind::Us => {
                let modality = if kind == ModelKind::Mri { Modality::Mri } else { Modality::Us };
                for s in manifest.of_modality(modality) {
                    let (mri, us) = match modality {
                        Modality::Mri => (Some(load_mri(manifest, &s.uri, profile)?), None),
                        Modality::Us => (None, Some(load_us(manifest, &s.uri, profile)?)),
                    };
                    push(s.split, Item { patient_id: s.patient_id.clone(), label: s.label, mri, us });
                }
            }
        }
        Ok(sets)
    }

    /// Paired test items viewed through one modality (for evaluating a
    /// unimodal model on the shared multimodal test set).
    pub fn restricted_to(&self, kind: ModelKind) -> Vec<Item> {
        self.test
            .iter()
            .map(|it| Item {
                patient_id: it.patient_id.clone(),
                label: it.label,
                mri: if kind.needs_mri() { it.mri.clone() } else { None },
                us: if kind.needs_us() { it.us.clone() } else { None },
            })
            .collect()
    }
}

/// How one item enters a training batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchEntry<'a> {
    pub item: &'a Item,
    pub copy: u32,
    pub augment: bool,
}

/// Stack items into model input tensors, augmenting where requested with
/// the per-sample stream `(seed, patient, epoch, copy)`.
pub fn assemble(entries: &[BatchEntry], kind: ModelKind, seed: u64, epoch: u64, zoom_prob: f64) -> Result<Input> {
    let mut mri = Vec::new();
    let mut us = Vec::new();
    for e in entries {
        let mut rng = sample_rng(seed, &e.item.patient_id, epoch, e.copy);
        if kind.needs_mri() {
            let v = e.item.mri.as_ref().ok_or_else(|| Error::Data(format!("{} has no MRI volume", e.item.patient_id)))?;
            if e.augment {
                mri.push(augment_mri(v, &mut rng, zoom_prob));
            } else {
                mri.push(v.clone());
            }
        }
        if kind.needs_us() {
            let im = e.item.us.as_ref().ok_or_else(|| Error::Data(format!("{} has no US image", e.item.patient_id)))?;
            if e.augment {
                us.push(augment_us(im, &mut rng));
            } else {
                us.push(im.clone());
            }
        }
    }
    let b = entries.len();
    let stack_mri = |vs: Vec<Volume>| -> Result<Tensor> {
        let [h, w, d] = vs[0].extents;
        let data = vs.into_iter().flat_map(|v| v.data).collect();
        Tensor::new([b, 1, h, w, d], data)
    };
    let stack_us = |is: Vec<Image>| -> Result<Tensor> {
        let [h, w] = is[0].extents;
        let c = is[0].channels;
        let data = is.into_iter().flat_map(|i| i.data).collect();
        Tensor::new([b, c, h, w], data)
    };
    Ok(Input {
        mri: if mri.is_empty() { None } else { Some(stack_mri(mri)?) },
        us: if us.is_empty() { None } else { Some(stack_us(us)?) },
    })
}

/// Split `n` positions into batches of `size`; a trailing batch of one is
/// folded into the previous batch so batch statistics always see two samples.
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size.max(1)).map(|s| s..(s + size).min(n)).collect();
    if out.len() >= 2 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("len >= 2");
        out.last_mut().expect("len >= 1").end = last.end;
    }
    out
}
