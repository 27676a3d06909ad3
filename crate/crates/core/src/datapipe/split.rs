//! Patient-level stratified splitting, minority oversampling and class weights.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapipe::manifest::{SampleManifest, Split};
use crate::error::{Error, Result};

/// Allocate `n` items to bins proportionally to `ratios` with the largest
/// remainder method; ties go to the earlier bin.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Assign every patient (and so all of their samples) to train/val/test.
///
/// Patients are grouped per class, shuffled with `seed` and cut according
/// to `ratios` (train, val, test). All samples of one patient must share a
/// label.
pub fn stratified_split(manifest: &SampleManifest, ratios: [f64; 3], seed: u64) -> Result<SampleManifest> {
    check_ratios(ratios)?;
    let mut label_of: BTreeMap<&str, u8> = BTreeMap::new();
    for s in &manifest.samples {
        if let Some(&l) = label_of.get(s.patient_id.as_str()) {
            if l != s.label {
                return Err(Error::Data(format!("patient {} has samples with both labels", s.patient_id)));
            }
        }
        label_of.insert(&s.patient_id, s.label);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    for class in 0..2u8 {
        let mut patients: Vec<&str> = label_of.iter().filter(|(_, &l)| l == class).map(|(p, _)| *p).collect();
        if patients.is_empty() {
            return Err(Error::Data(format!("no patients with label {class}")));
        }
        patients.shuffle(&mut rng);
        let counts = largest_remainder(patients.len(), &ratios);
        let mut it = patients.into_iter();
        for (split, n) in Split::ASSIGNED.into_iter().zip(counts) {
            for p in it.by_ref().take(n) {
                assignment.insert(p, split);
            }
        }
    }
    let mut out = manifest.clone();
    for s in &mut out.samples {
        s.split = assignment[s.patient_id.as_str()];
    }
    Ok(out)
}

/// One entry of an oversampled training list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    /// Index into the original sample list.
    pub index: usize,
    /// 0 for the original, k for the k-th duplicate of the same sample.
    pub copy: u32,
    /// Duplicates are always augmented so they differ from their source.
    pub force_augment: bool,
}

/// Keep every sample and add minority duplicates (drawn with replacement)
/// until both classes have the majority count.
pub fn oversample_minority(labels: &[u8], seed: u64) -> Result<Vec<Draw>> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 1 {
            return Err(Error::Data(format!("label {l} at index {i}")));
        }
        by_class[l as usize].push(i);
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(Error::Data("oversampling needs both classes present".into()));
    }
    let mut out: Vec<Draw> = (0..labels.len()).map(|index| Draw { index, copy: 0, force_augment: false }).collect();
    let minority = if by_class[0].len() < by_class[1].len() { 0 } else { 1 };
    let deficit = by_class[1 - minority].len() - by_class[minority].len();
    let pool = &by_class[minority];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut copies = vec![0u32; labels.len()];
    for _ in 0..deficit {
        let index = pool[rng.random_range(0..pool.len())];
        copies[index] += 1;
        out.push(Draw { index, copy: copies[index], force_augment: true });
    }
    Ok(out)
}

/// Inverse-frequency weights `N / (K * n_c)`.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Data(format!("class weights need positive counts, got {counts:?}")));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&c| n as f64 / (k * c as f64)).collect())
}
