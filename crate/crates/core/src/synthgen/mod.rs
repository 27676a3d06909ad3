//! Paired synthetic volumes and images with planted class signals.
//!
//! Positive volumes receive dark elongated ellipsoids ("bands"), positive
//! images bright elliptical blobs. In complementary mode every positive
//! pair carries its signal in exactly one modality, alternating between the
//! two, so neither modality alone can recover every positive.
//!
//! Every random quantity comes from a ChaCha8 stream keyed by
//! `(seed, index, field)` and all transcendental functions go through
//! `libm`, so output is identical across platforms and independent of
//! generation order.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::manifest::{Modality, Pairing, Sample, SampleManifest, Split};
use crate::datapipe::volume::{write_rimg, write_rvol, Image, Volume};
use crate::error::{Error, Result};
use crate::models::profile::{named_or_inline, ScaleProfile};

/// Fixed signal geometry.
pub mod geometry {
    /// Full thickness of a band, voxels.
    pub const BAND_THICKNESS: (f64, f64) = (2.0, 4.0);
    /// Half length of a band along its long axis, voxels.
    pub const BAND_HALF_LENGTH: (f64, f64) = (6.0, 10.0);
    pub const BAND_COUNT: (u32, u32) = (3, 4);
    /// Blob semi-axes, pixels.
    pub const BLOB_RADIUS: (f64, f64) = (5.0, 9.0);
    pub const BLOB_COUNT: (u32, u32) = (2, 3);
    /// Background: 0.5 plus this many cosine components of amplitude up to
    /// `FIELD_AMPLITUDE` each.
    pub const FIELD_COMPONENTS: usize = 3;
    pub const FIELD_AMPLITUDE: f64 = 0.05;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalMode {
    /// Positives carry the signal in both modalities.
    Redundant,
    /// Positives carry the signal in exactly one modality, alternating.
    Complementary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_pairs: usize,
    pub positive_fraction: f64,
    #[serde(with = "named_or_inline")]
    pub profile: ScaleProfile,
    pub mode: SignalMode,
    /// Intensity change inside a signal region.
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Patient ids are `{prefix}-{index:05}`.
    #[serde(default = "default_prefix")]
    pub patient_prefix: String,
}

fn default_prefix() -> String {
    "synth".into()
}

impl SynthSpec {
    pub fn new(n_pairs: usize, positive_fraction: f64, profile: ScaleProfile, mode: SignalMode, seed: u64) -> Self {
        SynthSpec {
            n_pairs,
            positive_fraction,
            profile,
            mode,
            signal_strength: 0.5,
            noise_sigma: 0.1,
            seed,
            patient_prefix: default_prefix(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!("positive_fraction {} outside (0, 1)", self.positive_fraction)));
        }
        if !(self.signal_strength > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("signal_strength must be > 0 and noise_sigma >= 0".into()));
        }
        if self.patient_prefix.is_empty() {
            return Err(Error::Config("patient_prefix must be non-empty".into()));
        }
        self.profile.validate()
    }

    pub fn n_positive(&self) -> usize {
        (self.n_pairs as f64 * self.positive_fraction).round() as usize
    }

    /// Label of pair `index`; positives are spread evenly over the indices.
    pub fn label(&self, index: usize) -> u8 {
        let (n, p) = (self.n_pairs, self.n_positive());
        ((index + 1) * p / n - index * p / n) as u8
    }

    /// Which modalities carry the signal for pair `index`.
    pub fn signal_flags(&self, index: usize) -> (bool, bool) {
        if self.label(index) == 0 {
            return (false, false);
        }
        match self.mode {
            SignalMode::Redundant => (true, true),
            SignalMode::Complementary => {
                let ordinal = index * self.n_positive() / self.n_pairs;
                (ordinal % 2 == 0, ordinal % 2 == 1)
            }
        }
    }

    pub fn patient_id(&self, index: usize) -> String {
        format!("{}-{index:05}", self.patient_prefix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    /// Raw single-channel volume at the profile's MRI extents, values in [0, 1].
    pub volume: Volume,
    /// Raw single-channel image at the profile's US extents, values in [0, 1].
    pub image: Image,
    pub label: u8,
    pub mri_signal: bool,
    pub us_signal: bool,
}

#[derive(Clone, Copy)]
enum Field {
    MriBackground = 0,
    MriNoise = 1,
    MriSignal = 2,
    UsBackground = 3,
    UsNoise = 4,
    UsSignal = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(seed: u64, index: usize, field: Field) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index as u64)));
    rng.set_stream(field as u64);
    rng
}

/// Standard normal draw by Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

/// Sum of cosines with integer frequencies over the grid; every component
/// has exactly zero mean on the grid.
struct LowFrequencyField {
    components: Vec<(Vec<f64>, f64, f64)>,
}

impl LowFrequencyField {
    fn sample(rng: &mut ChaCha8Rng, extents: &[usize]) -> Self {
        let components = (0..geometry::FIELD_COMPONENTS)
            .map(|_| {
                let mut freq: Vec<f64> = extents.iter().map(|_| rng.random_range(0..=2u32) as f64).collect();
                if freq.iter().all(|&f| f == 0.0) {
                    freq[0] = 1.0;
                }
                let k: Vec<f64> = freq.iter().zip(extents).map(|(f, &n)| std::f64::consts::TAU * f / n as f64).collect();
                let amp = geometry::FIELD_AMPLITUDE * rng.random::<f64>();
                let phase = std::f64::consts::TAU * rng.random::<f64>();
                (k, amp, phase)
            })
            .collect();
        LowFrequencyField { components }
    }

    fn at(&self, pos: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|(k, amp, phase)| {
                let arg: f64 = k.iter().zip(pos).map(|(k, x)| k * x).sum();
                amp * libm::cos(arg + phase)
            })
            .sum()
    }
}

fn background(extents: &[usize], seed: u64, index: usize, sigma: f64, fields: (Field, Field)) -> Vec<f64> {
    let field = LowFrequencyField::sample(&mut stream(seed, index, fields.0), extents);
    let mut noise = stream(seed, index, fields.1);
    let n: usize = extents.iter().product();
    let mut pos = vec![0.0; extents.len()];
    (0..n)
        .map(|flat| {
            let mut rem = flat;
            for a in (0..extents.len()).rev() {
                pos[a] = (rem % extents[a]) as f64;
                rem /= extents[a];
            }
            0.5 + field.at(&pos) + sigma * gaussian(&mut noise)
        })
        .collect()
}

/// Voxel mask of dark bands: elongated ellipsoids with random orientation.
pub fn band_mask(extents: [usize; 3], rng: &mut ChaCha8Rng) -> Vec<bool> {
    use geometry::*;
    let count = rng.random_range(BAND_COUNT.0..=BAND_COUNT.1);
    let bands: Vec<([f64; 3], [f64; 3], f64, f64)> = (0..count)
        .map(|_| {
            let centre = extents.map(|e| e as f64 * uniform(rng, (0.3, 0.7)));
            let mut u = [gaussian(rng), gaussian(rng), gaussian(rng)];
            let norm = libm::sqrt(u.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            u.iter_mut().for_each(|x| *x /= norm);
            let half_len = uniform(rng, BAND_HALF_LENGTH);
            let half_thick = uniform(rng, BAND_THICKNESS) / 2.0;
            (centre, u, half_len, half_thick)
        })
        .collect();
    let [h, w, d] = extents;
    let mut mask = vec![false; h * w * d];
    for i in 0..h {
        for j in 0..w {
            for k in 0..d {
                let p = [i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5];
                mask[(i * w + j) * d + k] = bands.iter().any(|(c, u, l, t)| {
                    let r = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                    let along = r[0] * u[0] + r[1] * u[1] + r[2] * u[2];
                    let perp2 = r.iter().map(|x| x * x).sum::<f64>() - along * along;
                    (along / l) * (along / l) + perp2.max(0.0) / (t * t) <= 1.0
                });
            }
        }
    }
    mask
}

/// Pixel mask of bright elliptical blobs.
pub fn blob_mask(extents: [usize; 2], rng: &mut ChaCha8Rng) -> Vec<bool> {
    use geometry::*;
    let count = rng.random_range(BLOB_COUNT.0..=BLOB_COUNT.1);
    let blobs: Vec<([f64; 2], f64, f64, f64)> = (0..count)
        .map(|_| {
            let centre = extents.map(|e| e as f64 * uniform(rng, (0.25, 0.75)));
            let (ry, rx) = (uniform(rng, BLOB_RADIUS), uniform(rng, BLOB_RADIUS));
            let theta = std::f64::consts::PI * rng.random::<f64>();
            (centre, ry, rx, theta)
        })
        .collect();
    let [h, w] = extents;
    let mut mask = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            let p = [i as f64 + 0.5, j as f64 + 0.5];
            mask[i * w + j] = blobs.iter().any(|(c, ry, rx, th)| {
                let (s, co) = (libm::sin(*th), libm::cos(*th));
                let (y, x) = (p[0] - c[0], p[1] - c[1]);
                let (a, b) = (co * y + s * x, -s * y + co * x);
                (a / ry) * (a / ry) + (b / rx) * (b / rx) <= 1.0
            });
        }
    }
    mask
}

fn finish(values: Vec<f64>, mask: Option<&[bool]>, delta: f64) -> Vec<f32> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let v = if mask.is_some_and(|m| m[i]) { v + delta } else { v };
            v.clamp(0.0, 1.0) as f32
        })
        .collect()
}

/// Planted-signal masks of pair `index` (row-major over the MRI and US
/// extents), `None` for a modality without signal.
pub fn signal_masks(spec: &SynthSpec, index: usize) -> Result<(Option<Vec<bool>>, Option<Vec<bool>>)> {
    if index >= spec.n_pairs {
        return Err(Error::invalid("signal_masks", format!("index {index} >= n_pairs {}", spec.n_pairs)));
    }
    let (mri_signal, us_signal) = spec.signal_flags(index);
    let p = &spec.profile;
    Ok((
        mri_signal.then(|| band_mask(p.mri_input, &mut stream(spec.seed, index, Field::MriSignal))),
        us_signal.then(|| blob_mask(p.us_input, &mut stream(spec.seed, index, Field::UsSignal))),
    ))
}

/// Generate pair `index`; identical `(spec, index)` gives identical bytes.
pub fn generate_pair(spec: &SynthSpec, index: usize) -> Result<SynthPair> {
    if index >= spec.n_pairs {
        return Err(Error::invalid("generate_pair", format!("index {index} >= n_pairs {}", spec.n_pairs)));
    }
    let label = spec.label(index);
    let (mri_signal, us_signal) = spec.signal_flags(index);
    let p = &spec.profile;
    let s = spec.seed;

    let (mri_mask, us_mask) = signal_masks(spec, index)?;
    let vol = background(&p.mri_input, s, index, spec.noise_sigma, (Field::MriBackground, Field::MriNoise));
    let volume = Volume::new(p.mri_input, finish(vol, mri_mask.as_deref(), -spec.signal_strength))?;

    let img = background(&p.us_input, s, index, spec.noise_sigma, (Field::UsBackground, Field::UsNoise));
    let image = Image::new(1, p.us_input, finish(img, us_mask.as_deref(), spec.signal_strength))?;

    Ok(SynthPair { volume, image, label, mri_signal, us_signal })
}

/// Best accuracy of a single threshold on `scores` (either direction).
pub fn threshold_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    if n == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos_total = labels.iter().filter(|&&l| l == 1).count();
    // predict 1 above the cut (or below it for the flipped direction)
    let (mut best, mut pos_below, mut i) = (0usize, 0usize, 0usize);
    loop {
        let below = i;
        let neg_below = below - pos_below;
        let above_rule = neg_below + (pos_total - pos_below);
        let below_rule = pos_below + (n - below - (pos_total - pos_below));
        best = best.max(above_rule).max(below_rule);
        if i == n {
            break;
        }
        // advance past ties
        let v = scores[order[i]];
        while i < n && scores[order[i]] == v {
            pos_below += (labels[order[i]] == 1) as usize;
            i += 1;
        }
    }
    best as f64 / n as f64
}

/// Threshold-on-mean separability for each modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Signal-bearing positives against negatives.
    pub mri_bearing: Option<f64>,
    pub us_bearing: Option<f64>,
    /// Positives without the signal in that modality against negatives.
    pub mri_non_bearing: Option<f64>,
    pub us_non_bearing: Option<f64>,
}

fn mean(data: &[f32]) -> f64 {
    data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64
}

/// Oracle accuracy on a class-balanced subset: the larger class is cut to
/// the size of the smaller one (lowest indices kept), so 0.5 is chance.
fn subset_accuracy(means: &[f64], labels: &[u8], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let kept: Vec<usize> = (0..means.len()).filter(|&i| keep(i)).collect();
    let per_class = [0u8, 1].map(|c| kept.iter().filter(|&&i| labels[i] == c).count());
    let m = per_class[0].min(per_class[1]);
    if m == 0 {
        return None;
    }
    let mut taken = [0usize; 2];
    let (mut s, mut l) = (Vec::new(), Vec::new());
    for &i in &kept {
        let c = labels[i] as usize;
        if taken[c] < m {
            taken[c] += 1;
            s.push(means[i]);
            l.push(labels[i]);
        }
    }
    Some(threshold_oracle(&s, &l))
}

/// Oracle accuracies from per-pair means and flags.
pub fn oracle_report(mri_means: &[f64], us_means: &[f64], labels: &[u8], flags: &[(bool, bool)]) -> OracleReport {
    let neg = |i: usize| labels[i] == 0;
    OracleReport {
        mri_bearing: subset_accuracy(mri_means, labels, |i| neg(i) || flags[i].0),
        us_bearing: subset_accuracy(us_means, labels, |i| neg(i) || flags[i].1),
        mri_non_bearing: subset_accuracy(mri_means, labels, |i| neg(i) || (labels[i] == 1 && !flags[i].0)),
        us_non_bearing: subset_accuracy(us_means, labels, |i| neg(i) || (labels[i] == 1 && !flags[i].1)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub patient_id: String,
    pub label: u8,
    pub mri_signal: bool,
    pub us_signal: bool,
}

/// Generation summary written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub spec: SynthSpec,
    pub n_positive: usize,
    pub pairs: Vec<PairRecord>,
    pub oracle: OracleReport,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "synth_report.json";

/// Write `mri/*.rvol`, `us/*.rimg`, `manifest.json` and `synth_report.json`
/// under `dir`; returns the manifest (splits unassigned).
pub fn generate_dataset(spec: &SynthSpec, dir: &Path) -> Result<(SampleManifest, SynthReport)> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut samples = Vec::with_capacity(2 * spec.n_pairs);
    let mut pairing = Vec::with_capacity(spec.n_pairs);
    let mut pairs = Vec::with_capacity(spec.n_pairs);
    let (mut mri_means, mut us_means, mut labels, mut flags) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for sub in ["mri", "us"] {
        if spec.n_pairs > 0 {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    for index in 0..spec.n_pairs {
        let pair = generate_pair(spec, index)?;
        let pid = spec.patient_id(index);
        let mri_uri = format!("mri/{pid}.rvol");
        let us_uri = format!("us/{pid}.rimg");
        write_rvol(&dir.join(&mri_uri), &pair.volume)?;
        write_rimg(&dir.join(&us_uri), &pair.image)?;
        for (modality, uri) in [(Modality::Mri, &mri_uri), (Modality::Us, &us_uri)] {
            samples.push(Sample {
                patient_id: pid.clone(),
                modality,
                label: pair.label,
                uri: uri.clone(),
                split: Split::Unassigned,
            });
        }
        pairing.push(Pairing { patient_id: pid.clone(), mri: mri_uri, us: us_uri, label: pair.label });
        mri_means.push(mean(&pair.volume.data));
        us_means.push(mean(&pair.image.data));
        labels.push(pair.label);
        flags.push((pair.mri_signal, pair.us_signal));
        pairs.push(PairRecord { patient_id: pid, label: pair.label, mri_signal: pair.mri_signal, us_signal: pair.us_signal });
    }
    let mut manifest = SampleManifest::new(samples, pairing);
    manifest.root = dir.to_path_buf();
    manifest.validate()?;
    manifest.save(&dir.join(MANIFEST_FILE))?;
    let report = SynthReport {
        spec: spec.clone(),
        n_positive: labels.iter().filter(|&&l| l == 1).count(),
        pairs,
        oracle: oracle_report(&mri_means, &us_means, &labels, &flags),
    };
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok((manifest, report))
}
