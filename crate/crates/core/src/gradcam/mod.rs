//! Gradient-weighted class activation maps and their rendering.

pub mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{densenet, resnet, Input, Mode, Model, ModelKind};
use crate::ndcore::{Tape, Tensor, Var};

pub use render::{
    blend, jet, overlay_rgb, read_pnm, render_overlay, representative_depths, write_index, write_pgm, write_ppm, IndexEntry, Pnm,
    JET_STOPS, OVERLAY_ALPHA,
};

/// A class activation map resampled to the input grid, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Row-major over `extents` (`[H, W, D]` or `[H, W]`).
    pub values: Vec<f32>,
    pub extents: Vec<usize>,
    pub layer: String,
    pub class_index: usize,
    pub sample_id: String,
}

impl Heatmap {
    pub fn with_sample(mut self, id: impl Into<String>) -> Self {
        self.sample_id = id.into();
        self
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Mean heat inside `mask` divided by the mean outside it.
    pub fn mass_ratio(&self, mask: &[bool]) -> Option<f64> {
        if mask.len() != self.values.len() {
            return None;
        }
        let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &m) in self.values.iter().zip(mask) {
            if m {
                s_in += v as f64;
                n_in += 1;
            } else {
                s_out += v as f64;
                n_out += 1;
            }
        }
        if n_in == 0 || n_out == 0 || s_out == 0.0 {
            return None;
        }
        Some((s_in / n_in as f64) / (s_out / n_out as f64))
    }
}

/// Target layers of each model: the last DenseNet conv for MRI, the last
/// conv of the final ResNet stage for US, both for fusion.
pub fn default_layers(kind: ModelKind) -> Vec<&'static str> {
    match kind {
        ModelKind::Mri => vec![densenet::LAST_CONV_TAP],
        ModelKind::Us => vec![resnet::LAST_CONV_TAP],
        ModelKind::Fusion => vec![densenet::LAST_CONV_TAP, resnet::LAST_CONV_TAP],
    }
}

/// `ReLU(sum_c w_c A_c)` with `w_c` the spatial mean of the gradient, for
/// `[1, C, spatial...]` activations. Returns the map and its extents.
pub fn raw_cam(activation: &Tensor<f32>, gradient: &Tensor<f32>) -> Result<(Vec<f64>, Vec<usize>)> {
    let s = activation.shape();
    if s.len() < 3 || s[0] != 1 || gradient.shape() != s {
        return Err(Error::invalid(
            "gradcam",
            format!("activation {s:?} and gradient {:?} must share a [1, C, ...] shape", gradient.shape()),
        ));
    }
    if !activation.is_finite() || !gradient.is_finite() {
        return Err(Error::NonFinite { context: "gradcam activations or gradients".into() });
    }
    let c = s[1];
    let n: usize = s[2..].iter().product();
    let (a, g) = (activation.data(), gradient.data());
    let mut map = vec![0.0f64; n];
    for ch in 0..c {
        let gs = &g[ch * n..(ch + 1) * n];
        let w = gs.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        for (m, &x) in map.iter_mut().zip(&a[ch * n..(ch + 1) * n]) {
            *m += w * x as f64;
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    Ok((map, s[2..].to_vec()))
}

/// Separable linear resampling with half-pixel centres and edge clamping;
/// equal extents are an exact copy.
pub fn resample_linear(values: &[f64], from: &[usize], to: &[usize]) -> Result<Vec<f64>> {
    if from.len() != to.len() || values.len() != from.iter().product::<usize>() || to.contains(&0) {
        return Err(Error::invalid("resample", format!("{} values, extents {from:?} -> {to:?}", values.len())));
    }
    let mut cur = values.to_vec();
    let mut ext = from.to_vec();
    for axis in 0..from.len() {
        let (n_in, n_out) = (ext[axis], to[axis]);
        if n_in == n_out {
            continue;
        }
        let outer: usize = ext[..axis].iter().product();
        let inner: usize = ext[axis + 1..].iter().product();
        let mut next = vec![0.0; outer * n_out * inner];
        let scale = n_in as f64 / n_out as f64;
        for o in 0..n_out {
            let x = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = x.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            let t = x - i0 as f64;
            for a in 0..outer {
                for b in 0..inner {
                    let v0 = cur[(a * n_in + i0) * inner + b];
                    let v1 = cur[(a * n_in + i1) * inner + b];
                    next[(a * n_out + o) * inner + b] = v0 + t * (v1 - v0);
                }
            }
        }
        cur = next;
        ext[axis] = n_out;
    }
    Ok(cur)
}

/// Min-max normalisation to [0, 1]. An all-zero map stays zero and a
/// constant positive map becomes all ones.
pub fn normalize(values: &[f64]) -> Vec<f32> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || hi <= 0.0 {
        return vec![0.0; values.len()];
    }
    if hi == lo {
        return vec![1.0; values.len()];
    }
    values.iter().map(|&v| (((v - lo) / (hi - lo)) as f32).clamp(0.0, 1.0)).collect()
}

/// Grad-CAM of `score` with respect to `activation` on an existing tape,
/// upsampled to `target` extents.
pub fn gradcam_on_tape(tape: &Tape<f32>, score: Var, activation: Var, target: &[usize]) -> Result<(Vec<f64>, Vec<f32>)> {
    let grads = tape.backward_retaining(score, &[activation])?;
    let a = tape.value(activation);
    let zero;
    let g = match grads.wrt(activation) {
        Some(g) => g,
        None => {
            zero = Tensor::zeros(a.shape().to_vec());
            &zero
        }
    };
    let (raw, ext) = raw_cam(a, g)?;
    let up = resample_linear(&raw, &ext, target)?;
    Ok((raw, normalize(&up)))
}

fn class_score(tape: &mut Tape<f32>, kind: ModelKind, logits: Var, class_index: usize) -> Result<Var> {
    if class_index > 1 {
        return Err(Error::invalid("gradcam", format!("class index {class_index} outside {{0, 1}}")));
    }
    Ok(match kind {
        // The single fusion logit scores the positive class; its negation the negative.
        ModelKind::Fusion => {
            let z = tape.sum(logits);
            if class_index == 1 { z } else { tape.scale(z, -1.0) }
        }
        _ => {
            let z = tape.narrow(logits, 1, class_index, 1)?;
            tape.sum(z)
        }
    })
}

/// Heatmaps for the given layers of a single-sample input (eval mode).
pub fn gradcam_layers(model: &Model, input: &Input, class_index: usize, layers: &[&str]) -> Result<Vec<Heatmap>> {
    for t in [&input.mri, &input.us].into_iter().flatten() {
        if t.shape()[0] != 1 {
            return Err(Error::invalid("gradcam", format!("expects one sample, got batch {}", t.shape()[0])));
        }
    }
    let mut tape = Tape::with_params(&model.params);
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    let out = model.forward(&mut tape, input.clone(), Mode::Eval, &mut rng)?;
    let score = class_score(&mut tape, model.kind, out.logits, class_index)?;
    let mut maps = Vec::with_capacity(layers.len());
    for &layer in layers {
        let act = out
            .tap(layer)
            .ok_or_else(|| Error::invalid("gradcam", format!("model {} has no layer {layer:?}", model.kind)))?;
        let target: Vec<usize> = if layer.starts_with("mri") {
            model.profile.mri_input.to_vec()
        } else {
            model.profile.us_input.to_vec()
        };
        let (_, values) = gradcam_on_tape(&tape, score, act, &target)?;
        maps.push(Heatmap { values, extents: target, layer: layer.to_string(), class_index, sample_id: String::new() });
    }
    Ok(maps)
}

/// Heatmaps at the model's default target layers.
pub fn gradcam(model: &Model, input: &Input, class_index: usize) -> Result<Vec<Heatmap>> {
    gradcam_layers(model, input, class_index, &default_layers(model.kind))
}
