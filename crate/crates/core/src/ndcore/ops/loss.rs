use crate::error::{Error, Result};
use crate::ndcore::ops::elementwise::softmax_rows;
use crate::ndcore::tape::{Op, Tape, Var};
use crate::ndcore::tensor::{Element, Tensor};

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Bce,
}

pub(crate) struct CeSaved<T> {
    pub logits: Var,
    pub probs: Vec<T>,
    /// Smoothed target distribution, `[B, K]`.
    pub targets: Vec<T>,
    /// Per-sample weight divided by the summed weights.
    pub weights: Vec<T>,
}

pub(crate) struct BceSaved<T> {
    pub p: Var,
    pub targets: Vec<T>,
    pub weights: Vec<T>,
    pub p_values: Vec<f64>,
}

fn sample_weights(targets: &[usize], class_weights: Option<&[f64]>) -> Vec<f64> {
    let w: Vec<f64> = targets
        .iter()
        .map(|&t| class_weights.map_or(1.0, |cw| cw[t]))
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub(crate) fn cross_entropy_backward<T: Element>(s: &CeSaved<T>, g: &Tensor<T>) -> Tensor<T> {
    let k = s.targets.len() / s.weights.len();
    let gs = g.item();
    let data = s
        .probs
        .iter()
        .zip(&s.targets)
        .enumerate()
        .map(|(i, (&p, &q))| gs * s.weights[i / k] * (p - q))
        .collect();
    Tensor::new([s.weights.len(), k], data).expect("shape")
}

pub(crate) fn bce_backward<T: Element>(s: &BceSaved<T>, p_shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let gs = g.item().as_f64();
    Tensor::from_fn(p_shape.to_vec(), |i| {
        let y = s.targets[i].as_f64();
        let w = s.weights[i].as_f64();
        let p = s.p_values[i];
        if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
            T::zero()
        } else {
            T::from_f64(gs * w * (-y / p + (1.0 - y) / (1.0 - p)))
        }
    })
}

impl<T: Element> Tape<'_, T> {
    /// Mean (optionally class-weighted) cross-entropy of `[B, K]` logits
    /// against integer targets, with optional label smoothing `eps`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[f64]>,
        smoothing: Option<f64>,
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() || shape[0] == 0 {
            return Err(Error::invalid(
                "cross_entropy",
                format!("logits {shape:?} vs {} targets", targets.len()),
            ));
        }
        let (b, k) = (shape[0], shape[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::invalid("cross_entropy", format!("target index {bad} >= {k} classes")));
        }
        if let Some(cw) = class_weights {
            if cw.len() != k {
                return Err(Error::invalid("cross_entropy", "one class weight per class required"));
            }
        }
        let eps = smoothing.unwrap_or(0.0);
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::invalid("cross_entropy", format!("label smoothing {eps} outside [0, 1)")));
        }
        let weights = sample_weights(targets, class_weights);
        let lv = self.value(logits).data();
        let probs = softmax_rows(lv, k);
        let mut q = vec![0.0f64; b * k];
        let mut loss = 0.0f64;
        for (i, row) in lv.chunks(k).enumerate() {
            let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
            for (j, &z) in row.iter().enumerate() {
                let target = smoothed_target(j == targets[i], eps, k);
                q[i * k + j] = target;
                loss -= weights[i] * target * (z.as_f64() - lse);
            }
        }
        let saved = CeSaved {
            logits,
            probs,
            targets: q.into_iter().map(T::from_f64).collect(),
            weights: weights.into_iter().map(T::from_f64).collect(),
        };
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::CrossEntropy(saved), &[logits]))
    }

    /// Mean (optionally class-weighted) binary cross-entropy of probabilities
    /// in `[B]` or `[B, 1]` against 0/1 targets. Probabilities are clamped
    /// to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[usize], class_weights: Option<&[f64]>) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != targets.len() || targets.is_empty() {
            return Err(Error::invalid(
                "bce",
                format!("{} probabilities vs {} targets", pv.len(), targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t > 1) {
            return Err(Error::invalid("bce", format!("target {bad} is not 0/1")));
        }
        let weights = sample_weights(targets, class_weights);
        let mut loss = 0.0f64;
        let mut p_values = Vec::with_capacity(targets.len());
        for (i, (&pi, &t)) in pv.data().iter().zip(targets).enumerate() {
            let raw = pi.as_f64();
            p_values.push(raw);
            let pc = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = t as f64;
            loss -= weights[i] * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
        }
        let saved = BceSaved {
            p,
            targets: targets.iter().map(|&t| T::from_f64(t as f64)).collect(),
            weights: weights.into_iter().map(T::from_f64).collect(),
            p_values,
        };
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::Bce(saved), &[p]))
    }

    pub fn loss(&mut self, kind: LossKind, pred: Var, targets: &[usize], class_weights: Option<&[f64]>, smoothing: Option<f64>) -> Result<Var> {
        match kind {
            LossKind::CrossEntropy => self.cross_entropy(pred, targets, class_weights, smoothing),
            LossKind::Bce => self.bce(pred, targets, class_weights),
        }
    }
}

/// One-hot target mapped to `y (1 - eps) + eps / K`.
pub fn smoothed_target(is_target: bool, eps: f64, k: usize) -> f64 {
    let y = if is_target { 1.0 } else { 0.0 };
    y * (1.0 - eps) + eps / k as f64
}
