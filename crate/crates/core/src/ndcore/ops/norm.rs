use crate::error::{Error, Result};
use crate::ndcore::tape::{Op, Tape, Var};
use crate::ndcore::tensor::{Element, Tensor};

pub const NORM_EPS: f64 = 1e-5;

/// Saved state shared by batch and layer normalization.
pub(crate) struct NormSaved<T> {
    pub x: Var,
    pub gamma: Var,
    pub beta: Var,
    /// Normalized input (before the affine map), same layout as x.
    pub xhat: Vec<T>,
    /// One reciprocal std per normalization group.
    pub inv_std: Vec<T>,
    pub shape: Vec<usize>,
    /// Batch statistics were used (gradient flows through mean/var).
    pub batch_stats: bool,
}

/// Per-channel batch statistics from a training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (biased when only one element per channel).
    pub var_unbiased: Vec<T>,
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::invalid("batchnorm", format!("need [B, C, ..], got {shape:?}")));
    }
    if shape[0] == 0 {
        return Err(Error::invalid("batchnorm", "batch size 0"));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn check_affine<T: Element>(tape: &Tape<'_, T>, op: &'static str, gamma: Var, beta: Var, n: usize) -> Result<()> {
    for v in [gamma, beta] {
        if tape.shape(v) != [n] {
            return Err(Error::shape(op, 0, format!("affine parameter {:?} vs {n} features", tape.shape(v))));
        }
    }
    Ok(())
}

pub(crate) fn batchnorm_backward<T: Element>(s: &NormSaved<T>, gamma: &Tensor<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let (b, c, sp) = channel_layout(&s.shape).expect("checked in forward");
    let gd = g.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * sp;
            for i in off..off + sp {
                dgamma[ch] += gd[i] * s.xhat[i];
                dbeta[ch] += gd[i];
            }
        }
    }
    let n = T::from_f64((b * sp) as f64);
    let mut dx = vec![T::zero(); gd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let k = gamma.data()[ch] * s.inv_std[ch];
            let off = (bi * c + ch) * sp;
            for i in off..off + sp {
                dx[i] = if s.batch_stats {
                    k * (gd[i] - dbeta[ch] / n - s.xhat[i] * dgamma[ch] / n)
                } else {
                    k * gd[i]
                };
            }
        }
    }
    vec![
        (s.x, Tensor::new(s.shape.clone(), dx).expect("shape")),
        (s.gamma, Tensor::new([c], dgamma).expect("shape")),
        (s.beta, Tensor::new([c], dbeta).expect("shape")),
    ]
}

pub(crate) fn layernorm_backward<T: Element>(s: &NormSaved<T>, gamma: &Tensor<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let d = *s.shape.last().expect("rank >= 1");
    let gd = g.data();
    let gv = gamma.data();
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let mut dx = vec![T::zero(); gd.len()];
    let n = T::from_f64(d as f64);
    for (r, (grow, xrow)) in gd.chunks(d).zip(s.xhat.chunks(d)).enumerate() {
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            dgamma[j] += grow[j] * xrow[j];
            dbeta[j] += grow[j];
            let dxh = grow[j] * gv[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xrow[j];
        }
        let inv = s.inv_std[r];
        for j in 0..d {
            let dxh = grow[j] * gv[j];
            dx[r * d + j] = inv * (dxh - sum_dxhat / n - xrow[j] * sum_dxhat_xhat / n);
        }
    }
    vec![
        (s.x, Tensor::new(s.shape.clone(), dx).expect("shape")),
        (s.gamma, Tensor::new([d], dgamma).expect("shape")),
        (s.beta, Tensor::new([d], dbeta).expect("shape")),
    ]
}

/// `gamma * (x - mean) * inv_std + beta` per channel; returns output and xhat.
fn affine_normalize<T: Element>(
    tape: &Tape<'_, T>,
    x: Var,
    (gamma, beta): (Var, Var),
    c: usize,
    sp: usize,
    stats: impl Fn(usize) -> (T, T),
) -> (Tensor<T>, Vec<T>) {
    let xv = tape.value(x);
    let (gv, bv) = (tape.value(gamma).data(), tape.value(beta).data());
    let mut xhat = Vec::with_capacity(xv.len());
    let mut y = Vec::with_capacity(xv.len());
    for (plane_idx, plane) in xv.data().chunks(sp.max(1)).enumerate() {
        let ch = plane_idx % c;
        let (mean, inv) = stats(ch);
        for &v in plane {
            let h = (v - mean) * inv;
            xhat.push(h);
            y.push(gv[ch] * h + bv[ch]);
        }
    }
    (Tensor::new(xv.shape(), y).expect("shape"), xhat)
}

impl<T: Element> Tape<'_, T> {
    /// Training-mode batch norm over `[B, C, ..]`, normalizing each channel
    /// with its batch statistics. Returns the statistics so the caller can
    /// fold them into running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<T>)> {
        let shape = self.shape(x).to_vec();
        let (b, c, sp) = channel_layout(&shape)?;
        check_affine(self, "batchnorm", gamma, beta, c)?;
        let xd = self.value(x).data();
        let n = b * sp;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * sp;
                mean[ch] += xd[off..off + sp].iter().copied().sum::<T>();
            }
        }
        let nf = T::from_f64(n as f64);
        for m in &mut mean {
            *m = *m / nf;
        }
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * sp;
                var[ch] += xd[off..off + sp].iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
            }
        }
        let eps = T::from_f64(NORM_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v / nf + eps).sqrt()).collect();
        let var_unbiased = var
            .iter()
            .map(|&v| if n > 1 { v / T::from_f64((n - 1) as f64) } else { v / nf })
            .collect();
        let (y, xhat) = affine_normalize(self, x, (gamma, beta), c, sp, |ch| (mean[ch], inv_std[ch]));
        let saved = NormSaved {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            shape: shape.clone(),
            batch_stats: true,
        };
        let out = self.push(y, Op::BatchNorm(saved), &[x, gamma, beta]);
        Ok((out, BatchStats { mean, var_unbiased }))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (_, c, sp) = channel_layout(&shape)?;
        check_affine(self, "batchnorm", gamma, beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batchnorm", 1, "running statistics length"));
        }
        let eps = T::from_f64(NORM_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = affine_normalize(self, x, (gamma, beta), c, sp, |ch| (mean[ch], inv_std[ch]));
        let saved = NormSaved {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            shape,
            batch_stats: false,
        };
        Ok(self.push(y, Op::BatchNorm(saved), &[x, gamma, beta]))
    }

    /// Layer norm over the last axis with per-feature affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::invalid("layernorm", "scalar input"))?;
        check_affine(self, "layernorm", gamma, beta, d)?;
        let eps = T::from_f64(NORM_EPS);
        let nf = T::from_f64(d as f64);
        let xd = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xd.len());
        let mut y = Vec::with_capacity(xd.len());
        let mut inv_std = Vec::with_capacity(xd.len() / d.max(1));
        for row in xd.chunks(d) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                y.push(gv[j] * h + bv[j]);
            }
        }
        let y = Tensor::new(shape.clone(), y)?;
        let saved = NormSaved {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            shape,
            batch_stats: true,
        };
        Ok(self.push(y, Op::LayerNorm(saved), &[x, gamma, beta]))
    }
}
