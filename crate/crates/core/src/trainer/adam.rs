//! Adam with bias-corrected moments.

use crate::error::{Error, Result};
use crate::ndcore::{Element, Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One in-place Adam update of a parameter slice; `step` is the 1-based
/// count including this update. Arithmetic is done in f64.
pub fn adam_update<T: Element>(w: &mut [T], g: &[T], m: &mut [T], v: &mut [T], step: u64, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if g.len() != w.len() || m.len() != w.len() || v.len() != w.len() {
        return Err(Error::shape("adam", 0, format!("param {} grad {} moments {}/{}", w.len(), g.len(), m.len(), v.len())));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..w.len() {
        let gi = g[i].as_f64();
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * gi;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
        let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        w[i] = T::from_f64(w[i].as_f64() - update);
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Slot<T> {
    step: u64,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Optimiser state for every parameter of one store. Parameters the loss
/// did not reach are skipped (their step count does not advance).
#[derive(Debug, Clone)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    slots: Vec<Option<Slot<T>>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, slots: Vec::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if self.slots.len() < params.len() {
            self.slots.resize(params.len(), None);
        }
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.param(id) else { continue };
            let p = params.get_mut(id);
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", 0, format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let slot = self.slots[id.index()].get_or_insert_with(|| Slot {
                step: 0,
                m: Tensor::zeros(p.shape().to_vec()),
                v: Tensor::zeros(p.shape().to_vec()),
            });
            slot.step += 1;
            adam_update(p.data_mut(), g.data(), slot.m.data_mut(), slot.v.data_mut(), slot.step, lr, &self.config)?;
        }
        Ok(())
    }

    /// Moments of a parameter, if it has been updated.
    pub fn moments(&self, id: crate::ndcore::ParamId) -> Option<(&Tensor<T>, &Tensor<T>, u64)> {
        self.slots.get(id.index())?.as_ref().map(|s| (&s.m, &s.v, s.step))
    }
}
