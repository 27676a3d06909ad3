use crate::error::{Error, Result};
use crate::ndcore::tape::{Op, Tape, Var};
use crate::ndcore::tensor::{Element, Tensor};

pub(crate) fn mean_axis_backward<T: Element>(g: &Tensor<T>, in_shape: &[usize], axis: usize) -> Tensor<T> {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let ext = in_shape[axis];
    let scale = T::one() / T::from_f64(ext as f64);
    let mut out = Tensor::zeros(in_shape.to_vec());
    let gd = g.data();
    let od = out.data_mut();
    for o in 0..outer {
        for e in 0..ext {
            for i in 0..inner {
                od[(o * ext + e) * inner + i] = gd[o * inner + i] * scale;
            }
        }
    }
    out
}

pub(crate) fn narrow_backward<T: Element>(g: &Tensor<T>, in_shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let ext = in_shape[axis];
    let len = g.shape()[axis];
    let mut out = Tensor::zeros(in_shape.to_vec());
    let od = out.data_mut();
    for o in 0..outer {
        let dst = (o * ext + start) * inner;
        let src = o * len * inner;
        od[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
    }
    out
}

impl<T: Element> Tape<'_, T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(y, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let y = self.value(x).permute(perm)?;
        Ok(self.push(
            y,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::concat(&values, axis)?;
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let y = self.value(x).narrow(axis, start, len)?;
        Ok(self.push(y, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::invalid("mean_axis", format!("axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let ext = shape[axis];
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let d = v.data();
        let scale = T::one() / T::from_f64(ext as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let row = &d[(o * ext + e) * inner..(o * ext + e + 1) * inner];
                for (acc, &val) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += val;
                }
            }
        }
        for v in &mut out {
            *v = *v * scale;
        }
        let y = Tensor::new(out_shape, out)?;
        Ok(self.push(y, Op::MeanAxis { x, axis }, &[x]))
    }
}
