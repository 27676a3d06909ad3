use crate::error::{Error, Result};
use crate::ndcore::ops::conv::spatial_layout;
use crate::ndcore::tape::{Op, Tape, Var};
use crate::ndcore::tensor::{Element, Tensor};

/// Pooling window description for 2 or 3 spatial axes.
///
/// In `ceil_mode` the output extent rounds up and windows that overhang
/// the input average only over the in-bounds elements. With even extents
/// this is identical to the floor rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub dims: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub ceil_mode: bool,
}

impl PoolGeom {
    pub fn cubic(dims: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let mut g = PoolGeom {
            dims,
            kernel: [1; 3],
            stride: [1; 3],
            pad: [0; 3],
            ceil_mode: false,
        };
        for ax in 0..dims.min(3) {
            g.kernel[ax] = kernel;
            g.stride[ax] = stride;
            g.pad[ax] = pad;
        }
        g
    }

    pub fn with_ceil_mode(mut self, ceil: bool) -> Self {
        self.ceil_mode = ceil;
        self
    }
}

fn pool_extent(ext: usize, k: usize, s: usize, pad: usize, ceil: bool) -> Option<usize> {
    let padded = ext + 2 * pad;
    if padded < k {
        // An overhanging single window is allowed only in ceil mode.
        return (ceil && ext > 0).then_some(1);
    }
    let span = padded - k;
    let mut out = if ceil { span.div_ceil(s) + 1 } else { span / s + 1 };
    // The last window must start inside the input or left padding.
    if ceil && (out - 1) * s >= ext + pad {
        out -= 1;
    }
    Some(out)
}

struct Layout {
    planes: usize,
    input: [usize; 3],
    output: [usize; 3],
}

fn layout(shape: &[usize], g: &PoolGeom, op: &'static str) -> Result<(Layout, Vec<usize>)> {
    let (batch, ch, input) = spatial_layout(shape, g.dims, op)?;
    if g.kernel.iter().any(|&k| k == 0) || g.stride.iter().any(|&s| s == 0) {
        return Err(Error::invalid(op, "kernel and stride must be >= 1"));
    }
    if (0..3).any(|ax| g.pad[ax] >= g.kernel[ax] && g.pad[ax] > 0) {
        return Err(Error::invalid(op, "padding must be smaller than the window"));
    }
    let mut output = [1; 3];
    for ax in 0..3 {
        output[ax] = pool_extent(input[ax], g.kernel[ax], g.stride[ax], g.pad[ax], g.ceil_mode).ok_or_else(|| {
            Error::shape(
                op,
                2 + ax,
                format!("window {} larger than padded extent {}", g.kernel[ax], input[ax] + 2 * g.pad[ax]),
            )
        })?;
    }
    let mut out_shape = vec![batch, ch];
    out_shape.extend_from_slice(&output[..g.dims]);
    Ok((
        Layout {
            planes: batch * ch,
            input,
            output,
        },
        out_shape,
    ))
}

/// Visit each output window as (output index, list of in-bounds flat input offsets within the plane).
fn for_each_window(l: &Layout, g: &PoolGeom, mut f: impl FnMut(usize, &[usize])) {
    let [i0, i1, i2] = l.input;
    let [o0, o1, o2] = l.output;
    let mut idx = Vec::with_capacity(g.kernel.iter().product());
    let mut q = 0;
    for u in 0..o0 {
        for v in 0..o1 {
            for w in 0..o2 {
                idx.clear();
                for a in 0..g.kernel[0] {
                    let y0 = (u * g.stride[0] + a) as isize - g.pad[0] as isize;
                    if y0 < 0 || y0 as usize >= i0 {
                        continue;
                    }
                    for b in 0..g.kernel[1] {
                        let y1 = (v * g.stride[1] + b) as isize - g.pad[1] as isize;
                        if y1 < 0 || y1 as usize >= i1 {
                            continue;
                        }
                        for e in 0..g.kernel[2] {
                            let y2 = (w * g.stride[2] + e) as isize - g.pad[2] as isize;
                            if y2 < 0 || y2 as usize >= i2 {
                                continue;
                            }
                            idx.push((y0 as usize * i1 + y1 as usize) * i2 + y2 as usize);
                        }
                    }
                }
                f(q, &idx);
                q += 1;
            }
        }
    }
}

pub(crate) fn maxpool_forward<T: Element>(x: &Tensor<T>, g: &PoolGeom) -> Result<(Tensor<T>, Vec<usize>)> {
    let (l, out_shape) = layout(x.shape(), g, "maxpool")?;
    let nin: usize = l.input.iter().product();
    let nout: usize = l.output.iter().product();
    let mut y = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; l.planes * nout];
    let xd = x.data();
    for plane in 0..l.planes {
        let xp = &xd[plane * nin..(plane + 1) * nin];
        let yp = &mut y.data_mut()[plane * nout..(plane + 1) * nout];
        let ap = &mut argmax[plane * nout..(plane + 1) * nout];
        for_each_window(&l, g, |q, idx| {
            // first maximum in row-major window order wins ties
            let mut best = idx[0];
            for &i in &idx[1..] {
                if xp[i] > xp[best] {
                    best = i;
                }
            }
            yp[q] = xp[best];
            ap[q] = plane * nin + best;
        });
    }
    Ok((y, argmax))
}

pub(crate) fn maxpool_backward<T: Element>(in_shape: &[usize], argmax: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape.to_vec());
    let d = gx.data_mut();
    for (&src, &gv) in argmax.iter().zip(g.data()) {
        d[src] += gv;
    }
    gx
}

fn avg_divisor(g: &PoolGeom, in_bounds: usize) -> usize {
    if g.ceil_mode {
        in_bounds
    } else {
        g.kernel.iter().product()
    }
}

pub(crate) fn avgpool_forward<T: Element>(x: &Tensor<T>, g: &PoolGeom) -> Result<Tensor<T>> {
    let (l, out_shape) = layout(x.shape(), g, "avgpool")?;
    let nin: usize = l.input.iter().product();
    let nout: usize = l.output.iter().product();
    let mut y = Tensor::zeros(out_shape);
    let xd = x.data();
    for plane in 0..l.planes {
        let xp = &xd[plane * nin..(plane + 1) * nin];
        let yp = &mut y.data_mut()[plane * nout..(plane + 1) * nout];
        for_each_window(&l, g, |q, idx| {
            let s: T = idx.iter().map(|&i| xp[i]).sum();
            yp[q] = s / T::from_f64(avg_divisor(g, idx.len()) as f64);
        });
    }
    Ok(y)
}

pub(crate) fn avgpool_backward<T: Element>(in_shape: &[usize], gy: &Tensor<T>, g: &PoolGeom) -> Tensor<T> {
    let (l, _) = layout(in_shape, g, "avgpool").expect("checked in forward");
    let nin: usize = l.input.iter().product();
    let nout: usize = l.output.iter().product();
    let mut gx = Tensor::zeros(in_shape.to_vec());
    for plane in 0..l.planes {
        let gp = &gy.data()[plane * nout..(plane + 1) * nout];
        let xp = &mut gx.data_mut()[plane * nin..(plane + 1) * nin];
        for_each_window(&l, g, |q, idx| {
            let share = gp[q] / T::from_f64(avg_divisor(g, idx.len()) as f64);
            for &i in idx {
                xp[i] += share;
            }
        });
    }
    gx
}

pub(crate) fn global_avgpool_backward<T: Element>(in_shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let spatial: usize = in_shape[2..].iter().product();
    let scale = T::one() / T::from_f64(spatial as f64);
    let mut gx = Tensor::zeros(in_shape.to_vec());
    for (plane, &gv) in gx.data_mut().chunks_mut(spatial).zip(g.data()) {
        plane.fill(gv * scale);
    }
    gx
}

impl<T: Element> Tape<'_, T> {
    pub fn maxpool(&mut self, x: Var, geom: PoolGeom) -> Result<Var> {
        let (y, argmax) = maxpool_forward(self.value(x), &geom)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn avgpool(&mut self, x: Var, geom: PoolGeom) -> Result<Var> {
        let y = avgpool_forward(self.value(x), &geom)?;
        Ok(self.push(y, Op::AvgPool { x, geom }, &[x]))
    }

    /// `[B, C, spatial..]` to `[B, C]` by averaging every spatial position.
    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        if shape.len() < 3 {
            return Err(Error::invalid("global_avgpool", format!("need [B, C, spatial..], got {shape:?}")));
        }
        let spatial: usize = shape[2..].iter().product();
        let scale = T::one() / T::from_f64(spatial as f64);
        let data = v
            .data()
            .chunks(spatial)
            .map(|plane| plane.iter().copied().sum::<T>() * scale)
            .collect();
        let y = Tensor::new([shape[0], shape[1]], data)?;
        Ok(self.push(y, Op::GlobalAvgPool(x), &[x]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_mode_keeps_unit_axis() {
        assert_eq!(pool_extent(1, 2, 2, 0, true), Some(1));
        assert_eq!(pool_extent(1, 2, 2, 0, false), None);
        assert_eq!(pool_extent(4, 2, 2, 0, true), Some(2));
        assert_eq!(pool_extent(5, 2, 2, 0, true), Some(3));
        assert_eq!(pool_extent(64, 3, 2, 1, false), Some(32));
    }
}
