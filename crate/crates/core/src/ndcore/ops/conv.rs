//! Convolution over 2 or 3 spatial axes via im2col + GEMM.
//!
//! 2-D inputs are handled as 3-D inputs with a trailing unit axis so that a
//! single kernel path serves both.

use crate::error::{Error, Result};
use crate::ndcore::tape::{Op, Tape, Var};
use crate::ndcore::tensor::{Element, Tensor};

/// Kernel/stride/padding for up to three spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub dims: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Cubic kernel with the same stride and padding on every spatial axis.
    pub fn cubic(dims: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let mut g = ConvGeom {
            dims,
            kernel: [1; 3],
            stride: [1; 3],
            pad: [0; 3],
        };
        for ax in 0..dims.min(3) {
            g.kernel[ax] = kernel;
            g.stride[ax] = stride;
            g.pad[ax] = pad;
        }
        g
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }
}

/// `floor((ext + 2 pad - k) / stride) + 1`, or `None` when non-positive.
pub fn conv_out_extent(ext: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = ext + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

pub(crate) struct Plan {
    pub batch: usize,
    pub cin: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub geom: ConvGeom,
}

impl Plan {
    fn in_positions(&self) -> usize {
        self.input.iter().product()
    }

    fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    fn col_rows(&self) -> usize {
        self.cin * self.geom.kernel.iter().product::<usize>()
    }
}

/// Split `[B, C, s0, s1(, s2)]` into batch, channels, and padded-to-3 spatial extents.
pub(crate) fn spatial_layout(shape: &[usize], dims: usize, op: &'static str) -> Result<(usize, usize, [usize; 3])> {
    if dims != 2 && dims != 3 {
        return Err(Error::invalid(op, format!("dims must be 2 or 3, got {dims}")));
    }
    if shape.len() != dims + 2 {
        return Err(Error::invalid(
            op,
            format!("expected rank {} input [B, C, spatial..], got {shape:?}", dims + 2),
        ));
    }
    let mut sp = [1usize; 3];
    sp[..dims].copy_from_slice(&shape[2..]);
    Ok((shape[0], shape[1], sp))
}

fn plan(x: &[usize], w: &[usize], geom: &ConvGeom) -> Result<(Plan, usize)> {
    let dims = geom.dims;
    let (batch, cin, input) = spatial_layout(x, dims, "conv")?;
    if w.len() != dims + 2 {
        return Err(Error::invalid("conv", format!("weight rank {} for {dims}-d conv", w.len())));
    }
    let cout = w[0];
    if w[1] != cin {
        return Err(Error::shape("conv", 1, format!("input has {cin} channels, weight expects {}", w[1])));
    }
    for ax in 0..dims {
        if w[2 + ax] != geom.kernel[ax] {
            return Err(Error::shape("conv", 2 + ax, "weight extent disagrees with kernel size"));
        }
    }
    if geom.stride.iter().any(|&s| s == 0) {
        return Err(Error::invalid("conv", "stride must be >= 1"));
    }
    let mut output = [1usize; 3];
    for ax in 0..3 {
        output[ax] = conv_out_extent(input[ax], geom.kernel[ax], geom.stride[ax], geom.pad[ax]).ok_or_else(|| {
            Error::shape(
                "conv",
                2 + ax,
                format!("kernel {} exceeds padded extent {}", geom.kernel[ax], input[ax] + 2 * geom.pad[ax]),
            )
        })?;
    }
    Ok((
        Plan {
            batch,
            cin,
            input,
            output,
            geom: *geom,
        },
        cout,
    ))
}

/// Unfold one batch item `[C, s0, s1, s2]` into `[C*k0*k1*k2, P]`.
pub(crate) fn im2col<T: Element>(x: &[T], p: &Plan, cols: &mut [T]) {
    let [k0, k1, k2] = p.geom.kernel;
    let [s0, s1, s2] = p.geom.stride;
    let [p0, p1, p2] = p.geom.pad;
    let [i0, i1, i2] = p.input;
    let [o0, o1, o2] = p.output;
    let npos = o0 * o1 * o2;
    let mut row = 0;
    for c in 0..p.cin {
        let xc = &x[c * i0 * i1 * i2..(c + 1) * i0 * i1 * i2];
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let dst = &mut cols[row * npos..(row + 1) * npos];
                    let mut q = 0;
                    for u in 0..o0 {
                        let y0 = (u * s0 + a) as isize - p0 as isize;
                        for v in 0..o1 {
                            let y1 = (v * s1 + b) as isize - p1 as isize;
                            let inside01 = y0 >= 0 && (y0 as usize) < i0 && y1 >= 0 && (y1 as usize) < i1;
                            let base = if inside01 { (y0 as usize * i1 + y1 as usize) * i2 } else { 0 };
                            for w in 0..o2 {
                                let y2 = (w * s2 + e) as isize - p2 as isize;
                                dst[q] = if inside01 && y2 >= 0 && (y2 as usize) < i2 {
                                    xc[base + y2 as usize]
                                } else {
                                    T::zero()
                                };
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[C, s0, s1, s2]`.
pub(crate) fn col2im<T: Element>(cols: &[T], p: &Plan, dx: &mut [T]) {
    let [k0, k1, k2] = p.geom.kernel;
    let [s0, s1, s2] = p.geom.stride;
    let [p0, p1, p2] = p.geom.pad;
    let [i0, i1, i2] = p.input;
    let [o0, o1, o2] = p.output;
    let npos = o0 * o1 * o2;
    let mut row = 0;
    for c in 0..p.cin {
        let xc = &mut dx[c * i0 * i1 * i2..(c + 1) * i0 * i1 * i2];
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let src = &cols[row * npos..(row + 1) * npos];
                    let mut q = 0;
                    for u in 0..o0 {
                        let y0 = (u * s0 + a) as isize - p0 as isize;
                        for v in 0..o1 {
                            let y1 = (v * s1 + b) as isize - p1 as isize;
                            let inside01 = y0 >= 0 && (y0 as usize) < i0 && y1 >= 0 && (y1 as usize) < i1;
                            if !inside01 {
                                q += o2;
                                continue;
                            }
                            let base = (y0 as usize * i1 + y1 as usize) * i2;
                            for w in 0..o2 {
                                let y2 = (w * s2 + e) as isize - p2 as isize;
                                if y2 >= 0 && (y2 as usize) < i2 {
                                    xc[base + y2 as usize] += src[q];
                                }
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let (p, cout) = plan(x.shape(), w.shape(), geom)?;
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::shape("conv", 0, format!("bias {:?} vs {cout} filters", b.shape())));
        }
    }
    let (npos, nin, rows) = (p.out_positions(), p.in_positions(), p.col_rows());
    let mut out_shape = vec![p.batch, cout];
    out_shape.extend_from_slice(&p.output[..geom.dims]);
    let mut y = Tensor::zeros(out_shape);
    let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * npos] };
    for bi in 0..p.batch {
        let xb = &x.data()[bi * p.cin * nin..(bi + 1) * p.cin * nin];
        let src: &[T] = if geom.is_pointwise() {
            xb
        } else {
            im2col(xb, &p, &mut cols);
            &cols
        };
        let yb = &mut y.data_mut()[bi * cout * npos..(bi + 1) * cout * npos];
        T::gemm(cout, rows, npos, T::one(), w.data(), rows as isize, 1, src, npos as isize, 1, T::zero(), yb, npos as isize, 1);
        if let Some(b) = b {
            for (row, &bv) in yb.chunks_mut(npos).zip(b.data()) {
                for v in row {
                    *v += bv;
                }
            }
        }
    }
    Ok(y)
}

pub(crate) fn conv_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    geom: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let (p, cout) = plan(x.shape(), w.shape(), geom).expect("checked in forward");
    let (npos, nin, rows) = (p.out_positions(), p.in_positions(), p.col_rows());
    let pointwise = geom.is_pointwise();
    let mut gx = need_x.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape().to_vec()));
    let mut gb = Tensor::zeros([cout]);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); rows * npos] };
    for bi in 0..p.batch {
        let gy = &g.data()[bi * cout * npos..(bi + 1) * cout * npos];
        for (acc, row) in gb.data_mut().iter_mut().zip(gy.chunks(npos)) {
            *acc += row.iter().copied().sum::<T>();
        }
        if let Some(gw) = gw.as_mut() {
            let xb = &x.data()[bi * p.cin * nin..(bi + 1) * p.cin * nin];
            let src: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, &p, &mut cols);
                &cols
            };
            // dW += dY * cols^T
            T::gemm(cout, npos, rows, T::one(), gy, npos as isize, 1, src, 1, npos as isize, T::one(), gw.data_mut(), rows as isize, 1);
        }
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx.data_mut()[bi * p.cin * nin..(bi + 1) * p.cin * nin];
            if pointwise {
                T::gemm(rows, cout, npos, T::one(), w.data(), 1, rows as isize, gy, npos as isize, 1, T::zero(), gxb, npos as isize, 1);
            } else {
                T::gemm(rows, cout, npos, T::one(), w.data(), 1, rows as isize, gy, npos as isize, 1, T::zero(), &mut cols, npos as isize, 1);
                col2im(&cols, &p, gxb);
            }
        }
    }
    (gx, gw, gb)
}

impl<T: Element> Tape<'_, T> {
    /// 2-D or 3-D convolution. Input `[B, C_in, spatial..]`, weight
    /// `[C_out, C_in, k..]`, optional bias `[C_out]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Conv { x, w, b, geom }, &inputs))
    }
}
