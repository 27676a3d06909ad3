use crate::error::{Error, Result};
use crate::ndcore::tape::{Op, Tape, Var};
use crate::ndcore::tensor::{Element, Tensor};

/// Gradients of `y = x W^T + b` for x `[M, K]` (leading axes flattened), W `[N, K]`.
pub(crate) fn linear_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let (n, k) = (w.shape()[0], w.shape()[1]);
    let m = x.len() / k;
    let gx = need_x.then(|| {
        let mut gx = Tensor::zeros(x.shape().to_vec());
        T::gemm(m, n, k, T::one(), g.data(), n as isize, 1, w.data(), k as isize, 1, T::zero(), gx.data_mut(), k as isize, 1);
        gx
    });
    let gw = need_w.then(|| {
        let mut gw = Tensor::zeros(w.shape().to_vec());
        T::gemm(n, m, k, T::one(), g.data(), 1, n as isize, x.data(), k as isize, 1, T::zero(), gw.data_mut(), k as isize, 1);
        gw
    });
    let mut gb = Tensor::zeros([n]);
    for row in g.data().chunks(n) {
        for (o, &v) in gb.data_mut().iter_mut().zip(row) {
            *o += v;
        }
    }
    (gx, gw, gb)
}

struct BmmDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_shared: bool,
}

fn bmm_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<BmmDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("bmm", "operands need rank >= 2"));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (bk, n) = if trans_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if bk != k {
        return Err(Error::shape("bmm", a.len() - 1, format!("inner extents {k} vs {bk}")));
    }
    let batch: usize = a[..a.len() - 2].iter().product();
    let b_shared = b.len() == 2;
    if !b_shared && b[..b.len() - 2] != a[..a.len() - 2] {
        return Err(Error::shape("bmm", 0, format!("batch extents {a:?} vs {b:?}")));
    }
    Ok(BmmDims { batch, m, k, n, b_shared })
}

pub(crate) fn bmm_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    trans_b: bool,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let BmmDims { batch, m, k, n, b_shared } = bmm_dims(a.shape(), b.shape(), trans_b).expect("checked in forward");
    let bsz = k * n;
    let (rsb, csb) = if trans_b { (1isize, k as isize) } else { (n as isize, 1isize) };
    let ga = need_a.then(|| {
        let mut ga = Tensor::zeros(a.shape().to_vec());
        for i in 0..batch {
            let bo = if b_shared { 0 } else { i * bsz };
            // dA = dC * B^T ; B^T has row stride csb, col stride rsb
            T::gemm(
                m, n, k, T::one(),
                &g.data()[i * m * n..(i + 1) * m * n], n as isize, 1,
                &b.data()[bo..bo + bsz], csb, rsb,
                T::zero(),
                &mut ga.data_mut()[i * m * k..(i + 1) * m * k], k as isize, 1,
            );
        }
        ga
    });
    let gb = need_b.then(|| {
        let mut gb = Tensor::zeros(b.shape().to_vec());
        for i in 0..batch {
            let bo = if b_shared { 0 } else { i * bsz };
            let beta = if b_shared && i > 0 { T::one() } else { T::zero() };
            let ad = &a.data()[i * m * k..(i + 1) * m * k];
            let gd = &g.data()[i * m * n..(i + 1) * m * n];
            let out = &mut gb.data_mut()[bo..bo + bsz];
            if trans_b {
                // dB [n, k] = dC^T * A
                T::gemm(n, m, k, T::one(), gd, 1, n as isize, ad, k as isize, 1, beta, out, k as isize, 1);
            } else {
                // dB [k, n] = A^T * dC
                T::gemm(k, m, n, T::one(), ad, 1, k as isize, gd, n as isize, 1, beta, out, n as isize, 1);
            }
        }
        gb
    });
    (ga, gb)
}

impl<T: Element> Tape<'_, T> {
    /// Affine map over the last axis: `y = x W^T + b`, W shaped `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 {
            return Err(Error::invalid("linear", "weight must be [out, in]"));
        }
        let (n, k) = (wv.shape()[0], wv.shape()[1]);
        let last = xv.rank().checked_sub(1).ok_or_else(|| Error::invalid("linear", "scalar input"))?;
        if xv.shape()[last] != k {
            return Err(Error::shape("linear", last, format!("input dim {} vs weight in-dim {k}", xv.shape()[last])));
        }
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(Error::shape("linear", 0, format!("bias {:?} vs out-dim {n}", self.shape(b))));
            }
        }
        let m = xv.len() / k;
        let mut out_shape = xv.shape().to_vec();
        out_shape[last] = n;
        let mut y = Tensor::zeros(out_shape);
        T::gemm(m, k, n, T::one(), xv.data(), k as isize, 1, wv.data(), 1, k as isize, T::zero(), y.data_mut(), n as isize, 1);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.data_mut().chunks_mut(n) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched matrix product over leading axes; `b` may be a shared 2-D matrix.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let BmmDims { batch, m, k, n, b_shared } = bmm_dims(av.shape(), bv.shape(), trans_b)?;
        let mut out_shape = av.shape().to_vec();
        let r = out_shape.len();
        out_shape[r - 1] = n;
        let mut y = Tensor::zeros(out_shape);
        let bsz = k * n;
        let (rsb, csb) = if trans_b { (1isize, k as isize) } else { (n as isize, 1isize) };
        for i in 0..batch {
            let bo = if b_shared { 0 } else { i * bsz };
            T::gemm(
                m, k, n, T::one(),
                &av.data()[i * m * k..(i + 1) * m * k], k as isize, 1,
                &bv.data()[bo..bo + bsz], rsb, csb,
                T::zero(),
                &mut y.data_mut()[i * m * n..(i + 1) * m * n], n as isize, 1,
            );
        }
        Ok(self.push(y, Op::Bmm { a, b, trans_b }, &[a, b]))
    }
}
