use rand::Rng;

use crate::error::{Error, Result};
use crate::ndcore::tape::{Op, Tape, Var};
use crate::ndcore::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
    Softmax,
}

fn zip_with<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

fn same_shape<T: Element>(tape: &Tape<'_, T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        let axis = sa.iter().zip(sb).position(|(x, y)| x != y).unwrap_or(0);
        return Err(Error::shape(op, axis, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Sum `g` over its leading axes down to `target` (a suffix of g's shape).
pub(crate) fn reduce_leading<T: Element>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    let inner: usize = target.iter().product();
    let mut out = Tensor::zeros(target.to_vec());
    for chunk in g.data().chunks(inner.max(1)) {
        for (o, &x) in out.data_mut().iter_mut().zip(chunk) {
            *o += x;
        }
    }
    out
}

fn std_normal_cdf<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn std_normal_pdf<T: Element>(x: T) -> T {
    let c = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    c * (-(x * x) * T::from_f64(0.5)).exp()
}

pub(crate) fn relu_backward<T: Element>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    zip_with(x, g, |x, g| if x > T::zero() { g } else { T::zero() })
}

pub(crate) fn gelu_backward<T: Element>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    zip_with(x, g, |x, g| g * (std_normal_cdf(x) + x * std_normal_pdf(x)))
}

pub(crate) fn sigmoid_backward<T: Element>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    zip_with(y, g, |y, g| g * y * (T::one() - y))
}

pub(crate) fn softmax_backward<T: Element>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().unwrap_or(&1);
    let mut out = Tensor::zeros(y.shape().to_vec());
    for ((yr, gr), or) in y
        .data()
        .chunks(n)
        .zip(g.data().chunks(n))
        .zip(out.data_mut().chunks_mut(n))
    {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    out
}

pub fn softmax_rows<T: Element>(x: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - m).exp();
            sum += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v = *v / sum;
        }
    }
    out
}

pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn gelu<T: Element>(x: T) -> T {
    x * std_normal_cdf(x)
}

impl<T: Element> Tape<'_, T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let y = zip_with(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let y = zip_with(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let y = zip_with(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    /// `a + b` where b's shape equals the trailing axes of a's shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(
                "add_broadcast",
                sa.len().saturating_sub(sb.len()),
                format!("{sb:?} is not a suffix of {sa:?}"),
            ));
        }
        let inner = sb.iter().product::<usize>().max(1);
        let bv = self.value(b).data();
        let mut y = self.value(a).clone();
        for chunk in y.data_mut().chunks_mut(inner) {
            for (o, &x) in chunk.iter_mut().zip(bv) {
                *o += x;
            }
        }
        Ok(self.push(y, Op::AddBcast(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).map(|x| x * s);
        self.push(y, Op::Scale(a, s), &[a])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.push(y, Op::Sum(a), &[a])
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Gelu => self.gelu(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Softmax => self.softmax(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(y, Op::Relu(x), &[x])
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(gelu);
        self.push(y, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = *v.shape().last().unwrap_or(&1);
        let y = Tensor::new(v.shape(), softmax_rows(v.data(), n)).expect("same shape");
        self.push(y, Op::Softmax(x), &[x])
    }

    /// Inverted dropout. Identity when `!train` or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p must be in [0, 1), got {p}")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let v = self.value(x);
        let mask: Vec<T> = (0..v.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit multiplicative mask (used for testing).
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let v = self.value(x);
        if mask.len() != v.len() {
            return Err(Error::invalid("dropout", "mask length mismatch"));
        }
        let y = Tensor::new(v.shape(), v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect())?;
        Ok(self.push(y, Op::Dropout { x, mask }, &[x]))
    }
}
