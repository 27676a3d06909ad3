//! Direct, unoptimised reference implementations used as test oracles.
//!
//! Nothing here shares code with the production kernels: convolution and
//! pooling are straight nested loops over output positions and window taps.

/// 3-D view of a `[B, C, s0, s1(, s2)]` tensor with 2-D inputs padded by a unit axis.
fn dims5(shape: &[usize]) -> [usize; 5] {
    let mut d = [1usize; 5];
    d[..shape.len()].copy_from_slice(shape);
    d
}

/// Direct convolution; cubic kernel `k`, uniform stride/padding, zero fill.
pub fn conv(x: &[f64], xs: &[usize], w: &[f64], ws: &[usize], bias: &[f64], stride: usize, pad: usize) -> (Vec<f64>, Vec<usize>) {
    let dims = xs.len() - 2;
    let [b, cin, i0, i1, i2] = dims5(xs);
    let cout = ws[0];
    let k = ws[2];
    let kk = [k, k, if dims == 3 { k } else { 1 }];
    let pp = [pad, pad, if dims == 3 { pad } else { 0 }];
    let ss = [stride, stride, if dims == 3 { stride } else { 1 }];
    let out = |i: usize, ax: usize| (i + 2 * pp[ax] - kk[ax]) / ss[ax] + 1;
    let (o0, o1, o2) = (out(i0, 0), out(i1, 1), out(i2, 2));
    let mut y = vec![0.0; b * cout * o0 * o1 * o2];
    for n in 0..b {
        for co in 0..cout {
            for u in 0..o0 {
                for v in 0..o1 {
                    for t in 0..o2 {
                        let mut acc = bias.get(co).copied().unwrap_or(0.0);
                        for ci in 0..cin {
                            for a in 0..kk[0] {
                                for bb in 0..kk[1] {
                                    for e in 0..kk[2] {
                                        let y0 = (u * ss[0] + a) as isize - pp[0] as isize;
                                        let y1 = (v * ss[1] + bb) as isize - pp[1] as isize;
                                        let y2 = (t * ss[2] + e) as isize - pp[2] as isize;
                                        if y0 < 0 || y1 < 0 || y2 < 0 || y0 as usize >= i0 || y1 as usize >= i1 || y2 as usize >= i2 {
                                            continue;
                                        }
                                        let xi = (((n * cin + ci) * i0 + y0 as usize) * i1 + y1 as usize) * i2 + y2 as usize;
                                        let wi = ((co * cin + ci) * kk[0] + a) * kk[1] * kk[2] + bb * kk[2] + e;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y[(((n * cout + co) * o0 + u) * o1 + v) * o2 + t] = acc;
                    }
                }
            }
        }
    }
    let mut shape = vec![b, cout, o0, o1];
    if dims == 3 {
        shape.push(o2);
    }
    (y, shape)
}

fn pool(x: &[f64], xs: &[usize], k: usize, stride: usize, pad: usize, reduce: impl Fn(&[f64]) -> f64) -> (Vec<f64>, Vec<usize>) {
    let dims = xs.len() - 2;
    let [b, c, i0, i1, i2] = dims5(xs);
    let kk = [k, k, if dims == 3 { k } else { 1 }];
    let pp = [pad, pad, if dims == 3 { pad } else { 0 }];
    let ss = [stride, stride, if dims == 3 { stride } else { 1 }];
    let out = |i: usize, ax: usize| (i + 2 * pp[ax] - kk[ax]) / ss[ax] + 1;
    let (o0, o1, o2) = (out(i0, 0), out(i1, 1), out(i2, 2));
    let mut y = Vec::with_capacity(b * c * o0 * o1 * o2);
    for plane in 0..b * c {
        for u in 0..o0 {
            for v in 0..o1 {
                for t in 0..o2 {
                    let mut window = Vec::new();
                    for a in 0..kk[0] {
                        for bb in 0..kk[1] {
                            for e in 0..kk[2] {
                                let y0 = (u * ss[0] + a) as isize - pp[0] as isize;
                                let y1 = (v * ss[1] + bb) as isize - pp[1] as isize;
                                let y2 = (t * ss[2] + e) as isize - pp[2] as isize;
                                if y0 < 0 || y1 < 0 || y2 < 0 || y0 as usize >= i0 || y1 as usize >= i1 || y2 as usize >= i2 {
                                    continue;
                                }
                                window.push(x[((plane * i0 + y0 as usize) * i1 + y1 as usize) * i2 + y2 as usize]);
                            }
                        }
                    }
                    y.push(reduce(&window));
                }
            }
        }
    }
    let mut shape = vec![b, c, o0, o1];
    if dims == 3 {
        shape.push(o2);
    }
    (y, shape)
}

pub fn maxpool(x: &[f64], xs: &[usize], k: usize, stride: usize, pad: usize) -> (Vec<f64>, Vec<usize>) {
    pool(x, xs, k, stride, pad, |w| w.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Floor-mode average pooling without padding (divisor `k^dims`).
pub fn avgpool(x: &[f64], xs: &[usize], k: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let taps = k.pow((xs.len() - 2) as u32) as f64;
    pool(x, xs, k, stride, 0, |w| w.iter().sum::<f64>() / taps)
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties ½.
pub fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// One bias-corrected Adam step on a scalar, written out from the update rule.
pub fn adam_scalar(w: f64, g: f64, m: f64, v: f64, t: u32, lr: f64, b1: f64, b2: f64, eps: f64) -> (f64, f64, f64) {
    let m1 = b1 * m + (1.0 - b1) * g;
    let v1 = b2 * v + (1.0 - b2) * g * g;
    let mhat = m1 / (1.0 - b1.powi(t as i32));
    let vhat = v1 / (1.0 - b2.powi(t as i32));
    (w - lr * mhat / (vhat.sqrt() + eps), m1, v1)
}

/// Benjamini–Hochberg by brute force: for each i, min over the step-up set.
pub fn bh_bruteforce(p: &[f64]) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter()
        .map(|&pi| {
            // rank of pi among all p (1-based, counting values <= pi)
            let mut best = f64::INFINITY;
            for &pj in p {
                if pj >= pi {
                    let rank = p.iter().filter(|&&x| x <= pj).count() as f64;
                    best = best.min(pj * m / rank);
                }
            }
            best.min(1.0)
        })
        .collect()
}
