//! Fixed-size preprocessing for volumes (cubic resample + centre pad) and
//! images (8-bit quantisation, RGB replication, bilinear resize).

use crate::datapipe::volume::{Image, Volume};
use crate::error::{Error, Result};

/// Catmull-Rom weights (a = -0.5) for the four taps around fractional offset `t`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Resample one axis of a row-major 3-D grid to `out` samples with scale `s`
/// (output index `i` reads source coordinate `(i + 0.5) / s - 0.5`, edges
/// clamped).
fn resample_axis(data: &[f64], ext: [usize; 3], axis: usize, out: usize, s: f64) -> (Vec<f64>, [usize; 3]) {
    let n = ext[axis];
    let mut oext = ext;
    oext[axis] = out;
    let taps: Vec<([usize; 4], [f64; 4])> = (0..out)
        .map(|i| {
            let x = (i as f64 + 0.5) / s - 0.5;
            let x0 = x.floor();
            let w = catmull_rom(x - x0);
            let idx = [-1i64, 0, 1, 2].map(|d| (x0 as i64 + d).clamp(0, n as i64 - 1) as usize);
            (idx, w)
        })
        .collect();
    let strides = [ext[1] * ext[2], ext[2], 1];
    let ostrides = [oext[1] * oext[2], oext[2], 1];
    let mut res = vec![0.0; oext.iter().product()];
    for a in 0..oext[0] {
        for b in 0..oext[1] {
            for c in 0..oext[2] {
                let o = [a, b, c];
                let (idx, w) = &taps[o[axis]];
                let mut base = 0;
                for d in 0..3 {
                    if d != axis {
                        base += o[d] * strides[d];
                    }
                }
                let mut acc = 0.0;
                for t in 0..4 {
                    acc += w[t] * data[base + idx[t] * strides[axis]];
                }
                res[a * ostrides[0] + b * ostrides[1] + c] = acc;
            }
        }
    }
    (res, oext)
}

/// Scale factor and content extents for fitting `ext` inside `target`.
pub fn fit_extents(ext: [usize; 3], target: [usize; 3]) -> (f64, [usize; 3]) {
    let s = (0..3).map(|a| target[a] as f64 / ext[a] as f64).fold(f64::INFINITY, f64::min);
    let content = [0, 1, 2].map(|a| ((ext[a] as f64 * s).round() as usize).clamp(1, target[a]));
    (s, content)
}

/// Map values linearly onto [0, 1]; a constant input becomes all zeros.
pub fn min_max_normalize(data: &mut [f64]) {
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    for v in data.iter_mut() {
        *v = if range > 0.0 { ((*v - lo) / range).clamp(0.0, 1.0) } else { 0.0 };
    }
}

/// Reorder to (H, W, D), resample uniformly to fit `target`, min-max
/// normalise the content and centre it in a zero-padded `target` grid.
pub fn preprocess_mri(raw: &Volume, target: [usize; 3]) -> Result<Volume> {
    if raw.extents.contains(&0) || target.contains(&0) {
        return Err(Error::Data(format!("cannot preprocess volume {:?} to {target:?}", raw.extents)));
    }
    if raw.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "raw MRI volume".into() });
    }
    let v = raw.to_hwd();
    let (s, content) = fit_extents(v.extents, target);
    let mut data: Vec<f64> = v.data.iter().map(|&x| x as f64).collect();
    let mut ext = v.extents;
    for axis in 0..3 {
        if ext[axis] != content[axis] || s != 1.0 {
            (data, ext) = resample_axis(&data, ext, axis, content[axis], s);
        }
    }
    min_max_normalize(&mut data);
    let before = [0, 1, 2].map(|a| (target[a] - content[a]) / 2);
    let mut out = Volume::filled(target, 0.0);
    for i in 0..content[0] {
        for j in 0..content[1] {
            let src = (i * content[1] + j) * content[2];
            let dst = out.index(i + before[0], j + before[1], before[2]);
            for k in 0..content[2] {
                out.data[dst + k] = data[src + k] as f32;
            }
        }
    }
    Ok(out)
}

/// Round-half-up quantisation of a [0, 1] value to 0..=255.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Bilinear resize of a single 8-bit plane (half-pixel centres, clamped
/// edges), rounding half up back to 8 bits.
pub fn resize_bilinear_u8(src: &[u8], ext: [usize; 2], out: [usize; 2]) -> Vec<u8> {
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let s = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let x = ((i as f64 + 0.5) * s - 0.5).clamp(0.0, (n_in - 1) as f64);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(n_in - 1);
                (x0, x1, x - x0 as f64)
            })
            .collect()
    };
    let rows = coords(ext[0], out[0]);
    let cols = coords(ext[1], out[1]);
    let at = |i: usize, j: usize| src[i * ext[1] + j] as f64;
    let mut res = Vec::with_capacity(out[0] * out[1]);
    for &(i0, i1, fy) in &rows {
        for &(j0, j1, fx) in &cols {
            let top = at(i0, j0) * (1.0 - fx) + at(i0, j1) * fx;
            let bot = at(i1, j0) * (1.0 - fx) + at(i1, j1) * fx;
            let v = top * (1.0 - fy) + bot * fy;
            res.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    res
}

/// Single-channel image to 8-bit intermediate values (min-max, round half up).
pub fn to_u8(raw: &Image) -> Result<Vec<u8>> {
    if raw.channels != 1 {
        return Err(Error::Data(format!("US preprocessing expects 1 channel, got {}", raw.channels)));
    }
    if raw.extents.contains(&0) {
        return Err(Error::Data(format!("cannot preprocess image {:?}", raw.extents)));
    }
    if raw.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "raw US image".into() });
    }
    let mut d: Vec<f64> = raw.data.iter().map(|&x| x as f64).collect();
    min_max_normalize(&mut d);
    Ok(d.into_iter().map(quantize_u8).collect())
}

/// Quantise to 8 bits, replicate to three channels, resize to `target` and
/// scale to [0, 1].
pub fn preprocess_us(raw: &Image, target: [usize; 2]) -> Result<Image> {
    if target.contains(&0) {
        return Err(Error::Data(format!("invalid US target extents {target:?}")));
    }
    let q = to_u8(raw)?;
    let plane = if raw.extents == target { q } else { resize_bilinear_u8(&q, raw.extents, target) };
    let scaled: Vec<f32> = plane.iter().map(|&b| b as f32 / 255.0).collect();
    let mut data = Vec::with_capacity(3 * scaled.len());
    for _ in 0..3 {
        data.extend_from_slice(&scaled);
    }
    Image::new(3, target, data)
}
