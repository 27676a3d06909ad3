//! Random geometric augmentation of preprocessed volumes and images.
//!
//! Each transform is split into a parameter draw and a deterministic
//! application so that individual transforms can be tested in isolation.

use rand::Rng;

use crate::datapipe::volume::{Image, Volume};

pub const ZOOM_RANGE: (f64, f64) = (1.1, 1.3);
pub const MAX_ROTATION_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MriAugment {
    pub flip_h: bool,
    pub flip_w: bool,
    /// Quarter turns in the H-W plane.
    pub quarter_turns: u8,
    pub zoom: Option<f64>,
}

impl MriAugment {
    pub const IDENTITY: MriAugment = MriAugment { flip_h: false, flip_w: false, quarter_turns: 0, zoom: None };

    /// Draw flips (p = 0.5 each), a rotation from {0, 90, 180, 270} degrees
    /// and, with probability `zoom_prob`, a zoom factor from [`ZOOM_RANGE`].
    /// Odd quarter turns would swap unequal H and W extents, so non-square
    /// volumes only draw 0 or 180 degrees.
    pub fn sample(rng: &mut impl Rng, square: bool, zoom_prob: f64) -> Self {
        let flip_h = rng.random_bool(0.5);
        let flip_w = rng.random_bool(0.5);
        let quarter_turns = if square { rng.random_range(0..4u8) } else { 2 * rng.random_range(0..2u8) };
        let zoom = (rng.random::<f64>() < zoom_prob).then(|| rng.random_range(ZOOM_RANGE.0..=ZOOM_RANGE.1));
        MriAugment { flip_h, flip_w, quarter_turns, zoom }
    }

    pub fn apply(&self, v: &Volume) -> Volume {
        let mut out = v.clone();
        if self.flip_h {
            out = flip_h(&out);
        }
        if self.flip_w {
            out = flip_w(&out);
        }
        for _ in 0..self.quarter_turns % 4 {
            out = rotate90(&out);
        }
        if let Some(z) = self.zoom {
            out = zoom(&out, z);
        }
        out
    }
}

pub fn augment_mri(v: &Volume, rng: &mut impl Rng, zoom_prob: f64) -> Volume {
    let square = v.extents[0] == v.extents[1];
    MriAugment::sample(rng, square, zoom_prob).apply(v)
}

pub fn flip_h(v: &Volume) -> Volume {
    let [h, w, d] = v.extents;
    let mut out = v.clone();
    for i in 0..h {
        for j in 0..w {
            let src = v.index(h - 1 - i, j, 0);
            let dst = v.index(i, j, 0);
            out.data[dst..dst + d].copy_from_slice(&v.data[src..src + d]);
        }
    }
    out
}

pub fn flip_w(v: &Volume) -> Volume {
    let [h, w, d] = v.extents;
    let mut out = v.clone();
    for i in 0..h {
        for j in 0..w {
            let src = v.index(i, w - 1 - j, 0);
            let dst = v.index(i, j, 0);
            out.data[dst..dst + d].copy_from_slice(&v.data[src..src + d]);
        }
    }
    out
}

/// Rotate 90 degrees in the H-W plane: `out[i][j] = in[j][W' - 1 - i]`.
/// Output extents are (W, H, D).
pub fn rotate90(v: &Volume) -> Volume {
    let [h, w, d] = v.extents;
    let mut out = Volume::filled([w, h, d], 0.0);
    out.axes = v.axes;
    for i in 0..w {
        for j in 0..h {
            let src = v.index(j, w - 1 - i, 0);
            let dst = out.index(i, j, 0);
            out.data[dst..dst + d].copy_from_slice(&v.data[src..src + d]);
        }
    }
    out
}

/// Magnify about the centre by `factor` on all three axes (trilinear,
/// edges clamped) and keep the central crop of the original extents.
pub fn zoom(v: &Volume, factor: f64) -> Volume {
    let e = v.extents;
    let coords: Vec<Vec<(usize, usize, f64)>> = (0..3)
        .map(|a| {
            let n = e[a];
            let c = n as f64 / 2.0;
            (0..n)
                .map(|i| {
                    let x = (c + (i as f64 + 0.5 - c) / factor - 0.5).clamp(0.0, (n - 1) as f64);
                    let x0 = x.floor() as usize;
                    ((x0), (x0 + 1).min(n - 1), x - x0 as f64)
                })
                .collect()
        })
        .collect();
    let mut out = v.clone();
    let g = |i, j, k| v.get(i, j, k) as f64;
    for (i, &(i0, i1, fi)) in coords[0].iter().enumerate() {
        for (j, &(j0, j1, fj)) in coords[1].iter().enumerate() {
            for (k, &(k0, k1, fk)) in coords[2].iter().enumerate() {
                let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                let c00 = lerp(g(i0, j0, k0), g(i0, j0, k1), fk);
                let c01 = lerp(g(i0, j1, k0), g(i0, j1, k1), fk);
                let c10 = lerp(g(i1, j0, k0), g(i1, j0, k1), fk);
                let c11 = lerp(g(i1, j1, k0), g(i1, j1, k1), fk);
                let val = lerp(lerp(c00, c01, fj), lerp(c10, c11, fj), fi);
                let idx = out.index(i, j, k);
                out.data[idx] = val as f32;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsAugment {
    pub flip: bool,
    pub angle_deg: f64,
}

impl UsAugment {
    pub const IDENTITY: UsAugment = UsAugment { flip: false, angle_deg: 0.0 };

    pub fn sample(rng: &mut impl Rng) -> Self {
        let flip = rng.random_bool(0.5);
        let angle_deg = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        UsAugment { flip, angle_deg }
    }

    pub fn apply(&self, img: &Image) -> Image {
        let img = if self.flip { flip_image(img) } else { img.clone() };
        if self.angle_deg == 0.0 {
            img
        } else {
            rotate_image(&img, self.angle_deg)
        }
    }
}

pub fn augment_us(img: &Image, rng: &mut impl Rng) -> Image {
    UsAugment::sample(rng).apply(img)
}

/// Mirror left-right.
pub fn flip_image(img: &Image) -> Image {
    let [h, w] = img.extents;
    let mut out = img.clone();
    for c in 0..img.channels {
        for i in 0..h {
            let row = (c * h + i) * w;
            out.data[row..row + w].reverse();
        }
    }
    out
}

/// Rotate about the image centre by `deg` degrees (bilinear, zero outside).
pub fn rotate_image(img: &Image, deg: f64) -> Image {
    let [h, w] = img.extents;
    let (sin, cos) = deg.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut out = Image { channels: img.channels, extents: img.extents, data: vec![0.0; img.data.len()] };
    for i in 0..h {
        for j in 0..w {
            // inverse map of the output pixel centre
            let (y, x) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
            let sy = cos * y - sin * x + cy - 0.5;
            let sx = sin * y + cos * x + cx - 0.5;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            for c in 0..img.channels {
                let at = |yy: f64, xx: f64| -> f64 {
                    if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                        0.0
                    } else {
                        img.get(c, yy as usize, xx as usize) as f64
                    }
                };
                let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x0 + 1.0) * (1.0 - fy) * fx
                    + at(y0 + 1.0, x0) * fy * (1.0 - fx)
                    + at(y0 + 1.0, x0 + 1.0) * fy * fx;
                out.data[(c * h + i) * w + j] = v as f32;
            }
        }
    }
    out
}
