//! Jet-style colour ramp, alpha blending and binary PGM/PPM output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcam::Heatmap;

/// Piecewise-linear jet ramp: `(position, [r, g, b])` control points,
/// linearly interpolated between neighbours.
pub const JET_STOPS: [(f32, [f32; 3]); 6] = [
    (0.0, [0.0, 0.0, 0.5]),
    (0.125, [0.0, 0.0, 1.0]),
    (0.375, [0.0, 1.0, 1.0]),
    (0.625, [1.0, 1.0, 0.0]),
    (0.875, [1.0, 0.0, 0.0]),
    (1.0, [0.5, 0.0, 0.0]),
];

/// Weight of the colour ramp in the overlay.
pub const OVERLAY_ALPHA: f32 = 0.4;

pub fn jet(h: f32) -> [f32; 3] {
    let h = if h.is_nan() { 0.0 } else { h.clamp(0.0, 1.0) };
    for w in JET_STOPS.windows(2) {
        let ((p0, c0), (p1, c1)) = (w[0], w[1]);
        if h <= p1 {
            let t = (h - p0) / (p1 - p0);
            return [0, 1, 2].map(|k| c0[k] + t * (c1[k] - c0[k]));
        }
    }
    JET_STOPS[JET_STOPS.len() - 1].1
}

/// `(1 - alpha) * src + alpha * jet(h)` per channel.
pub fn blend(src: f32, h: f32) -> [f32; 3] {
    jet(h).map(|c| (1.0 - OVERLAY_ALPHA) * src + OVERLAY_ALPHA * c)
}

fn to_u8(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved RGB bytes of the blended overlay.
pub fn overlay_rgb(src: &[f32], heat: &[f32]) -> Result<Vec<u8>> {
    if src.len() != heat.len() {
        return Err(Error::invalid("overlay", format!("source {} vs heatmap {} pixels", src.len(), heat.len())));
    }
    Ok(src.iter().zip(heat).flat_map(|(&s, &h)| blend(s, h).map(to_u8)).collect())
}

fn write_pnm(path: &Path, magic: &str, width: usize, height: usize, channels: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height * channels {
        return Err(Error::invalid("pnm", format!("{} bytes for {width}x{height}x{channels}", data.len())));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(data);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Binary greyscale (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_pnm(path, "P5", width, height, 1, data)
}

/// Binary RGB (P6).
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write_pnm(path, "P6", width, height, 3, rgb)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Read a P5/P6 file with maxval 255 (no comments).
pub fn read_pnm(path: &Path) -> Result<Pnm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated { expected: pos + 1, found: bytes.len() });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(Error::BadMagic { what: "PNM", found: fields[0].as_bytes().to_vec() }),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad PNM header field {s:?}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PNM maxval {maxval}")));
    }
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(Error::Truncated { expected: pos + n, found: bytes.len() });
    }
    Ok(Pnm { width, height, channels, data: bytes[pos..pos + n].to_vec() })
}

/// One emitted file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub sample_id: String,
    pub layer: String,
    pub class_index: usize,
    /// `source`, `overlay` or `side_by_side`.
    pub kind: String,
    pub depth: Option<usize>,
    pub path: String,
}

/// `n` evenly spaced slice centres of a depth-`d` volume.
pub fn representative_depths(d: usize, n: usize) -> Vec<usize> {
    let n = n.min(d);
    (0..n).map(|k| (2 * k + 1) * d / (2 * n)).collect()
}

fn stem(h: &Heatmap) -> String {
    let id = if h.sample_id.is_empty() { "sample" } else { &h.sample_id };
    format!("{}_{}_c{}", id, h.layer.replace('.', "_"), h.class_index)
}

/// Write the greyscale source and jet overlay for a heatmap. `source` is
/// the input intensity on the heatmap grid. 3-D maps are exported at the
/// given depths; 2-D maps additionally get a source | overlay composite.
pub fn render_overlay(h: &Heatmap, source: &[f32], out_dir: &Path, depths: &[usize]) -> Result<Vec<IndexEntry>> {
    if source.len() != h.values.len() {
        return Err(Error::invalid("render", format!("source {} vs heatmap {} values", source.len(), h.values.len())));
    }
    let entry = |kind: &str, depth: Option<usize>, file: String| IndexEntry {
        sample_id: h.sample_id.clone(),
        layer: h.layer.clone(),
        class_index: h.class_index,
        kind: kind.to_string(),
        depth,
        path: file,
    };
    let base = stem(h);
    let mut out = Vec::new();
    match h.extents.as_slice() {
        &[rows, cols, depth] => {
            for &d in depths {
                if d >= depth {
                    return Err(Error::invalid("render", format!("depth {d} outside 0..{depth}")));
                }
                let idx = |k: usize| (k / cols) * cols * depth + (k % cols) * depth + d;
                let src: Vec<f32> = (0..rows * cols).map(|k| source[idx(k)]).collect();
                let heat: Vec<f32> = (0..rows * cols).map(|k| h.values[idx(k)]).collect();
                let s = format!("{base}_d{d}_source.pgm");
                write_pgm(&out_dir.join(&s), cols, rows, &src.iter().map(|&v| to_u8(v)).collect::<Vec<_>>())?;
                out.push(entry("source", Some(d), s));
                let o = format!("{base}_d{d}_overlay.ppm");
                write_ppm(&out_dir.join(&o), cols, rows, &overlay_rgb(&src, &heat)?)?;
                out.push(entry("overlay", Some(d), o));
            }
        }
        &[rows, cols] => {
            let grey: Vec<u8> = source.iter().map(|&v| to_u8(v)).collect();
            let rgb = overlay_rgb(source, &h.values)?;
            let s = format!("{base}_source.pgm");
            write_pgm(&out_dir.join(&s), cols, rows, &grey)?;
            out.push(entry("source", None, s));
            let o = format!("{base}_overlay.ppm");
            write_ppm(&out_dir.join(&o), cols, rows, &rgb)?;
            out.push(entry("overlay", None, o));
            let mut both = Vec::with_capacity(rows * cols * 6);
            for r in 0..rows {
                for c in 0..cols {
                    both.extend_from_slice(&[grey[r * cols + c]; 3]);
                }
                both.extend_from_slice(&rgb[r * cols * 3..(r + 1) * cols * 3]);
            }
            let p = format!("{base}_side_by_side.ppm");
            write_ppm(&out_dir.join(&p), 2 * cols, rows, &both)?;
            out.push(entry("side_by_side", None, p));
        }
        other => return Err(Error::invalid("render", format!("unsupported heatmap extents {other:?}"))),
    }
    Ok(out)
}

/// Write `index.json` listing every emitted file.
pub fn write_index(out_dir: &Path, entries: &[IndexEntry]) -> Result<()> {
    crate::evalstats::report::write_json(&out_dir.join("index.json"), &entries)
}
