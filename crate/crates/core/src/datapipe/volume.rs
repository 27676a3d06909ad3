//! In-memory volumes and images plus the raw `.rvol` / `.rimg` formats.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Anatomical meaning of a storage axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    H,
    W,
    D,
}

/// Row-major 3-D grid (last axis fastest) with the meaning of each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub extents: [usize; 3],
    pub axes: [Axis; 3],
    pub data: Vec<f32>,
}

impl Volume {
    /// A volume already in (H, W, D) order.
    pub fn new(extents: [usize; 3], data: Vec<f32>) -> Result<Self> {
        Self::with_axes(extents, [Axis::H, Axis::W, Axis::D], data)
    }

    pub fn with_axes(extents: [usize; 3], axes: [Axis; 3], data: Vec<f32>) -> Result<Self> {
        let n: usize = extents.iter().product();
        if n != data.len() {
            return Err(Error::Data(format!("volume extents {extents:?} need {n} voxels, got {}", data.len())));
        }
        let mut seen = [false; 3];
        for a in axes {
            seen[a as usize] = true;
        }
        if seen.contains(&false) {
            return Err(Error::Data(format!("axis order {axes:?} is not a permutation of H, W, D")));
        }
        Ok(Volume { extents, axes, data })
    }

    pub fn filled(extents: [usize; 3], value: f32) -> Self {
        Volume {
            extents,
            axes: [Axis::H, Axis::W, Axis::D],
            data: vec![value; extents.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.extents[1] + j) * self.extents[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    /// Reorder storage so that axes read (H, W, D).
    pub fn to_hwd(&self) -> Volume {
        let target = [Axis::H, Axis::W, Axis::D];
        if self.axes == target {
            return self.clone();
        }
        // perm[t] = source axis holding target axis t
        let perm: Vec<usize> = target
            .iter()
            .map(|t| self.axes.iter().position(|a| a == t).expect("validated permutation"))
            .collect();
        let t = Tensor::new(self.extents.to_vec(), self.data.clone())
            .expect("consistent")
            .permute(&perm)
            .expect("valid permutation");
        Volume {
            extents: [t.shape()[0], t.shape()[1], t.shape()[2]],
            axes: target,
            data: t.into_data(),
        }
    }

    /// `[1, 1, H, W, D]` tensor (volume must already be in H, W, D order).
    pub fn to_tensor(&self) -> Tensor {
        let [h, w, d] = self.extents;
        Tensor::new([1, 1, h, w, d], self.data.clone()).expect("consistent")
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Channel-first 2-D image `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub extents: [usize; 2],
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, extents: [usize; 2], data: Vec<f32>) -> Result<Self> {
        let n = channels * extents[0] * extents[1];
        if n != data.len() {
            return Err(Error::Data(format!(
                "image {channels}x{extents:?} needs {n} pixels, got {}",
                data.len()
            )));
        }
        Ok(Image { channels, extents, data })
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.extents[0] + i) * self.extents[1] + j]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.extents[0] * self.extents[1];
        &self.data[c * n..(c + 1) * n]
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let [h, w] = self.extents;
        Tensor::new([1, self.channels, h, w], self.data.clone()).expect("consistent")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHeader {
    extents: Vec<usize>,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<usize>,
}

fn write_raw(path: &Path, header: &RawHeader, data: &[f32]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let line = serde_json::to_string(header)?;
    let io = |e| Error::io(path, e);
    w.write_all(line.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    for &v in data {
        w.write_f32::<LittleEndian>(v).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_raw(path: &Path, rank: usize) -> Result<(RawHeader, Vec<f32>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: RawHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Data(format!("{}: bad raw header: {e}", path.display())))?;
    if header.dtype != "f32le" {
        return Err(Error::UnsupportedFormat(format!("raw dtype {:?}", header.dtype)));
    }
    if header.extents.len() != rank {
        return Err(Error::Data(format!(
            "{}: expected {rank} extents, got {:?}",
            path.display(),
            header.extents
        )));
    }
    let n = header.extents.iter().product::<usize>() * header.channels.unwrap_or(1);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < n * 4 {
        return Err(Error::Truncated { expected: n * 4, found: bytes.len() });
    }
    let mut data = vec![0f32; n];
    (&bytes[..n * 4]).read_f32_into::<LittleEndian>(&mut data).expect("length checked");
    Ok((header, data))
}

/// Write a volume in (H, W, D) order as `.rvol`.
pub fn write_rvol(path: &Path, v: &Volume) -> Result<()> {
    let v = v.to_hwd();
    let header = RawHeader { extents: v.extents.to_vec(), dtype: "f32le".into(), channels: None };
    write_raw(path, &header, &v.data)
}

pub fn read_rvol(path: &Path) -> Result<Volume> {
    let (h, data) = read_raw(path, 3)?;
    Volume::new([h.extents[0], h.extents[1], h.extents[2]], data)
}

pub fn write_rimg(path: &Path, img: &Image) -> Result<()> {
    let header = RawHeader {
        extents: img.extents.to_vec(),
        dtype: "f32le".into(),
        channels: (img.channels != 1).then_some(img.channels),
    };
    write_raw(path, &header, &img.data)
}

pub fn read_rimg(path: &Path) -> Result<Image> {
    let (h, data) = read_raw(path, 2)?;
    Image::new(h.channels.unwrap_or(1), [h.extents[0], h.extents[1]], data)
}
