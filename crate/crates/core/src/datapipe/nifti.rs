//! Single-file NIfTI-1 (`.nii`) volumes.
//!
//! Storage order is x fastest, then y, then z. Volumes map y to H, x to W
//! and z to D, so a file read yields a `[z, y, x]` grid tagged (D, H, W).

use std::path::Path;

use crate::datapipe::volume::{Axis, Volume};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag of single-file NIfTI.
pub const MIN_FILE_SIZE: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriteOptions {
    pub datatype: i16,
    pub big_endian: bool,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            datatype: DT_FLOAT32,
            big_endian: false,
            scl_slope: 0.0,
            scl_inter: 0.0,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    big: bool,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[off..off + N]);
        if self.big {
            a.reverse();
        }
        a
    }
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.arr(off))
    }
    fn i32(&self, off: usize) -> i32 {
        i32::from_le_bytes(self.arr(off))
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.arr(off))
    }
    fn f64(&self, off: usize) -> f64 {
        f64::from_le_bytes(self.arr(off))
    }
}

fn bytes_per_voxel(datatype: i16) -> Result<usize> {
    match datatype {
        DT_UINT8 => Ok(1),
        DT_INT16 => Ok(2),
        DT_FLOAT32 => Ok(4),
        DT_FLOAT64 => Ok(8),
        other => Err(Error::UnsupportedDatatype(other)),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < MIN_FILE_SIZE {
        return Err(Error::Truncated { expected: MIN_FILE_SIZE, found: bytes.len() });
    }
    let magic = &bytes[344..348];
    if magic == b"ni1\0" {
        return Err(Error::UnsupportedFormat("detached-header NIfTI (ni1) is not supported".into()));
    }
    if magic != b"n+1\0" {
        return Err(Error::BadMagic { what: "NIfTI-1 header", found: magic.to_vec() });
    }
    // Byte order: dim[0] must lie in 1..=7 when read in the file's order.
    let le = Reader { bytes, big: false };
    let dim0 = le.i16(40);
    let r = Reader { bytes, big: !(1..=7).contains(&dim0) };
    let sizeof_hdr = r.i32(0);
    if sizeof_hdr as usize != HEADER_SIZE {
        return Err(Error::Data(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Data(format!("invalid dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 7];
    for (i, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = r.i16(42 + 2 * i);
        if v < 1 {
            return Err(Error::Data(format!("non-positive extent dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    if dims[3..].iter().any(|&d| d != 1) {
        return Err(Error::UnsupportedFormat(format!("only single 3-D volumes are supported, dims {dims:?}")));
    }
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let datatype = r.i16(70);
    let bpv = bytes_per_voxel(datatype)?;
    let vox_offset = r.f32(108);
    if !(vox_offset >= MIN_FILE_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::Data(format!("invalid vox_offset {vox_offset}")));
    }
    let off = vox_offset as usize;
    let n = nx * ny * nz;
    let need = off + n * bpv;
    if bytes.len() < need {
        return Err(Error::Truncated { expected: need, found: bytes.len() });
    }
    let slope = r.f32(112);
    let inter = r.f32(116);
    let scale = slope != 0.0 && slope.is_finite();
    let data = (0..n)
        .map(|i| {
            let p = off + i * bpv;
            let raw = match datatype {
                DT_UINT8 => bytes[p] as f64,
                DT_INT16 => r.i16(p) as f64,
                DT_FLOAT32 => r.f32(p) as f64,
                _ => r.f64(p),
            };
            if scale {
                (raw * slope as f64 + inter as f64) as f32
            } else {
                raw as f32
            }
        })
        .collect();
    Volume::with_axes([nz, ny, nx], [Axis::D, Axis::H, Axis::W], data)
}

pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn encode(v: &Volume, opt: &WriteOptions) -> Result<Vec<u8>> {
    let bpv = bytes_per_voxel(opt.datatype)?;
    let hwd = v.to_hwd();
    let [h, w, d] = hwd.extents;
    for e in [h, w, d] {
        if e == 0 || e > i16::MAX as usize {
            return Err(Error::invalid("write_nifti", format!("extent {e} not representable")));
        }
    }
    let mut out = vec![0u8; MIN_FILE_SIZE + h * w * d * bpv];
    let big = opt.big_endian;
    let mut put = |off: usize, le: &[u8]| {
        let dst = &mut out[off..off + le.len()];
        dst.copy_from_slice(le);
        if big {
            dst.reverse();
        }
    };
    put(0, &(HEADER_SIZE as i32).to_le_bytes());
    put(40, &3i16.to_le_bytes());
    for (i, e) in [w, h, d, 1, 1, 1, 1].iter().enumerate() {
        put(42 + 2 * i, &(*e as i16).to_le_bytes());
    }
    put(70, &opt.datatype.to_le_bytes());
    put(72, &((bpv * 8) as i16).to_le_bytes());
    for i in 0..8 {
        put(76 + 4 * i, &1f32.to_le_bytes());
    }
    put(108, &(MIN_FILE_SIZE as f32).to_le_bytes());
    put(112, &opt.scl_slope.to_le_bytes());
    put(116, &opt.scl_inter.to_le_bytes());
    out[344..348].copy_from_slice(b"n+1\0");

    // Invert the intensity scaling before integer quantisation.
    let (slope, inter) = if opt.scl_slope != 0.0 { (opt.scl_slope as f64, opt.scl_inter as f64) } else { (1.0, 0.0) };
    let mut p = MIN_FILE_SIZE;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let v = hwd.get(y, x, z);
                let stored = (v as f64 - inter) / slope;
                let le: Vec<u8> = match opt.datatype {
                    DT_UINT8 => vec![stored.round().clamp(0.0, 255.0) as u8],
                    DT_INT16 => (stored.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes().to_vec(),
                    DT_FLOAT32 => (if opt.scl_slope != 0.0 { stored as f32 } else { v }).to_le_bytes().to_vec(),
                    _ => stored.to_le_bytes().to_vec(),
                };
                let dst = &mut out[p..p + le.len()];
                dst.copy_from_slice(&le);
                if big {
                    dst.reverse();
                }
                p += le.len();
            }
        }
    }
    Ok(out)
}

pub fn write_nifti(path: &Path, v: &Volume, opt: &WriteOptions) -> Result<()> {
    let bytes = encode(v, opt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
