//! Flat binary parameter container.
//!
//! Layout: magic `NDC1`, then for every entry in lexicographic name order:
//! name length (u64 LE), UTF-8 name, rank (u64 LE), extents (u64 LE each),
//! raw little-endian f32 data. Entries run to end of file.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::ndcore::params::ParamStore;
use crate::ndcore::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NDC1";

/// Named tensors in serialization order.
pub type Entries = Vec<(String, Tensor<f32>)>;

pub fn encode(entries: &[(&str, &Tensor<f32>)]) -> Vec<u8> {
    let mut sorted: Vec<_> = entries.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, t) in sorted {
        out.write_u64::<LittleEndian>(name.len() as u64).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u64::<LittleEndian>(t.rank() as u64).unwrap();
        for &e in t.shape() {
            out.write_u64::<LittleEndian>(e as u64).unwrap();
        }
        for &v in t.data() {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
    }
    out
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let avail = r.len();
    r.read_u64::<LittleEndian>()
        .map_err(|_| Error::Truncated { expected: 8, found: avail })
}

pub fn decode(bytes: &[u8]) -> Result<Entries> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            what: "parameter container",
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let mut r = &bytes[4..];
    let mut out = Vec::new();
    while !r.is_empty() {
        let len = read_u64(&mut r)? as usize;
        if r.len() < len {
            return Err(Error::Truncated { expected: len, found: r.len() });
        }
        let name = std::str::from_utf8(&r[..len])
            .map_err(|e| Error::Data(format!("parameter name is not UTF-8: {e}")))?
            .to_string();
        r = &r[len..];
        let rank = read_u64(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if r.len() < n * 4 {
            return Err(Error::Truncated { expected: n * 4, found: r.len() });
        }
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data).expect("length checked");
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn write_file(path: &Path, entries: &[(&str, &Tensor<f32>)]) -> Result<()> {
    let bytes = encode(entries);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Entries> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Entries of several stores, for one combined container.
pub fn store_entries<'a>(stores: &[&'a ParamStore<f32>]) -> Vec<(&'a str, &'a Tensor<f32>)> {
    stores
        .iter()
        .flat_map(|s| s.iter().map(|(_, p)| (p.name.as_str(), &p.tensor)))
        .collect()
}
