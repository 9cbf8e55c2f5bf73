//! Binary tensor files: magic `UHND`, format version (u32 LE), dtype code (u8:
//! 0 = f32, 1 = f64), ndim (u32 LE), dims (u32 LE each), then the row-major
//! payload in little-endian order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UHND";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
}

pub fn encode(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut buf = Vec::with_capacity(13 + 4 * t.ndim() + 8 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(dtype as u8);
    buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|v| buf.extend_from_slice(&(*v as f32).to_le_bytes())),
        DType::F64 => t
            .data()
            .iter()
            .for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
    }
    buf
}

/// Decodes a tensor file; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<(Tensor, DType)> {
    let mut r = bytes;
    let err = |m: &str| Error::format(origin, m);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| err("truncated header"))?;
    if &magic != MAGIC {
        return Err(err("bad magic, not a UHND tensor file"));
    }
    let version = read_u32(&mut r).ok_or_else(|| err("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(err(&format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mut code = [0u8; 1];
    r.read_exact(&mut code)
        .map_err(|_| err("truncated header"))?;
    let dtype =
        DType::from_code(code[0]).ok_or_else(|| err(&format!("unknown dtype code {}", code[0])))?;
    let ndim = read_u32(&mut r).ok_or_else(|| err("truncated header"))? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(&mut r).ok_or_else(|| err("truncated dims"))? as usize);
    }
    let n: usize = shape.iter().product();
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    if r.len() != n * width {
        return Err(err(&format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            r.len(),
            n * width
        )));
    }
    let data = match dtype {
        DType::F32 => r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        DType::F64 => r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let t = Tensor::new(shape, data).map_err(|e| err(&e.to_string()))?;
    Ok((t, dtype))
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

pub fn save(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t, dtype))
        .map_err(|e| Error::io(path, e))
}

/// Writes in float64, the precision that round-trips exactly.
pub fn save_f64(path: &Path, t: &Tensor) -> Result<()> {
    save(path, t, DType::F64)
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path).map(|(t, _)| t)
}
