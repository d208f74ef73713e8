//! `.mvt` binary tensor files.
//!
//! Layout: magic `MVT1`, one dtype byte (0 = f32, 1 = f64), one rank byte,
//! `rank` little-endian `u32` extents, then the row-major little-endian payload.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MVT_MAGIC: &[u8; 4] = b"MVT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn write_mvt_bytes(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::dim(format!("rank {} too large for .mvt", t.ndim())));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.ndim() + dtype.width() * t.numel());
    out.extend_from_slice(MVT_MAGIC);
    out.push(dtype.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::dim(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Decodes a `.mvt` byte buffer; `origin` names the source in error messages.
pub fn read_mvt_bytes(bytes: &[u8], origin: &Path) -> Result<(Tensor, Dtype)> {
    let corrupt = |reason: String| Error::CorruptPayload {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < 6 || &bytes[..4] != MVT_MAGIC {
        return Err(corrupt("bad magic or truncated header".into()));
    }
    let dtype = match bytes[4] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        c => return Err(corrupt(format!("unknown dtype code {c}"))),
    };
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(corrupt("truncated extents".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if shape.is_empty() || shape.contains(&0) {
        return Err(corrupt(format!("invalid shape {shape:?}")));
    }
    let n: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != n * dtype.width() {
        return Err(corrupt(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            payload.len(),
            n * dtype.width()
        )));
    }
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    Ok((Tensor::from_parts(shape, data), dtype))
}

pub fn write_mvt(path: impl AsRef<Path>, t: &Tensor, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_mvt_bytes(t, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mvt(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_mvt_bytes(&bytes, path).map(|(t, _)| t)
}
