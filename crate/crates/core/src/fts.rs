//! `FTS1` tensor container.
//!
//! Layout: magic `FTS1`, `u8` dtype tag (0 = f64 real, 1 = f64 complex),
//! `u8` rank, `rank` little-endian `u32` extents, then the little-endian
//! payload (complex values as interleaved `re, im`).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Tensor};

pub const MAGIC: &[u8; 4] = b"FTS1";
const TAG_REAL: u8 = 0;
const TAG_COMPLEX: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum FtsTensor {
    Real(Tensor),
    Complex(ComplexTensor),
}

fn header(tag: u8, dims: &[usize]) -> Result<Vec<u8>> {
    let rank = u8::try_from(dims.len())
        .map_err(|_| Error::Format(format!("rank {} too large", dims.len())))?;
    let mut out = Vec::with_capacity(6 + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    out.push(tag);
    out.push(rank);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_real(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = header(TAG_REAL, t.dims())?;
    out.extend_from_slice(&t.to_le_bytes());
    Ok(out)
}

pub fn encode_complex(t: &ComplexTensor) -> Result<Vec<u8>> {
    let mut out = header(TAG_COMPLEX, t.dims())?;
    for z in t.data() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

/// Decodes one tensor from the front of `bytes`, returning it and the bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(FtsTensor, usize)> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing FTS1 magic".into()));
    }
    let tag = bytes[4];
    let rank = bytes[5] as usize;
    let mut at = 6;
    if bytes.len() < at + 4 * rank {
        return Err(Error::Format("truncated FTS1 extents".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[at + 4 * i..at + 4 * i + 4].try_into().unwrap()) as usize)
        .collect();
    at += 4 * rank;
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("FTS1 extents overflow".into()))?;
    let width = match tag {
        TAG_REAL => 8,
        TAG_COMPLEX => 16,
        other => return Err(Error::Format(format!("unknown FTS1 dtype tag {other}"))),
    };
    let payload = numel
        .checked_mul(width)
        .filter(|&p| bytes.len() - at >= p)
        .ok_or_else(|| Error::Format("truncated FTS1 payload".into()))?;
    let body = &bytes[at..at + payload];
    let f64s = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let tensor = if tag == TAG_REAL {
        FtsTensor::Real(Tensor::new(&dims, f64s.collect())?)
    } else {
        let flat: Vec<f64> = f64s.collect();
        let data = flat
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        FtsTensor::Complex(ComplexTensor::new(&dims, data)?)
    };
    Ok((tensor, at + payload))
}

pub fn decode(bytes: &[u8]) -> Result<FtsTensor> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after FTS1 tensor",
            bytes.len() - used
        )));
    }
    Ok(t)
}

pub fn write_real(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_real(t)?)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<FtsTensor> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn read_real(path: impl AsRef<Path>) -> Result<Tensor> {
    match read(path)? {
        FtsTensor::Real(t) => Ok(t),
        FtsTensor::Complex(_) => Err(Error::Format("expected a real FTS1 tensor".into())),
    }
}
