//! Minimal single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Supports int16, uint16 and float32 voxels in either byte order. The
//! returned array is shaped `[dim_n, .., dim_1]`, so the fastest-varying
//! file axis is the last tensor axis.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::tensor::Tensor;

pub const HEADER_SIZE: usize = 348;
const MAGIC_OFFSET: usize = 344;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_UINT16: i16 = 512;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NiftiError {
    #[error("nifti: file shorter than the {HEADER_SIZE}-byte header")]
    ShortHeader,
    #[error("nifti: sizeof_hdr is not 348 in either byte order")]
    HeaderSize,
    #[error("nifti: missing `n+1` magic")]
    BadMagic,
    #[error("nifti: unsupported datatype code {0}")]
    UnsupportedDtype(i16),
    #[error("nifti: bad dimensions: {0}")]
    BadDims(String),
    #[error("nifti: bad vox_offset {0}")]
    BadOffset(f32),
    #[error("nifti: payload truncated, need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiftiDtype {
    Int16,
    UInt16,
    Float32,
}

impl NiftiDtype {
    fn code(self) -> i16 {
        match self {
            NiftiDtype::Int16 => DT_INT16,
            NiftiDtype::UInt16 => DT_UINT16,
            NiftiDtype::Float32 => DT_FLOAT32,
        }
    }

    fn width(self) -> usize {
        match self {
            NiftiDtype::Int16 | NiftiDtype::UInt16 => 2,
            NiftiDtype::Float32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiftiVolume {
    /// Values after `scl_slope`/`scl_inter`, before any rescaling.
    pub physical: Tensor,
    /// `physical` min-max scaled to `[0, 1]`; all zeros if constant.
    pub data: Tensor,
    /// `pixdim[1..=rank]`, file axis order.
    pub spacing: Vec<f64>,
    pub dtype: NiftiDtype,
}

struct Reader<'a> {
    bytes: &'a [u8],
    big: bool,
}

impl Reader<'_> {
    fn raw<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[at..at + N].try_into().unwrap();
        if self.big {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.raw(at))
    }
    fn u16(&self, at: usize) -> u16 {
        u16::from_le_bytes(self.raw(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.raw(at))
    }
}

pub fn parse_nifti1(bytes: &[u8]) -> Result<NiftiVolume, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::ShortHeader);
    }
    let sizeof = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let big = match sizeof {
        348 => false,
        _ if sizeof.swap_bytes() == 348 => true,
        _ => return Err(NiftiError::HeaderSize),
    };
    if &bytes[MAGIC_OFFSET..MAGIC_OFFSET + 4] != b"n+1\0" {
        return Err(NiftiError::BadMagic);
    }
    let r = Reader { bytes, big };
    let rank = r.i16(40);
    if !(1..=7).contains(&rank) {
        return Err(NiftiError::BadDims(format!("rank {rank}")));
    }
    let rank = rank as usize;
    let mut dims = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for k in 1..=rank {
        let d = r.i16(40 + 2 * k);
        if d < 1 {
            return Err(NiftiError::BadDims(format!("dim[{k}] = {d}")));
        }
        dims.push(d as usize);
        count = count
            .checked_mul(d as usize)
            .ok_or_else(|| NiftiError::BadDims("overflow".into()))?;
    }
    let dtype = match r.i16(70) {
        DT_INT16 => NiftiDtype::Int16,
        DT_UINT16 => NiftiDtype::UInt16,
        DT_FLOAT32 => NiftiDtype::Float32,
        other => return Err(NiftiError::UnsupportedDtype(other)),
    };
    let spacing = (1..=rank).map(|k| r.f32(76 + 4 * k) as f64).collect();
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 && vox_offset.fract() == 0.0) {
        return Err(NiftiError::BadOffset(vox_offset));
    }
    let start = vox_offset as usize;
    let expected = count
        .checked_mul(dtype.width())
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| NiftiError::BadDims("overflow".into()))?;
    if bytes.len() < expected {
        return Err(NiftiError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    let (slope, inter) = if slope == 0.0 || !slope.is_finite() || !inter.is_finite() {
        (1.0, 0.0)
    } else {
        (slope, inter)
    };

    let width = dtype.width();
    let values: Vec<f64> = (0..count)
        .map(|i| {
            let at = start + i * width;
            let raw = match dtype {
                NiftiDtype::Int16 => r.i16(at) as f64,
                NiftiDtype::UInt16 => r.u16(at) as f64,
                NiftiDtype::Float32 => r.f32(at) as f64,
            };
            raw * slope + inter
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NiftiError::BadDims("non-finite voxel".into()));
    }
    dims.reverse();
    let physical = Tensor::new(&dims, values).map_err(|e| NiftiError::BadDims(e.to_string()))?;
    let lo = physical
        .data()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = physical.max();
    let data = if hi > lo {
        physical.map(|v| (v - lo) / (hi - lo))
    } else {
        physical.map(|_| 0.0)
    };
    Ok(NiftiVolume {
        physical,
        data,
        spacing,
        dtype,
    })
}

pub fn read_nifti1(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let bytes = fs::read(path)?;
    Ok(parse_nifti1(&bytes)?)
}

/// Little-endian NIfTI-1 bytes; stored value `v` satisfies `value = slope * v + inter`.
pub fn encode_nifti1(
    volume: &Tensor,
    dtype: NiftiDtype,
    slope: f32,
    inter: f32,
) -> Result<Vec<u8>> {
    let dims = volume.dims();
    if dims.len() > 7 || dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(crate::error::Error::shape(format!(
            "{dims:?} does not fit a NIfTI-1 header"
        )));
    }
    let mut h = vec![0u8; HEADER_SIZE + 4];
    let mut put = |at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);
    put(0, &348i32.to_le_bytes());
    put(40, &(dims.len() as i16).to_le_bytes());
    for (k, &d) in dims.iter().rev().enumerate() {
        put(42 + 2 * k, &(d as i16).to_le_bytes());
        put(80 + 4 * k, &1.0f32.to_le_bytes());
    }
    put(70, &dtype.code().to_le_bytes());
    put(72, &((dtype.width() * 8) as i16).to_le_bytes());
    put(76, &1.0f32.to_le_bytes());
    put(108, &((HEADER_SIZE + 4) as f32).to_le_bytes());
    put(112, &slope.to_le_bytes());
    put(116, &inter.to_le_bytes());
    put(MAGIC_OFFSET, b"n+1\0");
    let (s, i) = (if slope == 0.0 { 1.0 } else { slope as f64 }, inter as f64);
    for &v in volume.data() {
        let stored = (v - i) / s;
        match dtype {
            NiftiDtype::Int16 => h.extend((stored.round() as i16).to_le_bytes()),
            NiftiDtype::UInt16 => h.extend((stored.round() as u16).to_le_bytes()),
            NiftiDtype::Float32 => h.extend((stored as f32).to_le_bytes()),
        }
    }
    Ok(h)
}

pub fn write_nifti1(path: impl AsRef<Path>, volume: &Tensor, dtype: NiftiDtype) -> Result<()> {
    fs::write(path, encode_nifti1(volume, dtype, 1.0, 0.0)?)?;
    Ok(())
}
