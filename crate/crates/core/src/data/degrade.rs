//! Degradations that turn clean phantoms into downstream training pairs.

use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Noise levels evaluated for denoising.
pub const NOISE_GRID: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.25];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub task: TaskKind,
    pub factor: usize,
    pub sigma: f64,
}

impl DegradationSpec {
    pub fn new(task: TaskKind, sigma: f64) -> Self {
        DegradationSpec {
            task,
            factor: task.scale(),
            sigma,
        }
    }

    /// `(input, target)` for `task` given a clean `[C, H, W]` image.
    pub fn apply(&self, clean: &Tensor, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
        match self.task {
            TaskKind::Denoise => Ok((add_gaussian_noise(clean, self.sigma, rng)?, clean.clone())),
            TaskKind::Segment => Err(Error::config("segmentation pairs come from phantom labels")),
            _ => Ok((degrade_sr(clean, self.factor)?, clean.clone())),
        }
    }
}

fn planes(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.dims() {
        &[h, w] => Ok((1, h, w)),
        &[c, h, w] => Ok((c, h, w)),
        d => Err(Error::shape(format!(
            "expected [H, W] or [C, H, W], got {d:?}"
        ))),
    }
}

fn with_spatial(image: &Tensor, h: usize, w: usize) -> Vec<usize> {
    let mut dims = image.dims().to_vec();
    let n = dims.len();
    dims[n - 2] = h;
    dims[n - 1] = w;
    dims
}

/// `r x r` box-average downsampling of `[H, W]` or `[C, H, W]`.
pub fn degrade_sr(image: &Tensor, r: usize) -> Result<Tensor> {
    let (c, h, w) = planes(image)?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::shape(format!("factor {r} does not divide {h}x{w}")));
    }
    let (oh, ow) = (h / r, w / r);
    let norm = 1.0 / (r * r) as f64;
    let src = image.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for di in 0..r {
                    for dj in 0..r {
                        acc += plane[(i * r + di) * w + j * r + dj];
                    }
                }
                out.push(acc * norm);
            }
        }
    }
    Tensor::new(&with_spatial(image, oh, ow), out)
}

/// Nearest-neighbour `r x` upsampling.
pub fn upsample_nearest(image: &Tensor, r: usize) -> Result<Tensor> {
    let (c, h, w) = planes(image)?;
    if r == 0 {
        return Err(Error::shape("upsampling factor 0"));
    }
    let (oh, ow) = (h * r, w * r);
    let src = image.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                out.push(src[ch * h * w + (i / r) * w + j / r]);
            }
        }
    }
    Tensor::new(&with_spatial(image, oh, ow), out)
}

/// i.i.d. additive `N(0, σ²)` per element, unclipped.
pub fn add_gaussian_noise(image: &Tensor, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::config(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let noise = Tensor::from_fn(image.dims(), |_| rng.normal());
    image.zip_map(&noise, |v, z| v + sigma * z)
}
