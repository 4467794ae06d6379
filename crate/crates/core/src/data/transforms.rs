//! Random flip, small rotation and intensity gain for fine-tuning batches.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const MAX_GAIN_DEVIATION: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub flip: bool,
    pub angle_deg: f64,
    pub gain: f64,
}

impl Jitter {
    pub const IDENTITY: Jitter = Jitter {
        flip: false,
        angle_deg: 0.0,
        gain: 1.0,
    };

    pub fn sample(rng: &mut Rng) -> Self {
        Jitter {
            flip: rng.bernoulli(0.5),
            angle_deg: rng.uniform_range(-MAX_ROTATION_DEG, MAX_ROTATION_DEG),
            gain: rng.uniform_range(1.0 - MAX_GAIN_DEVIATION, 1.0 + MAX_GAIN_DEVIATION),
        }
    }

    // Source coordinate of output pixel (i, j): inverse rotation about the centre, then flip.
    fn source(&self, i: usize, j: usize, h: usize, w: usize) -> (f64, f64) {
        let (ci, cj) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (di, dj) = (i as f64 - ci, j as f64 - cj);
        let si = c * di + s * dj + ci;
        let sj = -s * di + c * dj + cj;
        if self.flip {
            (si, w as f64 - 1.0 - sj)
        } else {
            (si, sj)
        }
    }

    /// Bilinear resampling of every channel of `[C, H, W]`, zero outside, then the gain.
    pub fn apply_image(&self, image: &Tensor) -> Result<Tensor> {
        let [c, h, w] = image.dims3()?;
        let px = image.data();
        let sample = |plane: &[f64], y: f64, x: f64| -> f64 {
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let at = |yy: f64, xx: f64| {
                if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                    0.0
                } else {
                    plane[yy as usize * w + xx as usize]
                }
            };
            (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0))
                + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0))
        };
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let plane = &px[ch * h * w..(ch + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let (y, x) = self.source(i, j, h, w);
                    out.push(self.gain * sample(plane, y, x));
                }
            }
        }
        Tensor::new(&[c, h, w], out)
    }

    /// Nearest-neighbour resampling of a label map; outside pixels become `fill`.
    pub fn apply_labels(
        &self,
        labels: &[usize],
        h: usize,
        w: usize,
        fill: usize,
    ) -> Result<Vec<usize>> {
        if labels.len() != h * w {
            return Err(Error::shape(format!("{} labels for {h}x{w}", labels.len())));
        }
        Ok((0..h * w)
            .map(|k| {
                let (y, x) = self.source(k / w, k % w, h, w);
                let (y, x) = (y.round(), x.round());
                if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                    fill
                } else {
                    labels[y as usize * w + x as usize]
                }
            })
            .collect())
    }
}
