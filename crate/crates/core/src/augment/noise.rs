//! Frequency-weighted Gaussian noise injected in k-space.
//!
//! `F' = F + λ |F| W η` where `W` ramps from 0 at DC to 1 at the highest
//! radial frequency and `η` is complex Gaussian noise drawn with Hermitian
//! symmetry, so the inverse transform of `F'` is exactly real.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{self, spatial_extents};
use crate::rng::Rng;
use crate::tensor::{ComplexTensor, Tensor};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_SIGMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Linear,
    Quadratic,
}

impl std::str::FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(WeightKind::Linear),
            "quadratic" => Ok(WeightKind::Quadratic),
            other => Err(Error::config(format!("unknown weight kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for WeightKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightKind::Linear => "linear",
            WeightKind::Quadratic => "quadratic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub lambda: f64,
    pub sigma: f64,
    pub weight_kind: WeightKind,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            lambda: DEFAULT_LAMBDA,
            sigma: DEFAULT_SIGMA,
            weight_kind: WeightKind::Linear,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.sigma >= 0.0) {
            return Err(Error::config(format!(
                "noise lambda and sigma must be non-negative, got {} and {}",
                self.lambda, self.sigma
            )));
        }
        Ok(())
    }
}

/// Signed frequency index of FFT bin `k` on an axis of length `n`, folded to `|k| <= n/2`.
fn folded(k: usize, n: usize) -> f64 {
    k.min(n - k) as f64
}

/// Radial weight per FFT bin, normalised so the largest radius maps to 1.
pub fn radial_weight(h: usize, w: usize, kind: WeightKind) -> Tensor {
    let radius = |u: usize, v: usize| folded(u, h).hypot(folded(v, w));
    let r_max = (h / 2) as f64;
    let r_max = r_max.hypot((w / 2) as f64);
    Tensor::from_fn(&[h, w], |k| {
        if r_max == 0.0 {
            return 0.0;
        }
        let t = radius(k / w, k % w) / r_max;
        match kind {
            WeightKind::Linear => t,
            WeightKind::Quadratic => t * t,
        }
    })
}

/// Hermitian-symmetric complex Gaussian field with `E|η|² = 2σ²` at every bin.
///
/// Generic bins get independent `N(0, σ²)` real and imaginary parts; bins
/// that are their own mirror (DC and Nyquist corners) must be real and get
/// a single `N(0, 2σ²)` draw so the per-bin power is uniform.
pub fn hermitian_noise(h: usize, w: usize, sigma: f64, rng: &mut Rng) -> ComplexTensor {
    let mut out = ComplexTensor::zeros(&[h, w]);
    let data = out.data_mut();
    for u in 0..h {
        for v in 0..w {
            let (mu, mv) = ((h - u) % h, (w - v) % w);
            let idx = u * w + v;
            let mirror = mu * w + mv;
            if mirror < idx {
                continue;
            }
            if mirror == idx {
                data[idx] = Complex64::new(std::f64::consts::SQRT_2 * sigma * rng.normal(), 0.0);
            } else {
                let z = Complex64::new(sigma * rng.normal(), sigma * rng.normal());
                data[idx] = z;
                data[mirror] = z.conj();
            }
        }
    }
    out
}

pub fn kspace_noise(patch: &Tensor, spec: &NoiseSpec) -> Result<Tensor> {
    kspace_noise_with(patch, spec, &mut Rng::new(spec.seed))
}

/// Noises one real `[h, w]` patch, drawing from `rng`.
pub fn kspace_noise_with(patch: &Tensor, spec: &NoiseSpec, rng: &mut Rng) -> Result<Tensor> {
    let [h, w] = patch.dims2()?;
    spatial_extents(patch.dims())?;
    spec.validate()?;
    if spec.lambda == 0.0 {
        return Ok(patch.clone());
    }
    let mut spectrum = fft::fft2(&patch.to_complex())?;
    let weight = radial_weight(h, w, spec.weight_kind);
    let eta = hermitian_noise(h, w, spec.sigma, rng);
    for ((f, &wt), e) in spectrum
        .data_mut()
        .iter_mut()
        .zip(weight.data())
        .zip(eta.data())
    {
        *f += e * (spec.lambda * f.norm() * wt);
    }
    Ok(fft::ifft2(&spectrum)?.re())
}

/// Noises each visible `p x p` patch of every channel of `[C, H, W]`.
/// `visible(patch_index)` selects which patches are perturbed.
pub fn noise_patches(
    image: &Tensor,
    p: usize,
    spec: &NoiseSpec,
    visible: impl Fn(usize) -> bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let [c, h, w] = image.dims3()?;
    if h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!(
            "patch size {p} does not divide {h}x{w}"
        )));
    }
    if spec.lambda == 0.0 {
        return Ok(image.clone());
    }
    let (gh, gw) = (h / p, w / p);
    let mut out = image.clone();
    let mut patch = Tensor::zeros(&[p, p]);
    for ch in 0..c {
        for gi in 0..gh {
            for gj in 0..gw {
                if !visible(gi * gw + gj) {
                    continue;
                }
                let base = ch * h * w + gi * p * w + gj * p;
                for i in 0..p {
                    patch.data_mut()[i * p..(i + 1) * p]
                        .copy_from_slice(&image.data()[base + i * w..][..p]);
                }
                let noisy = kspace_noise_with(&patch, spec, rng)?;
                for i in 0..p {
                    out.data_mut()[base + i * w..][..p]
                        .copy_from_slice(&noisy.data()[i * p..(i + 1) * p]);
                }
            }
        }
    }
    Ok(out)
}

/// Mean `|F' - F|²` per integer radial ring over all `p x p` patches and channels.
pub fn ring_noise_power(clean: &Tensor, noisy: &Tensor, p: usize) -> Result<Vec<f64>> {
    clean.expect_same_shape(noisy)?;
    let [c, h, w] = clean.dims3()?;
    if h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!(
            "patch size {p} does not divide {h}x{w}"
        )));
    }
    let rings = ((p / 2) as f64 * std::f64::consts::SQRT_2).round() as usize + 1;
    let mut power = vec![0.0; rings];
    let mut counts = vec![0usize; rings];
    for ch in 0..c {
        for gi in 0..h / p {
            for gj in 0..w / p {
                let base = ch * h * w + gi * p * w + gj * p;
                let mut diff = Tensor::zeros(&[p, p]);
                for i in 0..p {
                    for j in 0..p {
                        diff.data_mut()[i * p + j] =
                            noisy.data()[base + i * w + j] - clean.data()[base + i * w + j];
                    }
                }
                let spec = fft::fft2(&diff.to_complex())?;
                for u in 0..p {
                    for v in 0..p {
                        let r = folded(u, p).hypot(folded(v, p)).round() as usize;
                        power[r] += spec.data()[u * p + v].norm_sqr();
                        counts[r] += 1;
                    }
                }
            }
        }
    }
    Ok(power
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect())
}
