//! Procedural brain-like phantoms with six pseudo-sequence channels.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 6;
pub const MIN_EXTENT: usize = 32;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["t1w", "t2w", "flair", "dwi", "swi", "t2star"];

/// Tissue label values.
pub const BACKGROUND: u8 = 0;
pub const SKULL: u8 = 1;
pub const BRAIN: u8 = 2;
pub const VENTRICLE: u8 = 3;

/// Number of segmentation classes produced by [`Phantom::segmentation_labels`].
pub const SEG_CLASSES: usize = 4;

// Base intensity per channel for background, skull, brain, ventricle, lesion.
const CONTRAST: [[f64; 5]; CHANNELS] = [
    [0.0, 0.70, 0.60, 0.20, 0.45],
    [0.0, 0.30, 0.45, 0.90, 0.80],
    [0.0, 0.40, 0.50, 0.10, 0.95],
    [0.0, 0.15, 0.50, 0.25, 0.85],
    [0.0, 0.50, 0.65, 0.55, 0.30],
    [0.0, 0.25, 0.55, 0.75, 0.40],
];

/// Orthogonal section orientation; changes the head's aspect and ventricle layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// `[6, H, W]`, intensities in `[0, 1]`.
    pub volume: Tensor,
    /// Row-major `H x W` tissue labels.
    pub tissue_labels: Vec<u8>,
    pub lesion_mask: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    ci: f64,
    cj: f64,
    ri: f64,
    rj: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, i: f64, j: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let di = i - self.ci;
        let dj = j - self.cj;
        let u = c * di + s * dj;
        let v = -s * di + c * dj;
        (u / self.ri).powi(2) + (v / self.rj).powi(2) <= 1.0
    }

    fn scaled(&self, k: f64) -> Ellipse {
        Ellipse {
            ri: self.ri * k,
            rj: self.rj * k,
            ..*self
        }
    }
}

impl Phantom {
    /// Per-pixel classes: 0 background, 1 skull or parenchyma, 2 ventricle, 3 lesion.
    pub fn segmentation_labels(&self) -> Vec<usize> {
        self.tissue_labels
            .iter()
            .zip(&self.lesion_mask)
            .map(|(&t, &l)| match (t, l) {
                (_, true) => 3,
                (VENTRICLE, false) => 2,
                (BACKGROUND, false) => 0,
                _ => 1,
            })
            .collect()
    }

    /// `[2, H, W]`: tissue labels, then the lesion mask as 0/1.
    pub fn label_tensor(&self) -> Tensor {
        let mut data: Vec<f64> = self.tissue_labels.iter().map(|&t| t as f64).collect();
        data.extend(self.lesion_mask.iter().map(|&m| f64::from(u8::from(m))));
        Tensor::new(&[2, self.height, self.width], data)
            .expect("label planes match the phantom extent")
    }
}

/// Random section; the plane is drawn from `rng`.
pub fn phantom_generate(rng: &mut Rng, h: usize, w: usize) -> Result<Phantom> {
    let plane = Plane::ALL[rng.below(3)];
    phantom_section(rng, h, w, plane)
}

/// Three orthogonal sections sharing one contrast draw.
pub fn phantom_sections(rng: &mut Rng, h: usize, w: usize) -> Result<[Phantom; 3]> {
    let contrast = jittered_contrast(rng);
    let mut make = |plane| build(rng, h, w, plane, &contrast);
    Ok([
        make(Plane::Axial)?,
        make(Plane::Coronal)?,
        make(Plane::Sagittal)?,
    ])
}

pub fn phantom_section(rng: &mut Rng, h: usize, w: usize, plane: Plane) -> Result<Phantom> {
    let contrast = jittered_contrast(rng);
    build(rng, h, w, plane, &contrast)
}

fn jittered_contrast(rng: &mut Rng) -> [[f64; 5]; CHANNELS] {
    let mut table = CONTRAST;
    for row in table.iter_mut() {
        for v in row.iter_mut().skip(1) {
            *v = (*v * rng.uniform_range(0.9, 1.1)).min(1.0);
        }
    }
    table
}

fn build(
    rng: &mut Rng,
    h: usize,
    w: usize,
    plane: Plane,
    contrast: &[[f64; 5]; CHANNELS],
) -> Result<Phantom> {
    if h < MIN_EXTENT || w < MIN_EXTENT {
        return Err(Error::shape(format!(
            "phantom extent {h}x{w} is below the {MIN_EXTENT}-pixel minimum"
        )));
    }
    let (hf, wf) = (h as f64, w as f64);
    let aspect = match plane {
        Plane::Axial => (0.44, 0.38),
        Plane::Coronal => (0.40, 0.40),
        Plane::Sagittal => (0.38, 0.44),
    };
    let head = Ellipse {
        ci: hf * rng.uniform_range(0.47, 0.53),
        cj: wf * rng.uniform_range(0.47, 0.53),
        ri: hf * aspect.0 * rng.uniform_range(0.92, 1.05),
        rj: wf * aspect.1 * rng.uniform_range(0.92, 1.05),
        angle: rng.uniform_range(-0.2, 0.2),
    };
    let brain = head.scaled(rng.uniform_range(0.82, 0.88));
    let spread = head.rj * rng.uniform_range(0.12, 0.2);
    let vent_r = (
        head.ri * rng.uniform_range(0.18, 0.26),
        head.rj * rng.uniform_range(0.06, 0.1),
    );
    let ventricles: Vec<Ellipse> = match plane {
        Plane::Sagittal => vec![Ellipse {
            ci: head.ci,
            cj: head.cj,
            ri: vent_r.1 * 1.5,
            rj: vent_r.0 * 1.2,
            angle: head.angle,
        }],
        _ => [-1.0, 1.0]
            .into_iter()
            .map(|side| Ellipse {
                ci: head.ci,
                cj: head.cj + side * spread,
                ri: vent_r.0,
                rj: vent_r.1,
                angle: head.angle + side * 0.15,
            })
            .collect(),
    };

    let mut tissue = vec![BACKGROUND; h * w];
    for i in 0..h {
        for j in 0..w {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let label = if ventricles.iter().any(|v| v.contains(y, x)) {
                VENTRICLE
            } else if brain.contains(y, x) {
                BRAIN
            } else if head.contains(y, x) {
                SKULL
            } else {
                BACKGROUND
            };
            tissue[i * w + j] = label;
        }
    }

    let mut lesion = vec![false; h * w];
    if rng.bernoulli(0.8) {
        let r = brain.ri.min(brain.rj) * rng.uniform_range(0.12, 0.22);
        // Rejection-sample a centre well inside the parenchyma.
        for _ in 0..64 {
            let ci = brain.ci + rng.uniform_range(-0.6, 0.6) * brain.ri;
            let cj = brain.cj + rng.uniform_range(-0.6, 0.6) * brain.rj;
            let blob = Ellipse {
                ci,
                cj,
                ri: r,
                rj: r * rng.uniform_range(0.7, 1.3),
                angle: rng.uniform_range(0.0, 3.1),
            };
            let mut cells = Vec::new();
            for i in 0..h {
                for j in 0..w {
                    if blob.contains(i as f64 + 0.5, j as f64 + 0.5) {
                        cells.push(i * w + j);
                    }
                }
            }
            if !cells.is_empty() && cells.iter().all(|&k| tissue[k] == BRAIN) {
                for k in cells {
                    lesion[k] = true;
                }
                break;
            }
        }
    }

    // Smooth multiplicative inhomogeneity: a tilted plane plus a radial bowl.
    let gi = rng.uniform_range(-0.15, 0.15);
    let gj = rng.uniform_range(-0.15, 0.15);
    let bowl = rng.uniform_range(-0.1, 0.1);
    let mut volume = Vec::with_capacity(CHANNELS * h * w);
    for row in contrast {
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let class = if lesion[k] { 4 } else { tissue[k] as usize };
                let y = (i as f64 + 0.5) / hf - 0.5;
                let x = (j as f64 + 0.5) / wf - 0.5;
                let bias = 1.0 + gi * y + gj * x + bowl * (x * x + y * y);
                volume.push((row[class] * bias).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Phantom {
        volume: Tensor::new(&[CHANNELS, h, w], volume)?,
        tissue_labels: tissue,
        lesion_mask: lesion,
        height: h,
        width: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = phantom_generate(&mut Rng::new(3), 64, 64).unwrap();
        let b = phantom_generate(&mut Rng::new(3), 64, 64).unwrap();
        assert_eq!(a.volume.to_le_bytes(), b.volume.to_le_bytes());
        assert_eq!(a.tissue_labels, b.tissue_labels);
        let c = phantom_generate(&mut Rng::new(4), 64, 64).unwrap();
        assert_ne!(a.volume, c.volume);
    }

    #[test]
    fn lesion_lies_in_tissue_and_intensities_in_range() {
        for seed in 0..20 {
            let p = phantom_generate(&mut Rng::new(seed), 48, 40).unwrap();
            assert_eq!(p.volume.dims(), &[6, 48, 40]);
            for (k, &m) in p.lesion_mask.iter().enumerate() {
                if m {
                    assert!(p.tissue_labels[k] > 0);
                }
            }
            assert!(p.volume.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn channels_pairwise_distinct() {
        for seed in 0..100 {
            let p = phantom_generate(&mut Rng::new(seed), 32, 32).unwrap();
            for a in 0..CHANNELS {
                for b in a + 1..CHANNELS {
                    let ca = p.volume.channel(a).unwrap();
                    let cb = p.volume.channel(b).unwrap();
                    let diff = ca.zip_map(&cb, |x, y| x - y).unwrap().norm();
                    assert!(diff > 1e-3, "seed {seed} channels {a},{b}");
                }
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(phantom_generate(&mut Rng::new(0), 16, 64).is_err());
    }

    #[test]
    fn sections_share_contrast() {
        let s = phantom_sections(&mut Rng::new(9), 32, 32).unwrap();
        assert_ne!(s[0].tissue_labels, s[2].tissue_labels);
        let labels = s[0].segmentation_labels();
        assert!(labels.iter().all(|&c| c < SEG_CLASSES));
    }
}
