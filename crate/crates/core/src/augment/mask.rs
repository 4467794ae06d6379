//! Inverse-frequency hierarchical masking.
//!
//! Patches whose mean edge energy reaches the `tau`-quantile form the
//! high-edge tier and are masked with probability `0.5 * p_base`; the
//! remaining low-edge tier absorbs the rest of the budget so the expected
//! masked fraction stays at `p_base`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::edge::EdgeMap;

/// Masking budget from which tier probabilities are derived.
pub const DEFAULT_P_BASE: f64 = 0.25;
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tier {
    HighEdge,
    LowEdge,
}

impl Tier {
    pub fn label(self) -> &'static str {
        match self {
            Tier::HighEdge => "high",
            Tier::LowEdge => "low",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub patch_size: usize,
    pub grid: (usize, usize),
    pub tiers: Vec<Tier>,
    pub probs: Vec<f64>,
    /// `true` = masked.
    pub decisions: Vec<bool>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.decisions.iter().filter(|&&m| m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.len() as f64
    }

    pub fn expected_fraction(&self) -> f64 {
        self.probs.iter().sum::<f64>() / self.probs.len() as f64
    }

    /// Plan with no masked patch over the given grid.
    pub fn none(patch_size: usize, grid: (usize, usize)) -> Self {
        let n = grid.0 * grid.1;
        MaskPlan {
            patch_size,
            grid,
            tiers: vec![Tier::LowEdge; n],
            probs: vec![0.0; n],
            decisions: vec![false; n],
            seed: 0,
            warnings: Vec::new(),
        }
    }

    /// Whether pixel `(i, j)` lies in a masked patch.
    pub fn pixel_masked(&self, i: usize, j: usize) -> bool {
        let p = self.patch_size;
        self.decisions[(i / p) * self.grid.1 + j / p]
    }

    /// 0/1 weights over a `[C, H, W]` image selecting masked-patch pixels.
    pub fn pixel_weights(&self, channels: usize) -> Vec<f64> {
        let (h, w) = (self.grid.0 * self.patch_size, self.grid.1 * self.patch_size);
        let mut plane = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                if self.pixel_masked(i, j) {
                    plane[i * w + j] = 1.0;
                }
            }
        }
        plane.repeat(channels)
    }

    /// Zeroes every masked patch of a `[C, H, W]` image.
    pub fn blank_masked(&self, image: &Tensor) -> Result<Tensor> {
        let [_, h, w] = image.dims3()?;
        self.check_extent(h, w)?;
        let mut out = image.clone();
        for plane in out.data_mut().chunks_exact_mut(h * w) {
            for i in 0..h {
                for j in 0..w {
                    if self.pixel_masked(i, j) {
                        plane[i * w + j] = 0.0;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        if h != self.grid.0 * self.patch_size || w != self.grid.1 * self.patch_size {
            return Err(Error::shape(format!(
                "plan covers {}x{} pixels, image is {h}x{w}",
                self.grid.0 * self.patch_size,
                self.grid.1 * self.patch_size
            )));
        }
        Ok(())
    }

    /// `patch_index,tier,prob,masked` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("patch_index,tier,prob,masked\n");
        for (i, ((t, p), m)) in self
            .tiers
            .iter()
            .zip(&self.probs)
            .zip(&self.decisions)
            .enumerate()
        {
            writeln!(out, "{i},{},{p},{}", t.label(), u8::from(*m)).unwrap();
        }
        out
    }
}

/// Mean energy of each `p x p` patch in row-major patch order.
pub fn patch_means(edges: &EdgeMap, p: usize) -> Result<Vec<f64>> {
    let (h, w) = (edges.height(), edges.width());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!(
            "patch size {p} does not divide {h}x{w}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let v = edges.values().data();
    let mut means = vec![0.0; gh * gw];
    for i in 0..h {
        for j in 0..w {
            means[(i / p) * gw + j / p] += v[i * w + j];
        }
    }
    let area = (p * p) as f64;
    means.iter_mut().for_each(|m| *m /= area);
    Ok(means)
}

/// Linear-interpolation quantile between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn plan_mask(
    edges: &EdgeMap,
    p: usize,
    p_base: f64,
    tau: f64,
    rng: &mut Rng,
) -> Result<MaskPlan> {
    if !(p_base > 0.0 && p_base <= 1.0) {
        return Err(Error::config(format!(
            "p_base must lie in (0, 1], got {p_base}"
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("tau must lie in (0, 1), got {tau}")));
    }
    let means = patch_means(edges, p)?;
    let grid = (edges.height() / p, edges.width() / p);
    let threshold = quantile(&means, tau);
    let tiers: Vec<Tier> = means
        .iter()
        .map(|&m| {
            if m >= threshold {
                Tier::HighEdge
            } else {
                Tier::LowEdge
            }
        })
        .collect();

    let n = tiers.len() as f64;
    let n_high = tiers.iter().filter(|&&t| t == Tier::HighEdge).count() as f64;
    let n_low = n - n_high;
    let high_prob = 0.5 * p_base;
    let mut warnings = Vec::new();
    let low_prob = if n_low == 0.0 {
        warnings.push(format!(
            "no low-edge patches; expected masked fraction {high_prob} falls short of {p_base}"
        ));
        0.0
    } else {
        let wanted = (p_base * n - high_prob * n_high) / n_low;
        if wanted > 1.0 {
            warnings.push(format!("low-edge probability {wanted} clamped to 1"));
        }
        wanted.min(1.0)
    };
    for w in &warnings {
        log::warn!("plan_mask: {w}");
    }
    let probs: Vec<f64> = tiers
        .iter()
        .map(|t| {
            if *t == Tier::HighEdge {
                high_prob
            } else {
                low_prob
            }
        })
        .collect();
    let seed = rng.seed();
    let decisions = probs.iter().map(|&pr| rng.bernoulli(pr)).collect();
    Ok(MaskPlan {
        patch_size: p,
        grid,
        tiers,
        probs,
        decisions,
        seed,
        warnings,
    })
}

/// Uniform masking at `p_base` regardless of image content.
pub fn plan_uniform(
    grid: (usize, usize),
    p: usize,
    p_base: f64,
    rng: &mut Rng,
) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&p_base) {
        return Err(Error::config(format!(
            "p_base must lie in [0, 1], got {p_base}"
        )));
    }
    let n = grid.0 * grid.1;
    let seed = rng.seed();
    let decisions = (0..n).map(|_| rng.bernoulli(p_base)).collect();
    Ok(MaskPlan {
        patch_size: p,
        grid,
        tiers: vec![Tier::LowEdge; n],
        probs: vec![p_base; n],
        decisions,
        seed,
        warnings: Vec::new(),
    })
}

/// Rows of `tokens[N, D]` under masked patches are replaced by `mask_token[D]`.
pub fn apply_mask(tokens: &Tensor, plan: &MaskPlan, mask_token: &Tensor) -> Result<Tensor> {
    let [n, d] = tokens.dims2()?;
    if n != plan.len() {
        return Err(Error::shape(format!(
            "{n} tokens for a plan of {} patches",
            plan.len()
        )));
    }
    if mask_token.numel() != d {
        return Err(Error::shape(format!(
            "mask token of {} for width {d}",
            mask_token.numel()
        )));
    }
    let mut out = tokens.clone();
    for (row, &m) in out.data_mut().chunks_exact_mut(d).zip(&plan.decisions) {
        if m {
            row.copy_from_slice(mask_token.data());
        }
    }
    Ok(out)
}
