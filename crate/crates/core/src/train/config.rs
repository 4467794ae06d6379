use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::augment::mask::{DEFAULT_P_BASE, DEFAULT_TAU};
use crate::augment::NoiseSpec;
use crate::error::{Error, Result};

/// Grid of consistency weights swept by default.
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconNorm {
    /// Mean over pixels of masked patches.
    MaskedOnly,
    AllPixels,
}

impl fmt::Display for ReconNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReconNorm::MaskedOnly => "masked",
            ReconNorm::AllPixels => "all",
        })
    }
}

impl FromStr for ReconNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(ReconNorm::MaskedOnly),
            "all" => Ok(ReconNorm::AllPixels),
            _ => Err(Error::config(format!(
                "unknown recon norm `{s}` (masked|all)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_contrastive: f64,
    pub recon_norm: ReconNorm,
    /// Input channel pairs whose encoder embeddings are pulled together.
    pub consistency_pairs: Vec<(usize, usize)>,
}

impl Default for LossConfig {
    fn default() -> Self {
        // Channels 0 and 1 are the T1- and T2-weighted pseudo-sequences.
        LossConfig {
            lambda_contrastive: 0.1,
            recon_norm: ReconNorm::MaskedOnly,
            consistency_pairs: vec![(0, 1)],
        }
    }
}

impl LossConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if !(self.lambda_contrastive >= 0.0) {
            return Err(Error::config(format!(
                "lambda must be >= 0, got {}",
                self.lambda_contrastive
            )));
        }
        if let Some(&(a, b)) = self
            .consistency_pairs
            .iter()
            .find(|&&(a, b)| a >= channels || b >= channels || a == b)
        {
            return Err(Error::config(format!(
                "consistency pair ({a}, {b}) is invalid for {channels} channels"
            )));
        }
        Ok(())
    }
}

/// Module switches of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    pub inv_freq_mask: bool,
    pub fft_noise: bool,
    pub freq_att: bool,
}

impl Toggles {
    pub const FULL: Toggles = Toggles {
        inv_freq_mask: true,
        fft_noise: true,
        freq_att: true,
    };
    pub const BASELINE: Toggles = Toggles {
        inv_freq_mask: false,
        fft_noise: false,
        freq_att: false,
    };

    /// The four ablation rows in reporting order.
    pub fn ablation_rows() -> [(&'static str, Toggles); 4] {
        [
            ("baseline", Toggles::BASELINE),
            (
                "only_fft",
                Toggles {
                    fft_noise: true,
                    ..Toggles::BASELINE
                },
            ),
            (
                "only_mask",
                Toggles {
                    inv_freq_mask: true,
                    ..Toggles::BASELINE
                },
            ),
            ("full", Toggles::FULL),
        ]
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::FULL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub toggles: Toggles,
    pub p_base: f64,
    pub tau: f64,
    pub noise: NoiseSpec,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-5,
            warmup_epochs: 10,
            epochs: 100,
            steps_per_epoch: 8,
            batch_size: 8,
            seed: 0,
            toggles: Toggles::FULL,
            p_base: DEFAULT_P_BASE,
            tau: DEFAULT_TAU,
            noise: NoiseSpec::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "steps_per_epoch and batch_size must be positive",
            ));
        }
        if !(self.p_base > 0.0 && self.p_base <= 1.0) || !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("p_base must be in (0, 1] and tau in (0, 1)"));
        }
        self.noise.validate()
    }
}

/// Linear warm-up from 0 to `lr0`, then cosine decay reaching 0 at the last
/// step `total_steps - 1`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let warm = config.warmup_steps();
    let last = config.total_steps().saturating_sub(1);
    if step < warm {
        return config.lr0 * step as f64 / warm as f64;
    }
    if last <= warm {
        return if step >= last { 0.0 } else { config.lr0 };
    }
    let progress = ((step - warm) as f64 / (last - warm) as f64).min(1.0);
    config.lr0 * 0.5 * (1.0 + (PI * progress).cos())
}
