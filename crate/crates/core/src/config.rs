//! Flat `key = value` run configuration shared by every CLI subcommand.
//!
//! Unknown keys are rejected. [`RunConfig::to_text`] writes every resolved
//! value, and parsing that text back yields an identical configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::augment::WeightKind;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaskKind};
use crate::train::{ReconNorm, TrainConfig, LAMBDA_GRID};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
    Reduced,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
            Preset::Reduced => "reduced",
        }
    }

    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(),
            Preset::Full => ModelConfig::default(),
            Preset::Reduced => ModelConfig::reduced(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            "reduced" => Ok(Preset::Reduced),
            _ => Err(Error::config(format!(
                "unknown preset `{s}` (desk|full|reduced)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Phantom slices generated when no manifest is given.
    pub count: usize,
    pub size: usize,
    /// Slices held out from training for evaluation.
    pub heldout: usize,
    /// Optional manifest of FTS1 volumes used instead of generated phantoms.
    pub manifest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub task: TaskKind,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Random flip, rotation and intensity gain on training pairs.
    pub augment: bool,
    /// Denoising noise level for fine-tuning and evaluation pairs.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub data: DataConfig,
    /// Pretraining checkpoint period in epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub sweep_lambda: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::with_preset(Preset::Desk)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(Error::config(format!(
            "invalid boolean `{value}` for `{key}`"
        ))),
    }
}

fn join<T: ToString>(items: &[T], sep: &str) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(sep)
}

/// Comma-separated list of numbers.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    pub fn with_preset(preset: Preset) -> Self {
        let model = preset.model();
        let train = TrainConfig {
            epochs: 50,
            steps_per_epoch: 6,
            batch_size: 8,
            ..TrainConfig::default()
        };
        RunConfig {
            preset,
            seed: 0,
            data: DataConfig {
                count: 80,
                size: model.image_size,
                heldout: 16,
                manifest: String::new(),
            },
            model,
            train,
            finetune: FinetuneConfig {
                task: TaskKind::Denoise,
                lr: 3e-3,
                steps: 300,
                batch_size: 8,
                augment: false,
                sigma: 0.10,
            },
            checkpoint_every: 0,
            sweep_lambda: LAMBDA_GRID.to_vec(),
        }
    }

    /// Resolved `(key, value)` pairs in echo order; `preset` comes first.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut out: Vec<(String, String)> = vec![
            ("preset".into(), self.preset.name().into()),
            ("seed".into(), self.seed.to_string()),
        ];
        out.extend(
            self.model
                .to_pairs()
                .into_iter()
                .map(|(k, v)| (format!("model.{k}"), v)),
        );
        let pairs: Vec<String> = t
            .loss
            .consistency_pairs
            .iter()
            .map(|(a, b)| format!("{a}-{b}"))
            .collect();
        let train = [
            ("lr0", t.lr0.to_string()),
            ("warmup_epochs", t.warmup_epochs.to_string()),
            ("epochs", t.epochs.to_string()),
            ("steps_per_epoch", t.steps_per_epoch.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("inv_freq_mask", t.toggles.inv_freq_mask.to_string()),
            ("fft_noise", t.toggles.fft_noise.to_string()),
            ("freq_att", t.toggles.freq_att.to_string()),
            ("p_base", t.p_base.to_string()),
            ("tau", t.tau.to_string()),
            ("noise_lambda", t.noise.lambda.to_string()),
            ("noise_sigma", t.noise.sigma.to_string()),
            ("noise_weight", t.noise.weight_kind.to_string()),
            ("lambda", t.loss.lambda_contrastive.to_string()),
            ("recon_norm", t.loss.recon_norm.to_string()),
            ("consistency_pairs", pairs.join(";")),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        out.extend(train.into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        let f = &self.finetune;
        let finetune = [
            ("task", f.task.to_string()),
            ("lr", f.lr.to_string()),
            ("steps", f.steps.to_string()),
            ("batch_size", f.batch_size.to_string()),
            ("augment", f.augment.to_string()),
            ("sigma", f.sigma.to_string()),
        ];
        out.extend(
            finetune
                .into_iter()
                .map(|(k, v)| (format!("finetune.{k}"), v)),
        );
        let d = &self.data;
        let data = [
            ("count", d.count.to_string()),
            ("size", d.size.to_string()),
            ("heldout", d.heldout.to_string()),
            ("manifest", d.manifest.clone()),
        ];
        out.extend(data.into_iter().map(|(k, v)| (format!("data.{k}"), v)));
        out.push(("sweep.lambda".into(), join(&self.sweep_lambda, ",")));
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if let Some(k) = key.strip_prefix("model.") {
            if self.model.set(k, value)? {
                return Ok(());
            }
            return Err(Error::config(format!("unknown key `{key}`")));
        }
        let t = &mut self.train;
        match key {
            "preset" => {
                self.preset = parse(key, value)?;
                self.model = self.preset.model();
                self.data.size = self.model.image_size;
            }
            "seed" => self.seed = parse(key, value)?,
            "train.lr0" => t.lr0 = parse(key, value)?,
            "train.warmup_epochs" => t.warmup_epochs = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.steps_per_epoch" => t.steps_per_epoch = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.inv_freq_mask" => t.toggles.inv_freq_mask = parse_bool(key, value)?,
            "train.fft_noise" => t.toggles.fft_noise = parse_bool(key, value)?,
            "train.freq_att" => t.toggles.freq_att = parse_bool(key, value)?,
            "train.p_base" => t.p_base = parse(key, value)?,
            "train.tau" => t.tau = parse(key, value)?,
            "train.noise_lambda" => t.noise.lambda = parse(key, value)?,
            "train.noise_sigma" => t.noise.sigma = parse(key, value)?,
            "train.noise_weight" => t.noise.weight_kind = value.parse::<WeightKind>()?,
            "train.lambda" => t.loss.lambda_contrastive = parse(key, value)?,
            "train.recon_norm" => t.loss.recon_norm = value.parse::<ReconNorm>()?,
            "train.consistency_pairs" => {
                t.loss.consistency_pairs = value
                    .split(';')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        let (a, b) = p.split_once('-').ok_or_else(|| {
                            Error::config(format!("pair `{p}` is not of the form a-b"))
                        })?;
                        Ok((parse(key, a.trim())?, parse(key, b.trim())?))
                    })
                    .collect::<Result<_>>()?;
            }
            "train.checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "finetune.task" => self.finetune.task = value.parse()?,
            "finetune.lr" => self.finetune.lr = parse(key, value)?,
            "finetune.steps" => self.finetune.steps = parse(key, value)?,
            "finetune.batch_size" => self.finetune.batch_size = parse(key, value)?,
            "finetune.augment" => self.finetune.augment = parse_bool(key, value)?,
            "finetune.sigma" => self.finetune.sigma = parse(key, value)?,
            "data.count" => self.data.count = parse(key, value)?,
            "data.size" => self.data.size = parse(key, value)?,
            "data.heldout" => self.data.heldout = parse(key, value)?,
            "data.manifest" => self.data.manifest = value.to_string(),
            "sweep.lambda" => self.sweep_lambda = parse_list(key, value)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    no + 1
                ))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::parse_text(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.train.loss.validate(self.model.in_channels)?;
        if !self.data.size.is_multiple_of(self.model.patch) {
            return Err(Error::config(format!(
                "data.size {} is not a multiple of model.patch {}",
                self.data.size, self.model.patch
            )));
        }
        if self.data.size > self.model.image_size {
            return Err(Error::config(format!(
                "data.size {} exceeds model.image_size {}",
                self.data.size, self.model.image_size
            )));
        }
        if self.data.manifest.is_empty() && self.data.heldout >= self.data.count {
            return Err(Error::config(
                "data.heldout must leave at least one training slice",
            ));
        }
        if self.finetune.batch_size == 0
            || !(self.finetune.lr > 0.0)
            || !(self.finetune.sigma >= 0.0)
        {
            return Err(Error::config(
                "finetune batch_size and lr must be positive, sigma non-negative",
            ));
        }
        if self.sweep_lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config("sweep.lambda values must be >= 0"));
        }
        Ok(())
    }
}
