//! Run directories driven by the CLI: phantom export, augmentation preview,
//! pretraining, fine-tuning, evaluation, the λ sweep and the ablation grid.
//!
//! Every run writes `config.txt` first; feeding it back through `--config`
//! replays the run bit-identically on one platform.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;

use crate::augment::{
    edge_energy_mean, noise_patches, plan_mask, ring_noise_power, MaskPlan, NoiseSpec, Tier,
};
use crate::config::RunConfig;
use crate::data::{phantom_sections, upsample_nearest, DegradationSpec, Jitter, Manifest, Phantom};
use crate::error::{Error, Result};
use crate::fts;
use crate::metrics::{dice_per_class, hd95, psnr, ssim_default, MetricReport};
use crate::model::{checkpoint, InitMode, Sspformer, TaskKind, ENCODER_PREFIX};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{
    finetune_step, pretrain_step, sample_rng, Adam, Sample, StepReport, Target, Toggles,
    TrainConfig,
};

pub const CONFIG_FILE: &str = "config.txt";
pub const RUN_CSV: &str = "run.csv";
pub const RUN_HEADER: &str = "epoch,step,lr,L_sup,L_con,L_total";
pub const CHECKPOINT_FILE: &str = "checkpoint.sspf";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

// Independent random streams derived from the run seed.
const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_FINETUNE: u64 = 4;
const STREAM_EVAL: u64 = 5;

fn stream(seed: u64, id: u64) -> u64 {
    Rng::derive(seed, id).next_u64()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Image and label slices a run trains and evaluates on.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Phantom>,
    pub heldout: Vec<Phantom>,
}

/// `count` slices; volume `v` contributes its axial, coronal and sagittal sections in turn.
pub fn phantom_slices(seed: u64, count: usize, size: usize) -> Result<Vec<Phantom>> {
    let mut out = Vec::with_capacity(count);
    let mut v = 0u64;
    while out.len() < count {
        let sections = phantom_sections(&mut Rng::derive(seed, v), size, size)?;
        out.extend(sections.into_iter().take(count - out.len()));
        v += 1;
    }
    Ok(out)
}

fn phantom_from_files(volume: Tensor, labels: Tensor) -> Result<Phantom> {
    let [_, h, w] = volume.dims3()?;
    if labels.dims() != [2, h, w] {
        return Err(Error::Format(format!(
            "label tensor {:?} does not match volume {h}x{w}",
            labels.dims()
        )));
    }
    if !volume.is_finite() {
        return Err(Error::Format("volume contains non-finite voxels".into()));
    }
    let plane = h * w;
    Ok(Phantom {
        volume,
        tissue_labels: labels.data()[..plane].iter().map(|&v| v as u8).collect(),
        lesion_mask: labels.data()[plane..].iter().map(|&v| v != 0.0).collect(),
        height: h,
        width: w,
    })
}

/// Volumes listed in a manifest, paired in order with its `labels` entries.
pub fn load_manifest(path: &Path) -> Result<Vec<Phantom>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let manifest = Manifest::from_str(&fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let volumes: Vec<_> = manifest.with_role("volume").collect();
    let labels: Vec<_> = manifest.with_role("labels").collect();
    if volumes.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} volumes but {} label files",
            volumes.len(),
            labels.len()
        )));
    }
    volumes
        .iter()
        .zip(&labels)
        .map(|(v, l)| {
            phantom_from_files(
                fts::read_real(base.join(&v.path))?,
                fts::read_real(base.join(&l.path))?,
            )
        })
        .collect()
}

impl Dataset {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let mut all = if cfg.data.manifest.is_empty() {
            phantom_slices(stream(cfg.seed, STREAM_DATA), cfg.data.count, cfg.data.size)?
        } else {
            load_manifest(Path::new(&cfg.data.manifest))?
        };
        if cfg.data.heldout >= all.len() {
            return Err(Error::config(format!(
                "data.heldout {} leaves no training slices out of {}",
                cfg.data.heldout,
                all.len()
            )));
        }
        let channels = cfg.model.in_channels;
        for p in &mut all {
            let have = p.volume.dims()[0];
            if have < channels {
                return Err(Error::config(format!(
                    "model needs {channels} input channels, slices carry {have}"
                )));
            }
            if have > channels {
                p.volume = p.volume.leading_channels(channels)?;
            }
        }
        let heldout = all.split_off(all.len() - cfg.data.heldout);
        Ok(Dataset {
            train: all,
            heldout,
        })
    }
}

/// Cycles through the training set in a fresh seeded order on every pass.
struct Sampler {
    seed: u64,
    n: usize,
    orders: BTreeMap<usize, Vec<usize>>,
}

impl Sampler {
    fn new(seed: u64, n: usize) -> Self {
        Sampler {
            seed,
            n,
            orders: BTreeMap::new(),
        }
    }

    fn batch(&mut self, step: usize, size: usize) -> Vec<usize> {
        (0..size)
            .map(|k| {
                let g = step * size + k;
                let (pass, pos) = (g / self.n, g % self.n);
                let (seed, n) = (self.seed, self.n);
                self.orders.retain(|&p, _| p + 1 >= pass);
                self.orders.entry(pass).or_insert_with(|| {
                    let mut order: Vec<usize> = (0..n).collect();
                    Rng::derive(seed, pass as u64).shuffle(&mut order);
                    order
                })[pos]
            })
            .collect()
    }
}

fn run_row(epoch: usize, r: &StepReport) -> String {
    format!(
        "{epoch},{},{},{},{},{}\n",
        r.step, r.lr, r.sup, r.con, r.total
    )
}

pub fn write_config_echo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    Ok(())
}

/// Mean of `values[i - 2 ..= i + 2]`, clipped to the valid range; `i` past the
/// end is treated as the last index and an empty history gives NaN.
pub fn smoothed(values: &[f64], i: usize) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let i = i.min(values.len() - 1);
    let lo = i.saturating_sub(2);
    let hi = (i + 3).min(values.len());
    values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
}

pub fn new_model(cfg: &RunConfig) -> Result<Sspformer> {
    Sspformer::new(
        cfg.model.clone(),
        &TaskKind::ALL,
        InitMode::Random,
        &mut Rng::derive(cfg.seed, STREAM_INIT),
    )
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    }
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub model: Sspformer,
    pub reports: Vec<StepReport>,
}

impl PretrainOutcome {
    pub fn sup_history(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.sup).collect()
    }

    /// Smoothed masked-reconstruction loss at the final step over its value at step 5.
    pub fn reduction_ratio(&self) -> f64 {
        let h = self.sup_history();
        smoothed(&h, h.len().saturating_sub(3)) / smoothed(&h, 5)
    }
}

/// Pretrains a fresh model; writes the config echo, `run.csv` and checkpoints into `dir`.
pub fn run_pretrain(cfg: &RunConfig, data: &Dataset, dir: &Path) -> Result<PretrainOutcome> {
    cfg.validate()?;
    create_dir(dir)?;
    write_config_echo(cfg, dir)?;
    let tc = train_config(cfg);
    let mut model = new_model(cfg)?;
    let mut opt = Adam::new();
    let mut sampler = Sampler::new(stream(cfg.seed, STREAM_SHUFFLE), data.train.len());
    let mut csv = format!("{RUN_HEADER}\n");
    let mut reports = Vec::with_capacity(tc.total_steps());
    for step in 0..tc.total_steps() {
        let epoch = step / tc.steps_per_epoch;
        let batch: Vec<Tensor> = sampler
            .batch(step, tc.batch_size)
            .into_iter()
            .map(|i| data.train[i].volume.clone())
            .collect();
        let report = pretrain_step(&mut model, &mut opt, &batch, &tc, step)?;
        csv.push_str(&run_row(epoch, &report));
        if step % 25 == 0 {
            info!(
                "pretrain step {step} lr {:.3e} sup {:.5} con {:.4}",
                report.lr, report.sup, report.con
            );
        }
        reports.push(report);
        let done = epoch + 1;
        if (step + 1) % tc.steps_per_epoch == 0
            && cfg.checkpoint_every > 0
            && done.is_multiple_of(cfg.checkpoint_every)
        {
            checkpoint::save(&model, dir.join(format!("checkpoint_epoch{done:04}.sspf")))?;
        }
    }
    fs::write(dir.join(RUN_CSV), csv)?;
    checkpoint::save(&model, dir.join(CHECKPOINT_FILE))?;
    Ok(PretrainOutcome { model, reports })
}

/// Input and target for one supervised example of `task`.
pub fn task_sample(
    phantom: &Phantom,
    task: TaskKind,
    sigma: f64,
    out_channels: usize,
    rng: &mut Rng,
) -> Result<Sample> {
    if task == TaskKind::Segment {
        return Ok(Sample {
            input: phantom.volume.clone(),
            target: Target::Labels(phantom.segmentation_labels()),
        });
    }
    let (input, target) = DegradationSpec::new(task, sigma).apply(&phantom.volume, rng)?;
    Ok(Sample {
        input,
        target: Target::Image(target.leading_channels(out_channels)?),
    })
}

fn jittered(phantom: &Phantom, rng: &mut Rng) -> Result<Phantom> {
    let j = Jitter::sample(rng);
    let labels: Vec<usize> = phantom.tissue_labels.iter().map(|&t| t as usize).collect();
    let lesion: Vec<usize> = phantom
        .lesion_mask
        .iter()
        .map(|&m| usize::from(m))
        .collect();
    let (h, w) = (phantom.height, phantom.width);
    Ok(Phantom {
        volume: j.apply_image(&phantom.volume)?,
        tissue_labels: j
            .apply_labels(&labels, h, w, 0)?
            .into_iter()
            .map(|t| t as u8)
            .collect(),
        lesion_mask: j
            .apply_labels(&lesion, h, w, 0)?
            .into_iter()
            .map(|m| m != 0)
            .collect(),
        height: h,
        width: w,
    })
}

/// Cosine decay from `lr` to 0 over `steps`.
pub fn finetune_lr(step: usize, lr: f64, steps: usize) -> f64 {
    if steps <= 1 {
        return lr;
    }
    lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / (steps - 1) as f64).cos())
}

/// Freezes the encoder of `model` and fine-tunes decoder, heads and tails on `task`.
pub fn run_finetune(
    cfg: &RunConfig,
    mut model: Sspformer,
    task: TaskKind,
    data: &Dataset,
    dir: &Path,
) -> Result<(Sspformer, Vec<StepReport>)> {
    cfg.validate()?;
    create_dir(dir)?;
    write_config_echo(cfg, dir)?;
    model.params_mut().freeze(ENCODER_PREFIX)?;
    let f = &cfg.finetune;
    let seed = stream(cfg.seed, STREAM_FINETUNE);
    let out_channels = model.config().out_channels;
    let mut opt = Adam::new();
    let mut sampler = Sampler::new(seed, data.train.len());
    let mut csv = format!("{RUN_HEADER}\n");
    let mut reports = Vec::with_capacity(f.steps);
    let per_epoch = data.train.len().div_ceil(f.batch_size).max(1);
    for step in 0..f.steps {
        let batch = sampler
            .batch(step, f.batch_size)
            .into_iter()
            .enumerate()
            .map(|(k, i)| {
                let mut rng = sample_rng(seed, step, k);
                if f.augment {
                    task_sample(
                        &jittered(&data.train[i], &mut rng)?,
                        task,
                        f.sigma,
                        out_channels,
                        &mut rng,
                    )
                } else {
                    task_sample(&data.train[i], task, f.sigma, out_channels, &mut rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let lr = finetune_lr(step, f.lr, f.steps);
        let report = finetune_step(&mut model, &mut opt, &batch, task, lr, step)?;
        csv.push_str(&run_row(step / per_epoch, &report));
        if step % 25 == 0 {
            info!(
                "finetune {task} step {step} lr {lr:.3e} loss {:.5}",
                report.sup
            );
        }
        reports.push(report);
    }
    fs::write(dir.join(RUN_CSV), csv)?;
    checkpoint::save(&model, dir.join(CHECKPOINT_FILE))?;
    Ok((model, reports))
}

/// What produces predictions during evaluation.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a Sspformer),
    /// The degraded input itself, upsampled for super-resolution.
    Identity,
}

fn argmax_labels(logits: &Tensor) -> Result<Vec<usize>> {
    let [k, h, w] = logits.dims3()?;
    let d = logits.data();
    Ok((0..h * w)
        .map(|p| {
            (0..k)
                .max_by(|&a, &b| d[a * h * w + p].total_cmp(&d[b * h * w + p]))
                .unwrap_or(0)
        })
        .collect())
}

/// Held-out metrics for `task`; rows are keyed `heldout_{i:03}`.
pub fn evaluate(
    cfg: &RunConfig,
    predictor: Predictor<'_>,
    task: TaskKind,
    data: &Dataset,
) -> Result<MetricReport> {
    let out_channels = cfg.model.out_channels;
    let seed = stream(cfg.seed, STREAM_EVAL);
    let mut report = MetricReport::default();
    for (i, phantom) in data.heldout.iter().enumerate() {
        let id = format!("heldout_{i:03}");
        let mut rng = Rng::derive(seed, i as u64);
        let sample = task_sample(phantom, task, cfg.finetune.sigma, out_channels, &mut rng)?;
        match (&sample.target, predictor) {
            (Target::Image(target), p) => {
                let pred = match p {
                    Predictor::Model(m) => m.predict(&sample.input, task)?,
                    Predictor::Identity => upsample_nearest(
                        &sample.input.leading_channels(out_channels)?,
                        task.scale(),
                    )?,
                };
                report.push(&id, task.name(), "psnr", psnr(&pred, target, 1.0)?);
                report.push(&id, task.name(), "ssim", ssim_default(&pred, target, 1.0)?);
            }
            (Target::Labels(labels), Predictor::Model(m)) => {
                let pred = argmax_labels(&m.predict(&sample.input, task)?)?;
                let classes = m.config().seg_classes;
                for (k, d) in dice_per_class(&pred, labels, classes)?
                    .into_iter()
                    .enumerate()
                {
                    report.push(&id, task.name(), &format!("dice_c{}", k + 1), d);
                }
                for k in 1..classes {
                    let p: Vec<bool> = pred.iter().map(|&c| c == k).collect();
                    let t: Vec<bool> = labels.iter().map(|&c| c == k).collect();
                    match hd95(&p, &t, phantom.height, phantom.width) {
                        Ok(v) => report.push(&id, task.name(), &format!("hd95_c{k}"), v),
                        Err(Error::UndefinedMetric(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            (Target::Labels(_), Predictor::Identity) => {
                return Err(Error::config("segmentation has no identity baseline"));
            }
        }
    }
    Ok(report)
}

pub fn run_eval(
    cfg: &RunConfig,
    predictor: Predictor<'_>,
    task: TaskKind,
    data: &Dataset,
    dir: &Path,
) -> Result<MetricReport> {
    create_dir(dir)?;
    write_config_echo(cfg, dir)?;
    let report = evaluate(cfg, predictor, task, data)?;
    fs::write(dir.join(METRICS_CSV), report.to_csv())?;
    Ok(report)
}

/// Result of pretraining, denoise fine-tuning and held-out evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub reduction_ratio: f64,
    pub final_sup: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub identity_psnr: f64,
}

/// Pretrain, fine-tune for denoising and evaluate under `dir/{pretrain,finetune,eval}`.
pub fn run_experiment(cfg: &RunConfig, data: &Dataset, dir: &Path) -> Result<ExperimentOutcome> {
    let pre = run_pretrain(cfg, data, &dir.join("pretrain"))?;
    let reduction_ratio = pre.reduction_ratio();
    let final_sup = pre.reports.last().map_or(f64::NAN, |r| r.sup);
    let (model, _) = run_finetune(
        cfg,
        pre.model,
        TaskKind::Denoise,
        data,
        &dir.join("finetune"),
    )?;
    let report = run_eval(
        cfg,
        Predictor::Model(&model),
        TaskKind::Denoise,
        data,
        &dir.join("eval"),
    )?;
    let identity = evaluate(cfg, Predictor::Identity, TaskKind::Denoise, data)?;
    let mean = |r: &MetricReport, m: &str| r.mean(m).unwrap_or(f64::INFINITY);
    let outcome = ExperimentOutcome {
        reduction_ratio,
        final_sup,
        psnr: mean(&report, "psnr"),
        ssim: mean(&report, "ssim"),
        identity_psnr: mean(&identity, "psnr"),
    };
    info!("experiment {}: {outcome:?}", dir.display());
    Ok(outcome)
}

fn outcome_cells(o: &ExperimentOutcome) -> String {
    format!(
        "{},{},{},{},{}",
        o.reduction_ratio, o.final_sup, o.psnr, o.ssim, o.identity_psnr
    )
}

const OUTCOME_HEADER: &str = "reduction_ratio,final_L_sup,psnr,ssim,identity_psnr";

/// One experiment per λ in `lambdas`, summarised in `sweep.csv`.
pub fn run_lambda_sweep(
    cfg: &RunConfig,
    lambdas: &[f64],
    dir: &Path,
) -> Result<Vec<(f64, ExperimentOutcome)>> {
    cfg.validate()?;
    create_dir(dir)?;
    write_config_echo(cfg, dir)?;
    let data = Dataset::from_config(cfg)?;
    let mut csv = format!("lambda,{OUTCOME_HEADER}\n");
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut c = cfg.clone();
        c.train.loss.lambda_contrastive = lambda;
        let o = run_experiment(&c, &data, &dir.join(format!("lambda_{lambda}")))?;
        writeln!(csv, "{lambda},{}", outcome_cells(&o)).unwrap();
        rows.push((lambda, o));
    }
    fs::write(dir.join(SWEEP_CSV), csv)?;
    Ok(rows)
}

/// Baseline, only FFT noise, only inverse-frequency masking and the full
/// configuration, summarised in `ablation.csv`.
pub fn run_ablation(
    cfg: &RunConfig,
    dir: &Path,
) -> Result<Vec<(&'static str, Toggles, ExperimentOutcome)>> {
    cfg.validate()?;
    create_dir(dir)?;
    write_config_echo(cfg, dir)?;
    let data = Dataset::from_config(cfg)?;
    let mut csv = format!("config,inv_freq_mask,fft_noise,freq_att,{OUTCOME_HEADER}\n");
    let mut rows = Vec::with_capacity(4);
    for (name, toggles) in Toggles::ablation_rows() {
        let mut c = cfg.clone();
        c.train.toggles = toggles;
        let o = run_experiment(&c, &data, &dir.join(name))?;
        writeln!(
            csv,
            "{name},{},{},{},{}",
            toggles.inv_freq_mask,
            toggles.fft_noise,
            toggles.freq_att,
            outcome_cells(&o)
        )
        .unwrap();
        rows.push((name, toggles, o));
    }
    fs::write(dir.join(ABLATION_CSV), csv)?;
    Ok(rows)
}

/// Writes `count` phantoms and label planes as FTS1 plus a manifest.
pub fn run_phantom(count: usize, size: usize, seed: u64, dir: &Path) -> Result<Manifest> {
    let slices = phantom_slices(stream(seed, STREAM_DATA), count, size)?;
    create_dir(dir)?;
    let mut manifest = Manifest::default();
    for (i, p) in slices.iter().enumerate() {
        let volume = format!("phantom_{i:03}.fts");
        let labels = format!("phantom_{i:03}_labels.fts");
        fts::write_real(dir.join(&volume), &p.volume)?;
        fts::write_real(dir.join(&labels), &p.label_tensor())?;
        manifest.push(volume, "volume", p.volume.dims()[0]);
        manifest.push(labels, "labels", 2);
    }
    fs::write(dir.join(MANIFEST_FILE), manifest.to_string())?;
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentMode {
    Mask,
    Noise,
    Both,
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(AugmentMode::Mask),
            "noise" => Ok(AugmentMode::Noise),
            "both" => Ok(AugmentMode::Both),
            _ => Err(Error::config(format!(
                "unknown augment mode `{s}` (mask|noise|both)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AugmentSettings {
    pub mode: AugmentMode,
    pub patch: usize,
    pub p_base: f64,
    pub tau: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct AugmentOutcome {
    pub output: Tensor,
    pub plan: Option<MaskPlan>,
    pub stats: String,
}

/// Applies masking and/or k-space noise to an `[H, W]` or `[C, H, W]` FTS1 tensor.
pub fn augment_tensor(input: &Tensor, s: &AugmentSettings) -> Result<AugmentOutcome> {
    let image = match input.dims() {
        &[h, w] => input.clone().reshape(&[1, h, w])?,
        _ => input.clone(),
    };
    let [_, h, w] = image.dims3()?;
    let mut rng = Rng::new(s.seed);
    let plan = match s.mode {
        AugmentMode::Noise => None,
        _ => Some(plan_mask(
            &edge_energy_mean(&image)?,
            s.patch,
            s.p_base,
            s.tau,
            &mut rng,
        )?),
    };
    let noisy = match (s.mode, &plan) {
        (AugmentMode::Mask, _) => image.clone(),
        (_, Some(p)) => noise_patches(&image, s.patch, &s.noise, |k| !p.decisions[k], &mut rng)?,
        (_, None) => noise_patches(&image, s.patch, &s.noise, |_| true, &mut rng)?,
    };
    let output = match &plan {
        Some(p) => p.blank_masked(&noisy)?,
        None => noisy,
    };

    let mut stats = String::new();
    writeln!(stats, "mode = {:?}", s.mode).unwrap();
    writeln!(stats, "patches = {}", (h / s.patch) * (w / s.patch)).unwrap();
    if let Some(p) = &plan {
        let n = p.len() as f64;
        let sd = (s.p_base * (1.0 - s.p_base) / n).sqrt();
        let high = p.tiers.iter().filter(|&&t| t == Tier::HighEdge).count();
        writeln!(stats, "masked_fraction = {}", p.masked_fraction()).unwrap();
        writeln!(stats, "expected_fraction = {}", p.expected_fraction()).unwrap();
        writeln!(stats, "binomial_3sigma = {}", 3.0 * sd).unwrap();
        writeln!(stats, "high_tier_patches = {high}").unwrap();
    }
    if s.mode != AugmentMode::Mask {
        for (k, v) in ring_noise_power(
            &image,
            &output_for_rings(&image, &output, plan.as_ref())?,
            s.patch,
        )?
        .into_iter()
        .enumerate()
        {
            writeln!(stats, "ring_power_{k} = {v}").unwrap();
        }
    }
    let output = if input.dims().len() == 2 {
        output.reshape(input.dims())?
    } else {
        output
    };
    Ok(AugmentOutcome {
        output,
        plan,
        stats,
    })
}

// Masked patches are blanked, not noised; restore them so the per-ring
// power reflects the injected noise only.
fn output_for_rings(clean: &Tensor, out: &Tensor, plan: Option<&MaskPlan>) -> Result<Tensor> {
    let Some(plan) = plan else {
        return Ok(out.clone());
    };
    let [c, h, w] = clean.dims3()?;
    let mut restored = out.clone();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                if plan.pixel_masked(i, j) {
                    let k = (ch * h + i) * w + j;
                    restored.data_mut()[k] = clean.data()[k];
                }
            }
        }
    }
    Ok(restored)
}

/// `augment` subcommand: writes `augmented.fts`, `mask_plan.csv` and `stats.txt`.
pub fn run_augment(input: &Path, s: &AugmentSettings, dir: &Path) -> Result<AugmentOutcome> {
    if !input.exists() {
        return Err(Error::Missing(input.to_path_buf()));
    }
    let tensor = fts::read_real(input)?;
    let outcome = augment_tensor(&tensor, s)?;
    create_dir(dir)?;
    fts::write_real(dir.join("augmented.fts"), &outcome.output)?;
    if let Some(p) = &outcome.plan {
        fs::write(dir.join("mask_plan.csv"), p.to_csv())?;
    }
    fs::write(dir.join("stats.txt"), &outcome.stats)?;
    Ok(outcome)
}

/// Path of the final checkpoint inside a run directory.
pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}
