//! One optimisation step of pretraining or fine-tuning.
//!
//! Per-sample gradients are computed in parallel and summed in sample
//! order, so a step is bit-reproducible for any thread count.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::augment::{edge_energy_mean, noise_patches, plan_mask, plan_uniform, MaskPlan};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{path_matches, Binder, Sspformer, TaskKind, ENCODER_PREFIX};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::{lr_at, ReconNorm, TrainConfig};
use super::loss::recon_loss_var;
use super::optim::Adam;

/// Task whose head, token and tail carry masked reconstruction during pretraining.
pub const PRETRAIN_TASK: TaskKind = TaskKind::Denoise;

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Image(Tensor),
    Labels(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub sup: f64,
    pub con: f64,
    pub total: f64,
    pub masked_fraction: f64,
}

struct SampleGrad {
    sup: f64,
    con: f64,
    total: f64,
    masked_fraction: f64,
    grads: BTreeMap<String, Tensor>,
}

/// Worker count: `SSPF_THREADS` if set to a positive integer, else the host parallelism.
pub fn thread_count() -> usize {
    std::env::var("SSPF_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count())
            .build()
            .expect("thread pool construction")
    })
}

/// Stream for sample `index` of step `step`.
pub fn sample_rng(seed: u64, step: usize, index: usize) -> Rng {
    Rng::derive(seed, ((step as u64) << 24) | index as u64)
}

/// Masked, noised network input for one clean `[C, H, W]` image and its plan.
///
/// Masked patches are zeroed in pixel space (their tokens are also replaced
/// by the mask token inside the model); only visible patches receive k-space
/// noise.
pub fn pretrain_input(
    clean: &Tensor,
    patch: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(Tensor, MaskPlan)> {
    let [_, h, w] = clean.dims3()?;
    if h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(format!(
            "patch size {patch} does not divide {h}x{w}"
        )));
    }
    let plan = if cfg.toggles.inv_freq_mask {
        plan_mask(&edge_energy_mean(clean)?, patch, cfg.p_base, cfg.tau, rng)?
    } else {
        plan_uniform((h / patch, w / patch), patch, cfg.p_base, rng)?
    };
    let noisy = if cfg.toggles.fft_noise {
        noise_patches(clean, patch, &cfg.noise, |k| !plan.decisions[k], rng)?
    } else {
        clean.clone()
    };
    Ok((plan.blank_masked(&noisy)?, plan))
}

/// Copy of `image` with every channel except `keep` zeroed.
pub fn isolate_channel(image: &Tensor, keep: usize) -> Result<Tensor> {
    let [c, h, w] = image.dims3()?;
    if keep >= c {
        return Err(Error::shape(format!(
            "channel {keep} out of range for {c} channels"
        )));
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    out.data_mut()[keep * h * w..(keep + 1) * h * w]
        .copy_from_slice(&image.data()[keep * h * w..(keep + 1) * h * w]);
    Ok(out)
}

fn pretrain_sample(
    model: &Sspformer,
    clean: &Tensor,
    cfg: &TrainConfig,
    mut rng: Rng,
) -> Result<SampleGrad> {
    let mc = model.config();
    let (input, plan) = pretrain_input(clean, mc.patch, cfg, &mut rng)?;
    let target = clean.leading_channels(mc.out_channels)?;

    let mut tape = Tape::new();
    let mut b = Binder::new(model.params());
    let fwd = model.forward(&mut tape, &mut b, &input, PRETRAIN_TASK, Some(&plan))?;
    let sup = recon_loss_var(
        &mut tape,
        fwd.output,
        &target,
        Some(&plan),
        cfg.loss.recon_norm,
    )?;

    let channels = input.dims()[0];
    let mut loss = sup;
    let mut con_value = 0.0;
    if cfg.toggles.freq_att && channels >= 2 && !cfg.loss.consistency_pairs.is_empty() {
        let embed = |tape: &mut Tape, b: &mut Binder, ch: usize| -> Result<_> {
            let isolated = isolate_channel(&input, ch)?;
            let (enc, _) = model.encode(tape, b, &isolated, PRETRAIN_TASK, Some(&plan))?;
            tape.mean_rows(enc)
        };
        let mut con = None;
        for &(a, c) in &cfg.loss.consistency_pairs {
            let ea = embed(&mut tape, &mut b, a)?;
            let ec = embed(&mut tape, &mut b, c)?;
            let d = tape.cosine_distance(ea, ec)?;
            con = Some(match con {
                None => d,
                Some(acc) => tape.add(acc, d)?,
            });
        }
        let con = tape.scale(
            con.expect("at least one pair"),
            1.0 / cfg.loss.consistency_pairs.len() as f64,
        );
        con_value = tape.value(con).item();
        let weighted = tape.scale(con, cfg.loss.lambda_contrastive);
        loss = tape.add(sup, weighted)?;
    }
    let total = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    Ok(SampleGrad {
        sup: tape.value(sup).item(),
        con: con_value,
        total,
        masked_fraction: plan.masked_fraction(),
        grads: b.collect(&mut grads),
    })
}

fn reduce(
    step: usize,
    lr: f64,
    seed: u64,
    parts: Vec<SampleGrad>,
) -> Result<(StepReport, BTreeMap<String, Tensor>)> {
    let n = parts.len() as f64;
    let mut report = StepReport {
        step,
        lr,
        sup: 0.0,
        con: 0.0,
        total: 0.0,
        masked_fraction: 0.0,
    };
    let mut sum: BTreeMap<String, Tensor> = BTreeMap::new();
    for (i, part) in parts.into_iter().enumerate() {
        if !part.total.is_finite() || part.grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss or gradient at step {step}, sample {i} (batch seed {seed}, sample seed {})",
                sample_rng(seed, step, i).seed()
            )));
        }
        report.sup += part.sup;
        report.con += part.con;
        report.total += part.total;
        report.masked_fraction += part.masked_fraction;
        for (path, g) in part.grads {
            match sum.get_mut(&path) {
                Some(acc) => acc.axpy(1.0, &g)?,
                None => {
                    sum.insert(path, g);
                }
            }
        }
    }
    report.sup /= n;
    report.con /= n;
    report.total /= n;
    report.masked_fraction /= n;
    for g in sum.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((report, sum))
}

/// Masked reconstruction (plus weighted consistency when `freq_att` is on)
/// on a batch of clean images, then one Adam update at `lr_at(step)`.
pub fn pretrain_step(
    model: &mut Sspformer,
    optimizer: &mut Adam,
    batch: &[Tensor],
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::contract("empty pretraining batch"));
    }
    cfg.loss.validate(model.config().in_channels)?;
    let lr = lr_at(step, cfg);
    let shared: &Sspformer = model;
    let parts = pool().install(|| {
        batch
            .par_iter()
            .enumerate()
            .map(|(i, x)| pretrain_sample(shared, x, cfg, sample_rng(cfg.seed, step, i)))
            .collect::<Result<Vec<_>>>()
    })?;
    let (report, grads) = reduce(step, lr, cfg.seed, parts)?;
    optimizer.step(model.params_mut(), &grads, lr)?;
    Ok(report)
}

/// Fails unless every encoder parameter is frozen.
pub fn check_frozen_encoder(model: &Sspformer) -> Result<()> {
    let open: Vec<&str> = model
        .params()
        .iter()
        .filter(|(path, p)| path_matches(path, ENCODER_PREFIX) && p.trainable)
        .map(|(path, _)| path)
        .collect();
    if let Some(first) = open.first() {
        return Err(Error::contract(format!(
            "fine-tuning requires a frozen encoder; {} trainable encoder tensors, first `{first}`",
            open.len()
        )));
    }
    Ok(())
}

fn finetune_sample(model: &Sspformer, sample: &Sample, task: TaskKind) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let mut b = Binder::new(model.params());
    let fwd = model.forward(&mut tape, &mut b, &sample.input, task, None)?;
    let loss = match (&sample.target, task) {
        (Target::Labels(labels), TaskKind::Segment) => tape.cross_entropy(fwd.output, labels)?,
        (Target::Image(target), t) if t != TaskKind::Segment => {
            recon_loss_var(&mut tape, fwd.output, target, None, ReconNorm::AllPixels)?
        }
        _ => {
            return Err(Error::contract(format!(
                "target kind does not match task `{task}`"
            )))
        }
    };
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    Ok(SampleGrad {
        sup: value,
        con: 0.0,
        total: value,
        masked_fraction: 0.0,
        grads: b.collect(&mut grads),
    })
}

/// Task loss (MSE, or cross-entropy for segmentation) with a frozen encoder,
/// then one Adam update at `lr`.
pub fn finetune_step(
    model: &mut Sspformer,
    optimizer: &mut Adam,
    batch: &[Sample],
    task: TaskKind,
    lr: f64,
    step: usize,
) -> Result<StepReport> {
    check_frozen_encoder(model)?;
    if batch.is_empty() {
        return Err(Error::contract("empty fine-tuning batch"));
    }
    let shared: &Sspformer = model;
    let parts = pool().install(|| {
        batch
            .par_iter()
            .map(|s| finetune_sample(shared, s, task))
            .collect::<Result<Vec<_>>>()
    })?;
    let (report, grads) = reduce(step, lr, 0, parts)?;
    optimizer.step(model.params_mut(), &grads, lr)?;
    Ok(report)
}

/// Mean task loss over `samples` without updating anything.
pub fn evaluate_loss(model: &Sspformer, samples: &[Sample], task: TaskKind) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let mut b = Binder::new(model.params());
        let fwd = model.forward(&mut tape, &mut b, &s.input, task, None)?;
        total += match &s.target {
            Target::Labels(l) => {
                let v = tape.cross_entropy(fwd.output, l)?;
                tape.value(v).item()
            }
            Target::Image(t) => {
                super::loss::recon_loss(tape.value(fwd.output), t, None, ReconNorm::AllPixels)?
            }
        };
    }
    Ok(total / samples.len().max(1) as f64)
}
