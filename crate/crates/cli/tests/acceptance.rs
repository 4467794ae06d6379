//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Criteria 7 and 9 train the desk configuration end to end and dominate the
//! runtime (a few minutes per experiment on one core).

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use sspformer::augment::{
    edge_energy, kspace_noise_with, noise_patches, plan_mask, radial_weight, NoiseSpec, Tier,
    WeightKind,
};
use sspformer::autodiff::{finite_diff_grad, gradient_check, Tape, Var};
use sspformer::config::RunConfig;
use sspformer::data::{add_gaussian_noise, phantom_generate};
use sspformer::fft::{fft2, ifft2};
use sspformer::metrics::{dice, hd95, psnr, ssim_default};
use sspformer::model::{
    path_matches, Binder, InitMode, ModelConfig, Sspformer, TaskKind, ENCODER_PREFIX,
};
use sspformer::ops::Padding;
use sspformer::pipeline::{run_experiment, Dataset};
use sspformer::train::{
    finetune_step, pretrain_step, Adam, Sample, Target, Toggles, TrainConfig, LAMBDA_GRID,
};
use sspformer::{Complex64, ComplexTensor, Result, Rng, Tensor};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn randn(rng: &mut Rng, dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims, |_| rng.normal())
}

fn sspf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sspf"))
        .args(args)
        .output()
        .expect("spawn sspf")
}

fn sha_file(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap_or_default()).to_vec()
}

fn sha_params(model: &Sspformer, prefix: &str) -> Vec<u8> {
    let mut h = Sha256::new();
    for (path, p) in model
        .params()
        .iter()
        .filter(|(path, _)| path_matches(path, prefix))
    {
        h.update(path.as_bytes());
        h.update(p.value.to_le_bytes());
    }
    h.finalize().to_vec()
}

// 1 ---------------------------------------------------------------------------

fn direct_dft(x: &ComplexTensor) -> ComplexTensor {
    let (h, w) = (x.dims()[0], x.dims()[1]);
    let tau = -2.0 * std::f64::consts::PI;
    let data = (0..h * w)
        .map(|k| {
            let (u, v) = ((k / w) as f64, (k % w) as f64);
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..h {
                for n in 0..w {
                    let phase = tau * (u * m as f64 / h as f64 + v * n as f64 / w as f64);
                    acc += x.data()[m * w + n] * Complex64::from_polar(1.0, phase);
                }
            }
            acc
        })
        .collect();
    ComplexTensor::new(&[h, w], data).unwrap()
}

fn complex_norm(data: &[Complex64]) -> f64 {
    data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn fft_correctness() -> Verdict {
    let sizes = [4, 8, 16, 32, 64];
    let mut rng = Rng::new(1);
    let (mut round, mut parseval) = (0.0f64, 0.0f64);
    for &h in &sizes {
        for &w in &sizes {
            let data = (0..h * w)
                .map(|_| Complex64::new(rng.normal(), rng.normal()))
                .collect();
            let x = ComplexTensor::new(&[h, w], data).unwrap();
            let f = fft2(&x).unwrap();
            let back = ifft2(&f).unwrap();
            let diff: Vec<Complex64> = back
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| a - b)
                .collect();
            round = round.max(complex_norm(&diff) / complex_norm(x.data()));
            let ex = complex_norm(x.data()).powi(2);
            let ef = complex_norm(f.data()).powi(2) / (h * w) as f64;
            parseval = parseval.max((ex - ef).abs() / ex);
        }
    }
    let data = (0..64)
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    let x = ComplexTensor::new(&[8, 8], data).unwrap();
    let (fast, slow) = (fft2(&x).unwrap(), direct_dft(&x));
    let diff: Vec<Complex64> = fast
        .data()
        .iter()
        .zip(slow.data())
        .map(|(a, b)| a - b)
        .collect();
    let oracle = complex_norm(&diff) / complex_norm(slow.data());
    verdict(
        round <= 1e-10 && parseval <= 1e-9 && oracle <= 1e-9,
        format!("round trip {round:.2e}, Parseval {parseval:.2e}, direct DFT {oracle:.2e}"),
    )
}

// 2 ---------------------------------------------------------------------------

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn op_cases() -> Vec<(&'static str, Build, Vec<Vec<usize>>)> {
    let mask: Vec<bool> = (0..24).map(|i| i % 6 != 1 && i % 6 != 4).collect();
    let s = |d: &[&[usize]]| d.iter().map(|x| x.to_vec()).collect::<Vec<_>>();
    vec![
        (
            "add",
            Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])),
            s(&[&[3, 4], &[3, 4]]),
        ),
        (
            "sub",
            Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1])),
            s(&[&[3, 4], &[3, 4]]),
        ),
        (
            "mul",
            Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])),
            s(&[&[2, 5], &[2, 5]]),
        ),
        (
            "scale",
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.scale(v[0], -1.7))),
            s(&[&[6]]),
        ),
        (
            "gelu",
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.gelu(v[0]))),
            s(&[&[4, 3]]),
        ),
        (
            "sigmoid",
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.sigmoid(v[0]))),
            s(&[&[4, 3]]),
        ),
        (
            "sum",
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.sum(v[0]))),
            s(&[&[2, 3, 2]]),
        ),
        (
            "add_row",
            Box::new(|t: &mut Tape, v: &[Var]| t.add_row(v[0], v[1])),
            s(&[&[5, 3], &[3]]),
        ),
        (
            "add_channel",
            Box::new(|t: &mut Tape, v: &[Var]| t.add_channel(v[0], v[1])),
            s(&[&[3, 4, 4], &[3]]),
        ),
        (
            "matmul",
            Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])),
            s(&[&[3, 4], &[4, 2]]),
        ),
        (
            "transpose",
            Box::new(|t: &mut Tape, v: &[Var]| t.transpose(v[0])),
            s(&[&[3, 5]]),
        ),
        (
            "reshape",
            Box::new(|t: &mut Tape, v: &[Var]| t.reshape(v[0], &[6, 2])),
            s(&[&[3, 4]]),
        ),
        (
            "slice_cols",
            Box::new(|t: &mut Tape, v: &[Var]| t.slice_cols(v[0], 1, 2)),
            s(&[&[4, 5]]),
        ),
        (
            "concat_cols",
            Box::new(|t: &mut Tape, v: &[Var]| t.concat_cols(&[v[0], v[1], v[0]])),
            s(&[&[3, 2], &[3, 4]]),
        ),
        (
            "select_rows",
            Box::new(|t: &mut Tape, v: &[Var]| t.select_rows(v[0], &[2, 0, 2])),
            s(&[&[4, 3]]),
        ),
        (
            "replace_rows",
            Box::new(|t: &mut Tape, v: &[Var]| {
                t.replace_rows(v[0], v[1], &[true, false, true, false])
            }),
            s(&[&[4, 3], &[3]]),
        ),
        (
            "mean_rows",
            Box::new(|t: &mut Tape, v: &[Var]| t.mean_rows(v[0])),
            s(&[&[5, 3]]),
        ),
        (
            "conv2d same",
            Box::new(|t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], Padding::Same)),
            s(&[&[2, 5, 6], &[3, 2, 3, 3]]),
        ),
        (
            "conv2d valid",
            Box::new(|t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], Padding::Valid)),
            s(&[&[2, 5, 6], &[3, 2, 3, 2]]),
        ),
        (
            "pixel_shuffle",
            Box::new(|t: &mut Tape, v: &[Var]| t.pixel_shuffle(v[0], 2)),
            s(&[&[8, 3, 2]]),
        ),
        (
            "patchify",
            Box::new(|t: &mut Tape, v: &[Var]| t.patchify(v[0], 2)),
            s(&[&[3, 4, 6]]),
        ),
        (
            "unpatchify",
            Box::new(|t: &mut Tape, v: &[Var]| t.unpatchify(v[0], 3, 2, (2, 3))),
            s(&[&[6, 12]]),
        ),
        (
            "softmax_rows",
            Box::new(|t: &mut Tape, v: &[Var]| t.softmax_rows(v[0])),
            s(&[&[3, 5]]),
        ),
        (
            "icn",
            Box::new(move |t: &mut Tape, v: &[Var]| t.icn(v[0], &mask, 1e-5)),
            s(&[&[6, 4]]),
        ),
        (
            "freq_gate",
            Box::new(|t: &mut Tape, v: &[Var]| t.freq_gate(v[0], (3, 3))),
            s(&[&[9, 2]]),
        ),
        (
            "cosine_distance",
            Box::new(|t: &mut Tape, v: &[Var]| t.cosine_distance(v[0], v[1])),
            s(&[&[7], &[7]]),
        ),
        (
            "masked_mse",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let target = Tensor::from_fn(&[2, 3, 3], |k| (k as f64 * 0.7).sin());
                t.masked_mse(
                    v[0],
                    &target,
                    (0..18).map(|i| f64::from(u8::from(i % 3 != 0))).collect(),
                )
            }),
            s(&[&[2, 3, 3]]),
        ),
        (
            "cross_entropy",
            Box::new(|t: &mut Tape, v: &[Var]| {
                t.cross_entropy(v[0], &(0..12).map(|i| i % 3).collect::<Vec<_>>())
            }),
            s(&[&[3, 3, 4]]),
        ),
    ]
}

fn model_gradient_error(seed: u64) -> f64 {
    let cfg = ModelConfig::reduced();
    let mut rng = Rng::new(seed);
    let model = Sspformer::new(
        cfg.clone(),
        &[TaskKind::Denoise],
        InitMode::Random,
        &mut rng,
    )
    .unwrap();
    let input = Tensor::from_fn(&[cfg.in_channels, 16, 16], |_| rng.uniform());
    let projection = randn(&mut rng, &[cfg.out_channels, 16, 16]);
    let value = |m: &Sspformer| {
        let mut tape = Tape::new();
        let mut b = Binder::new(m.params());
        let out = m
            .forward(&mut tape, &mut b, &input, TaskKind::Denoise, None)
            .unwrap()
            .output;
        tape.value(out)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, p)| a * p)
            .sum::<f64>()
    };
    let mut tape = Tape::new();
    let mut b = Binder::new(model.params());
    let out = model
        .forward(&mut tape, &mut b, &input, TaskKind::Denoise, None)
        .unwrap()
        .output;
    let w = tape.constant(projection.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    let mut grads = tape.backward(loss).unwrap();
    let analytic = b.collect(&mut grads);

    let paths: Vec<String> = model
        .params()
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(p, _)| p.to_string())
        .collect();
    let model = RefCell::new(model);
    let (mut diff, mut num, mut ana) = (0.0, 0.0, 0.0);
    for path in &paths {
        let orig = model.borrow().params().value(path).unwrap().clone();
        let numeric = finite_diff_grad(
            |x| {
                *model.borrow_mut().params_mut().value_mut(path).unwrap() = x.clone();
                value(&model.borrow())
            },
            &orig,
            1e-5,
        );
        *model.borrow_mut().params_mut().value_mut(path).unwrap() = orig;
        let a = analytic
            .get(path)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(numeric.dims()));
        diff += a
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>();
        num += numeric.norm().powi(2);
        ana += a.norm().powi(2);
    }
    diff.sqrt() / num.sqrt().max(ana.sqrt())
}

fn gradient_suite() -> Verdict {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut worst = ("", 0.0f64);
    for (name, build, shapes) in op_cases() {
        for &seed in &seeds {
            let mut rng = Rng::new(seed * 7919);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| randn(&mut rng, s)).collect();
            let e = gradient_check(&build, &inputs, 1e-5, seed).unwrap_or(f64::INFINITY);
            if e > worst.1 {
                worst = (name, e);
            }
        }
    }
    let model = seeds
        .iter()
        .map(|&s| model_gradient_error(s))
        .fold(0.0f64, f64::max);
    verdict(
        worst.1 < 1e-4 && model < 1e-4,
        format!(
            "worst op {} at {:.2e}, reduced model {:.2e} over {} seeds",
            worst.0,
            worst.1,
            model,
            seeds.len()
        ),
    )
}

// 3 ---------------------------------------------------------------------------

fn masking_statistics() -> Verdict {
    let mut rng = Rng::new(11);
    let image = Tensor::from_fn(&[400, 400], |_| rng.uniform());
    let plan = plan_mask(
        &edge_energy(&image).unwrap(),
        4,
        0.25,
        0.75,
        &mut Rng::new(12),
    )
    .unwrap();
    let high: Vec<f64> = plan
        .tiers
        .iter()
        .zip(&plan.probs)
        .filter(|(t, _)| **t == Tier::HighEdge)
        .map(|(_, &p)| p)
        .collect();
    let exact = !high.is_empty() && high.iter().all(|&p| p == 0.125);
    let n = plan.len() as f64;
    let sd = (0.25 * 0.75 / n).sqrt();
    let got = plan.masked_fraction();
    verdict(
        exact && plan.len() == 10_000 && (got - 0.25).abs() <= 3.0 * sd,
        format!(
            "{} draws, high-tier p = 0.125 on {} patches, masked {got:.4} vs 0.25 +/- {:.4}",
            plan.len(),
            high.len(),
            3.0 * sd
        ),
    )
}

// 4 ---------------------------------------------------------------------------

fn noise_spectrum() -> Verdict {
    let mut rng = Rng::new(5);
    let patch = Tensor::from_fn(&[16, 16], |_| rng.uniform());
    let spec = NoiseSpec {
        lambda: 0.3,
        sigma: 0.1,
        weight_kind: WeightKind::Linear,
        seed: 0,
    };
    let clean = fft2(&patch.to_complex()).unwrap();
    let weight = radial_weight(16, 16, spec.weight_kind);
    let mut power = vec![0.0; 256];
    let mut mean_drift = 0.0f64;
    let mut rng = Rng::new(99);
    let draws = 10_000;
    for _ in 0..draws {
        let noisy = kspace_noise_with(&patch, &spec, &mut rng).unwrap();
        mean_drift = mean_drift.max((noisy.mean() - patch.mean()).abs());
        let f = fft2(&noisy.to_complex()).unwrap();
        for (acc, (a, b)) in power.iter_mut().zip(f.data().iter().zip(clean.data())) {
            *acc += (a - b).norm_sqr();
        }
    }
    let mut worst = 0.0f64;
    for k in 0..256 {
        let want = 2.0
            * spec.sigma.powi(2)
            * spec.lambda.powi(2)
            * clean.data()[k].norm_sqr()
            * weight.data()[k].powi(2);
        if want > 0.0 {
            worst = worst.max((power[k] / draws as f64 / want - 1.0).abs());
        }
    }
    let zero = NoiseSpec {
        lambda: 0.0,
        ..spec
    };
    let identical = kspace_noise_with(&patch, &zero, &mut Rng::new(1))
        .unwrap()
        .to_le_bytes()
        == patch.to_le_bytes();
    let image = patch.clone().reshape(&[1, 16, 16]).unwrap();
    let identical = identical
        && noise_patches(&image, 4, &zero, |_| true, &mut Rng::new(2))
            .unwrap()
            .to_le_bytes()
            == image.to_le_bytes();
    verdict(
        worst < 0.05 && identical && mean_drift < 1e-9,
        format!("worst bin deviation {:.2}%, lambda=0 identical {identical}, mean drift {mean_drift:.1e}", 100.0 * worst),
    )
}

// 5 ---------------------------------------------------------------------------

fn two_channel_batch(n: usize, seed: u64) -> Vec<Tensor> {
    (0..n)
        .map(|i| {
            let v = phantom_generate(&mut Rng::derive(seed, i as u64), 32, 32)
                .unwrap()
                .volume;
            sspformer::data::degrade_sr(&v.leading_channels(2).unwrap(), 2).unwrap()
        })
        .collect()
}

fn lambda_composition(tmp: &Path) -> Verdict {
    let batch = two_channel_batch(2, 1);
    let base = TrainConfig {
        epochs: 4,
        steps_per_epoch: 2,
        warmup_epochs: 1,
        batch_size: 2,
        lr0: 1e-3,
        seed: 17,
        ..TrainConfig::default()
    };
    let mut with_con = base.clone();
    with_con.loss.lambda_contrastive = 0.0;
    with_con.toggles = Toggles::FULL;
    let mut sup_only = with_con.clone();
    sup_only.toggles.freq_att = false;
    let make = || {
        Sspformer::new(
            ModelConfig::reduced(),
            &[TaskKind::Denoise],
            InitMode::Random,
            &mut Rng::new(3),
        )
        .unwrap()
    };
    let (mut a, mut b) = (make(), make());
    let (mut oa, mut ob) = (Adam::new(), Adam::new());
    let mut loss_bits = true;
    for step in 0..2 {
        let ra = pretrain_step(&mut a, &mut oa, &batch, &with_con, step).unwrap();
        let rb = pretrain_step(&mut b, &mut ob, &batch, &sup_only, step).unwrap();
        loss_bits &=
            ra.total.to_bits() == rb.total.to_bits() && rb.total.to_bits() == rb.sup.to_bits();
    }
    let step_bits = sha_params(&a, "") == sha_params(&b, "");

    let dir = tmp.join("sweep");
    let out = sspf(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "--set",
        "preset=reduced",
        "--set",
        "data.count=6",
        "--set",
        "data.heldout=2",
        "--set",
        "train.epochs=3",
        "--set",
        "train.steps_per_epoch=2",
        "--set",
        "train.warmup_epochs=1",
        "--set",
        "train.batch_size=2",
        "--set",
        "finetune.steps=2",
        "--set",
        "finetune.batch_size=2",
        "pretrain",
        "--sweep",
        "lambda=0,0.1,0.2,0.3,0.5",
    ]);
    let grid: Vec<f64> = fs::read_to_string(dir.join("sweep.csv"))
        .unwrap_or_default()
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next()?.parse().ok())
        .collect();
    let sweep_ok = out.status.success() && grid == LAMBDA_GRID;
    verdict(
        loss_bits && step_bits && sweep_ok,
        format!(
            "loss bits equal {loss_bits}, step bits equal {step_bits}, CLI sweep grid {grid:?}"
        ),
    )
}

// 6 ---------------------------------------------------------------------------

fn finetune_integrity() -> Verdict {
    let mut model = Sspformer::new(
        ModelConfig::reduced(),
        &[TaskKind::Denoise],
        InitMode::Random,
        &mut Rng::new(7),
    )
    .unwrap();
    model.params_mut().freeze(ENCODER_PREFIX).unwrap();
    let samples: Vec<Sample> = two_channel_batch(2, 9)
        .into_iter()
        .enumerate()
        .map(|(i, clean)| Sample {
            input: add_gaussian_noise(&clean, 0.1, &mut Rng::new(i as u64)).unwrap(),
            target: Target::Image(clean.leading_channels(1).unwrap()),
        })
        .collect();
    let parts = ["encoder", "decoder", "tail.denoise"];
    let before: BTreeMap<&str, Vec<u8>> =
        parts.iter().map(|&p| (p, sha_params(&model, p))).collect();
    let mut opt = Adam::new();
    for step in 0..100 {
        finetune_step(
            &mut model,
            &mut opt,
            &samples,
            TaskKind::Denoise,
            1e-3,
            step,
        )
        .unwrap();
    }
    let same = sha_params(&model, "encoder") == before["encoder"];
    let moved = ["decoder", "tail.denoise"]
        .iter()
        .all(|&p| sha_params(&model, p) != before[p]);
    verdict(
        same && moved,
        format!("100 steps: encoder hash unchanged {same}, decoder and tail changed {moved}"),
    )
}

// 7 ---------------------------------------------------------------------------

fn learning_signal(tmp: &Path) -> (Verdict, Option<f64>) {
    let cfg = RunConfig::default();
    let shape_ok = cfg.train.lr0 == 5e-5
        && cfg.train.total_steps() == 300
        && cfg.data.size == 64
        && cfg.data.count - cfg.data.heldout == 64
        && cfg.data.heldout == 16
        && cfg.finetune.sigma == 0.10;
    let start = Instant::now();
    let outcome =
        Dataset::from_config(&cfg).and_then(|data| run_experiment(&cfg, &data, &tmp.join("desk")));
    let elapsed = start.elapsed();
    match outcome {
        Ok(o) => {
            let gain = o.psnr - o.identity_psnr;
            let pass = shape_ok
                && o.reduction_ratio <= 0.5
                && gain >= 1.0
                && elapsed < Duration::from_secs(15 * 60);
            let detail = format!(
                "L_sup smoothed ratio {:.3} (<= 0.5), PSNR {:.2} dB vs identity {:.2} dB (+{gain:.2}), {:.0} s",
                o.reduction_ratio,
                o.psnr,
                o.identity_psnr,
                elapsed.as_secs_f64()
            );
            (verdict(pass, detail), Some(o.psnr))
        }
        Err(e) => (verdict(false, format!("experiment failed: {e}")), None),
    }
}

// 8 ---------------------------------------------------------------------------

fn surface(m: &[bool], h: usize, w: usize) -> Vec<(f64, f64)> {
    let inside = |i: i64, j: i64| {
        i >= 0 && j >= 0 && i < h as i64 && j < w as i64 && m[i as usize * w + j as usize]
    };
    let mut out = Vec::new();
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            if inside(i, j)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(a, b)| !inside(i + a, j + b))
            {
                out.push((i as f64, j as f64));
            }
        }
    }
    out
}

fn hd95_oracle(a: &[bool], b: &[bool], h: usize, w: usize) -> f64 {
    let (sa, sb) = (surface(a, h, w), surface(b, h, w));
    let near = |p: &(f64, f64), s: &[(f64, f64)]| {
        s.iter()
            .map(|q| (p.0 - q.0).hypot(p.1 - q.1))
            .fold(f64::INFINITY, f64::min)
    };
    let mut d: Vec<f64> = sa
        .iter()
        .map(|p| near(p, &sb))
        .chain(sb.iter().map(|p| near(p, &sa)))
        .collect();
    d.sort_by(f64::total_cmp);
    let pos = 0.95 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(d.len() - 1);
    d[lo] + (d[hi] - d[lo]) * pos.fract()
}

fn metric_oracles() -> Verdict {
    let mut rng = Rng::new(2024);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (h, w) = (2 + rng.below(31), 2 + rng.below(31));
        let p = rng.uniform_range(0.05, 0.6);
        let mut mask = || {
            let mut m: Vec<bool> = (0..h * w).map(|_| rng.bernoulli(p)).collect();
            let k = rng.below(h * w);
            m[k] = true;
            m
        };
        let (a, b) = (mask(), mask());
        let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count() as f64;
        let size = (a.iter().filter(|&&x| x).count() + b.iter().filter(|&&x| x).count()) as f64;
        let dice_ok = dice(&a, &b).unwrap() == 2.0 * inter / size;
        let hd_ok = (hd95(&a, &b, h, w).unwrap() - hd95_oracle(&a, &b, h, w)).abs() < 1e-9;
        mismatches += usize::from(!(dice_ok && hd_ok));
    }
    let target = Tensor::from_fn(&[3, 16, 16], |k| (k % 7) as f64 / 7.0);
    let p = psnr(&target.map(|v| v + 0.1), &target, 1.0).unwrap();
    let x = phantom_generate(&mut Rng::new(1), 32, 32).unwrap().volume;
    let s = ssim_default(&x, &x, 1.0).unwrap();
    verdict(
        mismatches == 0 && (p - 20.0).abs() <= 1e-9 && s == 1.0,
        format!("{mismatches} oracle mismatches over 100 pairs, PSNR {p:.12} dB, SSIM(x,x) = {s}"),
    )
}

// 9 ---------------------------------------------------------------------------

fn ablation(tmp: &Path, desk_psnr: Option<f64>) -> Verdict {
    let dir = tmp.join("ablate");
    let out = sspf(&["--out-dir", dir.to_str().unwrap(), "pretrain", "--ablate"]);
    if !out.status.success() {
        return verdict(
            false,
            format!(
                "sspf --ablate failed: {}",
                String::from_utf8_lossy(&out.stderr)
            ),
        );
    }
    let csv = fs::read_to_string(dir.join("ablation.csv")).unwrap_or_default();
    let header: Vec<&str> = csv.lines().next().unwrap_or("").split(',').collect();
    let col = header
        .iter()
        .position(|&c| c == "psnr")
        .unwrap_or(usize::MAX);
    let rows: Vec<(String, f64)> = csv
        .lines()
        .skip(1)
        .filter_map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            Some((cells.first()?.to_string(), cells.get(col)?.parse().ok()?))
        })
        .collect();
    let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
    let named = names == ["baseline", "only_fft", "only_mask", "full"];
    let get = |n: &str| rows.iter().find(|(k, _)| k == n).map_or(f64::NAN, |r| r.1);
    let (base, full) = (get("baseline"), get("full"));
    let replay = desk_psnr.map_or(String::new(), |p| {
        format!(", full row matches desk run {}", p == full)
    });
    verdict(
        named && full >= base,
        format!(
            "rows {names:?}; PSNR baseline {base:.2}, only_fft {:.2}, only_mask {:.2}, full {full:.2} dB{replay}",
            get("only_fft"),
            get("only_mask")
        ),
    )
}

// 10 --------------------------------------------------------------------------

fn reproducibility(tmp: &Path) -> Verdict {
    let run = |name: &str, threads: &str| {
        let dir = tmp.join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_sspf"))
            .args([
                "--out-dir",
                dir.to_str().unwrap(),
                "--seed",
                "5",
                "--set",
                "train.epochs=5",
                "--set",
                "train.warmup_epochs=1",
                "pretrain",
            ])
            .env("SSPF_THREADS", threads)
            .output()
            .expect("spawn sspf");
        (
            out.status.success(),
            sha_file(&dir.join("run.csv")),
            sha_file(&dir.join("checkpoint.sspf")),
        )
    };
    let a = run("repro_a", "1");
    let b = run("repro_b", "1");
    let c = run("repro_c", "3");
    let same = a.0 && b.0 && a.1 == b.1 && a.2 == b.2;
    let threads = c.0 && a.1 == c.1 && a.2 == c.2;
    verdict(same, format!("run.csv and checkpoint identical {same}; also identical across thread counts {threads}"))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();
    let mut failures = 0;
    let mut report =
        |n: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Verdict| {
            let start = Instant::now();
            let mut v = f();
            let elapsed = start.elapsed();
            if let Some(limit) = limit {
                if elapsed > limit {
                    v.pass = false;
                    v.detail.push_str(&format!("; exceeded {limit:?}"));
                }
            }
            failures += usize::from(!v.pass);
            println!(
                "{} criterion {n:>2} {name}: {} [{:.1} s]",
                if v.pass { "PASS" } else { "FAIL" },
                v.detail,
                elapsed.as_secs_f64()
            );
        };
    report(1, "fft", Some(Duration::from_secs(5)), &mut fft_correctness);
    report(
        2,
        "gradients",
        Some(Duration::from_secs(120)),
        &mut gradient_suite,
    );
    report(
        3,
        "masking",
        Some(Duration::from_secs(10)),
        &mut masking_statistics,
    );
    report(
        4,
        "k-space noise",
        Some(Duration::from_secs(30)),
        &mut noise_spectrum,
    );
    report(5, "lambda composition", None, &mut || {
        lambda_composition(tmp)
    });
    report(6, "asymmetric fine-tuning", None, &mut finetune_integrity);
    let mut desk = None;
    report(
        7,
        "desk learning signal",
        Some(Duration::from_secs(15 * 60)),
        &mut || {
            let (v, p) = learning_signal(tmp);
            desk = p;
            v
        },
    );
    report(8, "metric oracles", None, &mut metric_oracles);
    report(9, "ablation", None, &mut || ablation(tmp, desk));
    report(10, "reproducibility", None, &mut || reproducibility(tmp));
    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
