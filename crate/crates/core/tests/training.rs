//! Training contracts on the reduced model: loss composition, freezing, schedule and optimizer.

use std::collections::BTreeMap;

use sspformer::autodiff::Tape;
use sspformer::data::{add_gaussian_noise, degrade_sr, phantom_generate};
use sspformer::model::{InitMode, ModelConfig, ParamStore, Sspformer, TaskKind, ENCODER_PREFIX};
use sspformer::train::{
    evaluate_loss, finetune_step, lr_at, pretrain_step, total_loss, Adam, Sample, Target, Toggles,
    TrainConfig,
};
use sspformer::{Error, Rng, Tensor};

fn model(tasks: &[TaskKind], seed: u64) -> Sspformer {
    Sspformer::new(
        ModelConfig::reduced(),
        tasks,
        InitMode::Random,
        &mut Rng::new(seed),
    )
    .unwrap()
}

/// Two-channel phantoms matching the reduced model's input width.
fn clean_images(n: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..n)
        .map(|i| {
            phantom_generate(&mut Rng::derive(seed, i as u64), 32, 32)
                .unwrap()
                .volume
        })
        .map(|v| v.leading_channels(2).unwrap())
        .map(|v| {
            if size == 32 {
                v
            } else {
                degrade_sr(&v, 32 / size).unwrap()
            }
        })
        .collect()
}

fn small_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        steps_per_epoch: 2,
        warmup_epochs: 1,
        batch_size: 2,
        lr0: 1e-3,
        seed: 17,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_lambda_matches_supervised_only_bit_for_bit() {
    let batch = clean_images(2, 16, 1);
    let mut with_con = small_train_config();
    with_con.loss.lambda_contrastive = 0.0;
    with_con.toggles = Toggles::FULL;
    let mut sup_only = with_con.clone();
    sup_only.toggles.freq_att = false;

    let (mut a, mut b) = (
        model(&[TaskKind::Denoise], 3),
        model(&[TaskKind::Denoise], 3),
    );
    let (mut oa, mut ob) = (Adam::new(), Adam::new());
    for step in 0..2 {
        let ra = pretrain_step(&mut a, &mut oa, &batch, &with_con, step).unwrap();
        let rb = pretrain_step(&mut b, &mut ob, &batch, &sup_only, step).unwrap();
        assert!(ra.con > 0.0, "consistency term must still be computed");
        assert_eq!(ra.total.to_bits(), rb.total.to_bits());
        assert_eq!(ra.sup.to_bits(), rb.sup.to_bits());
        assert_eq!(rb.total.to_bits(), rb.sup.to_bits());
    }
    assert_eq!(a.params().digest(""), b.params().digest(""));
    assert_eq!(total_loss(0.25, 7.0, 0.0), 0.25);
}

#[test]
fn positive_lambda_changes_the_step() {
    let batch = clean_images(2, 16, 1);
    let mut cfg = small_train_config();
    cfg.loss.lambda_contrastive = 0.3;
    let mut m = model(&[TaskKind::Denoise], 3);
    let r = pretrain_step(&mut m, &mut Adam::new(), &batch, &cfg, 1).unwrap();
    assert!((r.total - total_loss(r.sup, r.con, 0.3)).abs() < 1e-12);
}

#[test]
fn pretraining_is_deterministic() {
    let batch = clean_images(3, 16, 2);
    let cfg = small_train_config();
    let run = || {
        let mut m = model(&[TaskKind::Denoise], 5);
        let mut opt = Adam::new();
        let reports: Vec<u64> = (0..3)
            .map(|s| {
                pretrain_step(&mut m, &mut opt, &batch, &cfg, s)
                    .unwrap()
                    .total
                    .to_bits()
            })
            .collect();
        (reports, m.params().digest(""))
    };
    assert_eq!(run(), run());
}

fn denoise_samples(n: usize, seed: u64) -> Vec<Sample> {
    clean_images(n, 16, seed)
        .into_iter()
        .enumerate()
        .map(|(i, clean)| Sample {
            input: add_gaussian_noise(&clean, 0.1, &mut Rng::derive(seed + 1, i as u64)).unwrap(),
            target: Target::Image(clean.leading_channels(1).unwrap()),
        })
        .collect()
}

#[test]
fn frozen_encoder_survives_one_hundred_steps() {
    let mut m = model(&[TaskKind::Denoise], 7);
    let samples = denoise_samples(2, 9);
    let mut opt = Adam::new();
    assert!(matches!(
        finetune_step(&mut m, &mut opt, &samples, TaskKind::Denoise, 1e-3, 0),
        Err(Error::Contract(_))
    ));

    m.params_mut().freeze(ENCODER_PREFIX).unwrap();
    let before: BTreeMap<&str, u64> = ["encoder", "decoder", "head.denoise", "tail.denoise"]
        .iter()
        .map(|&p| (p, m.params().digest(p)))
        .collect();
    for step in 0..100 {
        finetune_step(&mut m, &mut opt, &samples, TaskKind::Denoise, 1e-3, step).unwrap();
    }
    assert_eq!(m.params().digest("encoder"), before["encoder"]);
    for p in ["decoder", "head.denoise", "tail.denoise"] {
        assert_ne!(m.params().digest(p), before[p], "{p} did not move");
    }
}

#[test]
fn sr2_finetuning_reduces_its_loss() {
    let mut m = model(&[TaskKind::Sr2], 4);
    m.params_mut().freeze(ENCODER_PREFIX).unwrap();
    let samples: Vec<Sample> = clean_images(4, 16, 21)
        .into_iter()
        .map(|high| Sample {
            input: degrade_sr(&high, 2).unwrap(),
            target: Target::Image(high.leading_channels(1).unwrap()),
        })
        .collect();
    let start = evaluate_loss(&m, &samples, TaskKind::Sr2).unwrap();
    let mut opt = Adam::new();
    let losses: Vec<f64> = (0..200)
        .map(|s| {
            finetune_step(&mut m, &mut opt, &samples, TaskKind::Sr2, 2e-3, s)
                .unwrap()
                .sup
        })
        .collect();
    let end = evaluate_loss(&m, &samples, TaskKind::Sr2).unwrap();
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "windowed loss {head} -> {tail}");
    assert!(end < 0.5 * start, "held loss {start} -> {end}");
}

#[test]
fn perfect_logits_give_vanishing_cross_entropy() {
    let labels: Vec<usize> = (0..64).map(|k| k % 4).collect();
    let logits = Tensor::from_fn(&[4, 8, 8], |k| {
        if labels[k % 64] == k / 64 {
            20.0
        } else {
            -20.0
        }
    });
    let mut tape = Tape::new();
    let x = tape.constant(logits);
    let ce = tape.cross_entropy(x, &labels).unwrap();
    assert!(tape.value(ce).item() < 1e-3);
}

#[test]
fn schedule_endpoints() {
    let cfg = TrainConfig {
        epochs: 10,
        steps_per_epoch: 5,
        warmup_epochs: 2,
        lr0: 5e-5,
        ..TrainConfig::default()
    };
    assert_eq!(lr_at(0, &cfg), 0.0);
    assert!((lr_at(5, &cfg) - 2.5e-5).abs() < 1e-18);
    assert_eq!(lr_at(10, &cfg), 5e-5);
    assert!(lr_at(49, &cfg).abs() < 1e-20);
    let lrs: Vec<f64> = (10..50).map(|s| lr_at(s, &cfg)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    let mid = lr_at(10 + 39 / 2, &cfg);
    assert!(mid > 0.4 * 5e-5 && mid < 0.6 * 5e-5);
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let mut store = ParamStore::new();
    store
        .insert("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true)
        .unwrap();
    let mut grads = BTreeMap::new();
    grads.insert(
        "w".to_string(),
        Tensor::new(&[3], vec![0.3, -4.0, 1e-3]).unwrap(),
    );
    Adam::new().step(&mut store, &grads, 0.01).unwrap();
    let w = store.value("w").unwrap().data().to_vec();
    // Bias-corrected moments: m = g, v = g², so the update is lr · g / (|g| + eps).
    for (got, (w0, g)) in w.iter().zip([(1.0, 0.3), (-2.0, -4.0), (0.5, 1e-3)]) {
        let want: f64 = w0 - 0.01 * g / (f64::abs(g) + 1e-8);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}
