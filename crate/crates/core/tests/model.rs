use sspformer::autodiff::Tape;
use sspformer::model::{
    checkpoint, Binder, InitMode, ModelConfig, ParamFilter, Sspformer, TaskKind, TokenContext,
};
use sspformer::{Error, Rng, Tensor};

fn small(channels: usize) -> ModelConfig {
    ModelConfig {
        patch: 4,
        embed_dim: 8,
        encoder_layers: 2,
        decoder_layers: 1,
        heads: 2,
        head_dim: 4,
        channels,
        image_size: 32,
        ffn_ratio: 2,
        init_std: 0.3,
        ..ModelConfig::default()
    }
}

fn build(cfg: ModelConfig, tasks: &[TaskKind], init: InitMode, seed: u64) -> Sspformer {
    Sspformer::new(cfg, tasks, init, &mut Rng::new(seed)).unwrap()
}

#[test]
fn head_and_tail_parameter_counts() {
    let m = build(
        small(32),
        &[TaskKind::Denoise, TaskKind::Sr4],
        InitMode::Random,
        0,
    );
    let p = m.params();
    assert_eq!(
        p.count(ParamFilter::All, "head.denoise"),
        6 * 32 * 9 + 32 + 32 * 32 * 9 + 32
    );
    assert_eq!(p.count(ParamFilter::All, "head.denoise"), 11_008);
    assert_eq!(
        p.count(ParamFilter::All, "tail.denoise"),
        32 * 32 * 9 + 32 + 32 * 3 * 9 + 3
    );
    assert_eq!(p.count(ParamFilter::All, "tail.denoise"), 10_115);
    assert_eq!(
        p.count(ParamFilter::All, "tail.sr4"),
        32 * 32 * 9 + 32 + 32 * 48 * 9 + 48
    );
}

#[test]
fn token_counts() {
    for (size, patch, n) in [(224, 16, 196), (32, 16, 4)] {
        let cfg = ModelConfig {
            patch,
            image_size: 224,
            channels: 2,
            ..small(2)
        };
        let m = build(cfg, &[TaskKind::Denoise], InitMode::Random, 1);
        let mut tape = Tape::new();
        let mut b = Binder::new(m.params());
        let f = tape.constant(Tensor::full(&[2, size, size], 0.5));
        let seq = m.patch_embed(&mut tape, &mut b, f, None).unwrap();
        assert_eq!(tape.value(seq.z0).dims(), &[n, 8]);
        assert_eq!(tape.value(seq.positions).dims(), &[n, 8]);
    }
}

#[test]
fn patch_embed_rejects_indivisible_input() {
    let m = build(small(2), &[TaskKind::Denoise], InitMode::Random, 1);
    let mut tape = Tape::new();
    let mut b = Binder::new(m.params());
    let f = tape.constant(Tensor::zeros(&[2, 10, 12]));
    assert!(matches!(
        m.patch_embed(&mut tape, &mut b, f, None),
        Err(Error::Shape(_))
    ));
}

#[test]
fn zero_input_gives_zero_head_and_tokens() {
    let m = build(small(4), &[TaskKind::Denoise], InitMode::Random, 2);
    let mut tape = Tape::new();
    let mut b = Binder::new(m.params());
    let x = tape.constant(Tensor::zeros(&[6, 8, 12]));
    let f = m
        .head_forward(&mut tape, &mut b, x, TaskKind::Denoise)
        .unwrap();
    assert_eq!(tape.value(f).dims(), &[4, 8, 12]);
    assert_eq!(tape.value(f).norm(), 0.0);
    let seq = m.patch_embed(&mut tape, &mut b, f, None).unwrap();
    assert_eq!(tape.value(seq.z0).norm(), 0.0);
}

fn random_tokens(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[n, d], |_| rng.normal())
}

#[test]
fn zero_residual_encoder_and_decoder_are_identities() {
    let m = build(
        small(4),
        &[TaskKind::Denoise, TaskKind::Sr2],
        InitMode::ZeroResidual,
        3,
    );
    let mut rng = Rng::new(9);
    let z0 = random_tokens(&mut rng, 4, 8);
    let ctx = TokenContext::new((2, 2), vec![true, true, false, true], 8).unwrap();
    let mut tape = Tape::new();
    let mut b = Binder::new(m.params());
    let z = tape.constant(z0.clone());
    let out = m.encoder_forward(&mut tape, &mut b, z, &ctx).unwrap();
    assert_eq!(tape.value(out), &z0);

    // with zero residual branches the decoder reduces to the de-embedding
    let f_d = m
        .decoder_forward(&mut tape, &mut b, z, TaskKind::Denoise, &ctx)
        .unwrap();
    let f_sr = m
        .decoder_forward(&mut tape, &mut b, z, TaskKind::Sr2, &ctx)
        .unwrap();
    assert_eq!(tape.value(f_d), tape.value(f_sr));
    let w = m.params().value("decoder.unembed.weight").unwrap();
    let bias = m.params().value("decoder.unembed.bias").unwrap();
    let pixels = sspformer::ops::matmul(&z0, w).unwrap();
    let pixels = Tensor::from_fn(pixels.dims(), |i| {
        pixels.data()[i] + bias.data()[i % bias.numel()]
    });
    let expected = sspformer::ops::unpatchify(&pixels, 4, 4, 2, 2).unwrap();
    let got = tape.value(f_d);
    assert_eq!(got.dims(), &[4, 8, 8]);
    let diff: f64 = got
        .data()
        .iter()
        .zip(expected.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "decoder differs from de-embedding by {diff}");
}

#[test]
fn msa_block_is_permutation_equivariant() {
    let m = build(small(4), &[TaskKind::Denoise], InitMode::Random, 4);
    let mut rng = Rng::new(10);
    let tokens = random_tokens(&mut rng, 4, 8);
    let positions = random_tokens(&mut rng, 4, 8);
    let perm = [2usize, 0, 3, 1];
    let permute = |t: &Tensor| Tensor::from_fn(&[4, 8], |k| t.data()[perm[k / 8] * 8 + k % 8]);
    let run = |tok: &Tensor, pos: &Tensor| {
        let mut tape = Tape::new();
        let mut b = Binder::new(m.params());
        let a = tape.constant(tok.clone());
        let p = tape.constant(pos.clone());
        let z = tape.add(a, p).unwrap();
        let ctx = TokenContext::new((2, 2), vec![true; 4], 8).unwrap();
        let y = m
            .msa_block(&mut tape, &mut b, "encoder.layer00.attn", z, &ctx)
            .unwrap();
        tape.value(y).clone()
    };
    let direct = permute(&run(&tokens, &positions));
    let permuted = run(&permute(&tokens), &permute(&positions));
    let diff: f64 = direct
        .data()
        .iter()
        .zip(permuted.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "equivariance violated by {diff}");
}

#[test]
fn msa_block_with_zero_output_projection_is_residual() {
    let m = build(small(4), &[TaskKind::Denoise], InitMode::ZeroResidual, 5);
    let z0 = random_tokens(&mut Rng::new(11), 4, 8);
    let mut tape = Tape::new();
    let mut b = Binder::new(m.params());
    let z = tape.constant(z0.clone());
    let ctx = TokenContext::new((2, 2), vec![true; 4], 8).unwrap();
    let y = m
        .msa_block(&mut tape, &mut b, "encoder.layer01.attn", z, &ctx)
        .unwrap();
    assert_eq!(tape.value(y), &z0);
}

#[test]
fn fg_ffn_gate_and_zero_input() {
    let m = build(small(4), &[TaskKind::Denoise], InitMode::Random, 6);
    let mut tape = Tape::new();
    let mut b = Binder::new(m.params());
    let zero = tape.constant(Tensor::zeros(&[4, 8]));
    let y = m
        .fg_ffn(&mut tape, &mut b, "encoder.layer00.ffn", zero, (2, 2))
        .unwrap();
    assert_eq!(tape.value(y).norm(), 0.0);

    let x = tape.constant(random_tokens(&mut Rng::new(12), 8, 8));
    let g = tape.freq_gate(x, (2, 4)).unwrap();
    let g = tape.sigmoid(g);
    assert!(tape.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn icn_hand_statistics_and_shift_invariance() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[4], vec![1.0, 3.0, 100.0, -7.0]).unwrap());
    let mask = [true, true, false, false];
    let y = tape.icn(x, &mask, 1e-5).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] + 1.0 / (1.0 + 1e-5)).abs() < 1e-12);
    assert!((v[1] - 1.0 / (1.0 + 1e-5)).abs() < 1e-12);

    let mut rng = Rng::new(13);
    let base = Tensor::from_fn(&[6, 4], |_| rng.normal());
    let mask: Vec<bool> = (0..24).map(|i| i % 4 != 0).collect();
    let a = tape.constant(base.clone());
    let b = tape.constant(base.map(|v| v + 42.5));
    let ya = tape.icn(a, &mask, 1e-5).unwrap();
    let yb = tape.icn(b, &mask, 1e-5).unwrap();
    for (i, m) in mask.iter().enumerate() {
        if *m {
            assert!((tape.value(ya).data()[i] - tape.value(yb).data()[i]).abs() < 1e-9);
        }
    }

    let c = tape.constant(Tensor::full(&[3, 2], 5.0));
    let yc = tape.icn(c, &[true; 6], 1e-5).unwrap();
    assert_eq!(tape.value(yc).norm(), 0.0);
}

#[test]
fn task_tokens_change_decoder_output() {
    let m = build(
        small(4),
        &[TaskKind::Denoise, TaskKind::Sr2],
        InitMode::Random,
        7,
    );
    let z0 = random_tokens(&mut Rng::new(14), 4, 8);
    let ctx = TokenContext::new((2, 2), vec![true; 4], 8).unwrap();
    let mut tape = Tape::new();
    let mut b = Binder::new(m.params());
    let z = tape.constant(z0);
    let a = m
        .decoder_forward(&mut tape, &mut b, z, TaskKind::Denoise, &ctx)
        .unwrap();
    let s = m
        .decoder_forward(&mut tape, &mut b, z, TaskKind::Sr2, &ctx)
        .unwrap();
    let delta = tape
        .value(a)
        .zip_map(tape.value(s), |x, y| x - y)
        .unwrap()
        .norm();
    assert!(delta > 1e-6, "task tokens had no effect ({delta})");
}

#[test]
fn tail_shapes() {
    let m = build(small(4), &TaskKind::ALL, InitMode::Random, 8);
    let mut tape = Tape::new();
    let mut b = Binder::new(m.params());
    let f = tape.constant(Tensor::from_fn(&[4, 8, 8], |i| (i as f64).sin()));
    let cases = [
        (TaskKind::Sr4, [3, 32, 32]),
        (TaskKind::Sr2, [3, 16, 16]),
        (TaskKind::Denoise, [3, 8, 8]),
        (TaskKind::Segment, [4, 8, 8]),
    ];
    for (task, dims) in cases {
        let y = m.tail_forward(&mut tape, &mut b, f, task).unwrap();
        assert_eq!(tape.value(y).dims(), &dims, "{task}");
    }
}

#[test]
fn unregistered_task_is_a_config_error() {
    let m = build(small(4), &[TaskKind::Denoise], InitMode::Random, 9);
    assert!(matches!(
        m.predict(&Tensor::zeros(&[6, 8, 8]), TaskKind::Sr2),
        Err(Error::Config(_))
    ));
}

#[test]
fn freeze_splits_trainable_counts_and_drops_gradients() {
    let mut m = build(small(4), &[TaskKind::Denoise], InitMode::Random, 10);
    let total = m.params().count(ParamFilter::All, "");
    let encoder = m.params().count(ParamFilter::All, "encoder");
    m.params_mut().freeze("encoder").unwrap();
    let trainable = m.params().count(ParamFilter::Trainable, "");
    let expected: usize = ["head", "decoder", "tail"]
        .iter()
        .map(|p| m.params().count(ParamFilter::All, p))
        .sum();
    assert_eq!(trainable, expected);
    assert_eq!(trainable, total - encoder);
    assert_eq!(m.params().count(ParamFilter::Frozen, ""), encoder);

    let mut tape = Tape::new();
    let mut b = Binder::new(m.params());
    let input = Tensor::from_fn(&[6, 8, 8], |i| (i as f64 * 0.37).cos().abs());
    let fwd = m
        .forward(&mut tape, &mut b, &input, TaskKind::Denoise, None)
        .unwrap();
    let loss = tape.sum(fwd.output);
    let grads = tape.backward(loss).unwrap();
    for (path, var) in b.bound() {
        let frozen = path.starts_with("encoder.");
        assert_eq!(grads.get(var).is_none(), frozen, "{path}");
    }

    m.params_mut().unfreeze("encoder").unwrap();
    assert_eq!(m.params().count(ParamFilter::Trainable, ""), total);
    assert!(matches!(
        m.params_mut().freeze("nothing"),
        Err(Error::Path(_))
    ));
}

#[test]
fn checkpoint_round_trip_and_rejection() {
    let mut m = build(
        small(4),
        &[TaskKind::Denoise, TaskKind::Segment],
        InitMode::Random,
        11,
    );
    m.params_mut().freeze("encoder").unwrap();
    let bytes = checkpoint::encode(&m).unwrap();
    let back = checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(checkpoint::encode(&back).unwrap(), bytes);
    assert!(matches!(
        checkpoint::decode(&bytes[..bytes.len() - 3]),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        checkpoint::decode(b"SSPF0garbage"),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        checkpoint::load("/nonexistent/checkpoint.sspf"),
        Err(Error::Missing(_))
    ));
}

#[test]
fn predict_is_deterministic_and_finite() {
    let m = build(small(4), &[TaskKind::Denoise], InitMode::Random, 12);
    let input = Tensor::from_fn(&[6, 16, 16], |i| ((i * 31) % 17) as f64 / 17.0);
    let a = m.predict(&input, TaskKind::Denoise).unwrap();
    assert_eq!(a, m.predict(&input, TaskKind::Denoise).unwrap());
    assert!(a.is_finite());
}
