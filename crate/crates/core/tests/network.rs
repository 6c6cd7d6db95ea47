use approx::assert_relative_eq;
use cycnn::conv::{ConvAlgorithm, ConvSpec, FilterBank, PadMode};
use cycnn::dataset::{synth_dataset, Preprocess, Standardizer};
use cycnn::network::*;
use cycnn::polar::{PolarConfig, PolarMode};
use cycnn::tensor::{cyclic_shift_rows, Scalar, Shape, Tensor};
use cycnn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor<T: Scalar>(shape: Shape, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0)))
}

fn conv(spec: ConvSpec, rng: &mut ChaCha8Rng) -> Layer<f64> {
    Layer::Conv {
        filters: FilterBank::init(&spec, rng),
        spec,
    }
}

/// Two convolutions, pooling and one linear layer on 8x8 inputs.
fn tiny_model(seed: u64, pad_mode: PadMode) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c2 = ConvSpec::same3x3(2, 3, pad_mode);
    c2.stride_w = 1;
    let mut layers = vec![
        conv(ConvSpec::same3x3(1, 2, pad_mode), &mut rng),
        Layer::Relu,
        conv(c2, &mut rng),
        Layer::Relu,
        Layer::MaxPool,
        Layer::Flatten,
        Layer::Linear(Linear::init(3 * 4 * 4, 4, &mut rng)),
    ];
    // Non-zero biases so their gradients are exercised too.
    for layer in &mut layers {
        if let Some((_, b)) = layer.params_mut() {
            for v in b {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    Model::new("tiny", (1, 8, 8), layers).unwrap()
}

#[test]
fn zero_weights_give_uniform_softmax() {
    let mut cfg = MiniVggConfig::new(1, 16, 16, 5);
    cfg.base_width = 4;
    cfg.hidden = 8;
    let mut model: Model<f64> = mini_vgg(&cfg, 1).unwrap();
    for layer in &mut model.layers {
        if let Some((w, b)) = layer.params_mut() {
            w.iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let x = random_tensor::<f64>(Shape::new(3, 1, 16, 16), 2);
    let (logits, _) = model.forward(&x, Mode::Eval).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
    for p in softmax(logits.item(0)) {
        assert_relative_eq!(p, 0.2, epsilon = 1e-15);
    }
}

#[test]
fn identity_conv_then_flatten_returns_input() {
    let spec = ConvSpec::same3x3(2, 2, PadMode::Zero);
    let model = Model::new(
        "id",
        (2, 5, 4),
        vec![
            Layer::Conv {
                filters: FilterBank::identity(&spec),
                spec,
            },
            Layer::Flatten,
        ],
    )
    .unwrap();
    let x = random_tensor::<f64>(Shape::new(2, 2, 5, 4), 3);
    let (y, _) = model.forward(&x, Mode::Eval).unwrap();
    assert_eq!(y.shape(), Shape::new(2, 40, 1, 1));
    assert_eq!(y.data(), x.data());
}

#[test]
fn single_and_double_precision_agree() {
    let mut cfg = MiniVggConfig::new(1, 32, 32, 10);
    cfg.base_width = 8;
    cfg.hidden = 32;
    let m64: Model<f64> = mini_vgg(&cfg, 7).unwrap();
    let m32: Model<f32> = m64.cast();
    let x = random_tensor::<f64>(Shape::new(2, 1, 32, 32), 8);
    let (y64, _) = m64.forward(&x, Mode::Train).unwrap();
    let (y32, _) = m32.forward(&x.cast(), Mode::Train).unwrap();
    assert!(y64.is_finite());
    assert!(y64.max_abs_diff(&y32.cast()).unwrap() < 1e-3);
}

#[test]
fn mismatched_input_names_the_layer() {
    let model = tiny_model(1, PadMode::Zero);
    let err = model
        .forward(&Tensor::zeros(Shape::new(1, 2, 8, 8)), Mode::Eval)
        .unwrap_err();
    assert!(
        matches!(
            err,
            Error::Layer {
                index: 0,
                kind: "conv",
                ..
            }
        ),
        "{err}"
    );

    let spec = ConvSpec::same3x3(1, 2, PadMode::Zero);
    let bad = Model::<f64>::new(
        "bad",
        (1, 4, 4),
        vec![
            Layer::Conv {
                filters: FilterBank::zeros(&spec),
                spec,
            },
            Layer::Flatten,
            Layer::Linear(Linear::zeros(31, 2)),
        ],
    );
    match bad {
        Err(Error::Layer {
            index,
            kind,
            message,
        }) => {
            assert_eq!((index, kind), (2, "linear"));
            assert!(message.contains("32"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn winograd_layers_need_even_maps() {
    let spec =
        ConvSpec::same3x3(1, 1, PadMode::Cylindrical).with_algorithm(ConvAlgorithm::Winograd);
    let layers = vec![Layer::<f64>::Conv {
        filters: FilterBank::identity(&spec),
        spec,
    }];
    assert!(Model::new("w", (1, 6, 6), layers.clone()).is_ok());
    assert!(matches!(
        Model::new("w", (1, 7, 6), layers),
        Err(Error::Layer { index: 0, .. })
    ));
}

#[test]
fn loss_examples() {
    let uniform = Tensor::<f64>::zeros(Shape::new(2, 7, 1, 1));
    let (loss, _) = loss_and_grad(&uniform, &[0, 6]).unwrap();
    assert_relative_eq!(loss, 7f64.ln(), epsilon = 1e-14);

    let mut confident = Tensor::<f64>::zeros(Shape::new(1, 3, 1, 1));
    confident.data_mut()[1] = 1e4;
    let (loss, grad) = loss_and_grad(&confident, &[1]).unwrap();
    assert!(loss.abs() < 1e-12);
    assert!(grad.data().iter().all(|g| g.abs() < 1e-12));

    assert!(matches!(
        loss_and_grad(&uniform, &[0, 7]),
        Err(Error::LabelOutOfRange {
            label: 7,
            classes: 7
        })
    ));
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let logits = random_tensor::<f64>(Shape::new(3, 5, 1, 1), 4).map(|v| 3.0 * v);
    let labels = [4, 0, 2];
    let (_, grad) = loss_and_grad(&logits, &labels).unwrap();
    let eps = 1e-6;
    for i in 0..logits.data().len() {
        let mut plus = logits.clone();
        plus.data_mut()[i] += eps;
        let mut minus = logits.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (loss_and_grad(&plus, &labels).unwrap().0
            - loss_and_grad(&minus, &labels).unwrap().0)
            / (2.0 * eps);
        let analytic = grad.data()[i];
        assert!(
            (numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3),
            "{i}: {numeric} vs {analytic}"
        );
    }
}

#[test]
fn sgd_examples() {
    let mut p = vec![0.3f64, -2.0];
    let mut v = vec![0.0; 2];
    sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0);
    assert_eq!(p, [0.3, -2.0]);

    let mut p = vec![1.0f64];
    let mut v = vec![0.0];
    sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.0, 0.0);
    assert_relative_eq!(p[0], 0.9, epsilon = 1e-15);

    // Two steps by hand: v1 = g1 + wd p0, p1 = p0 - lr v1,
    // v2 = m v1 + g2 + wd p1, p2 = p1 - lr v2.
    let (lr, m, wd) = (0.05, 0.9, 1e-3);
    let (p0, g1, g2) = (0.7f64, 0.2, -0.4);
    let v1 = g1 + wd * p0;
    let p1 = p0 - lr * v1;
    let v2 = m * v1 + g2 + wd * p1;
    let p2 = p1 - lr * v2;
    let mut p = vec![p0];
    let mut v = vec![0.0];
    sgd_step(&mut p, &[g1], &mut v, lr, m, wd);
    sgd_step(&mut p, &[g2], &mut v, lr, m, wd);
    assert_relative_eq!(p[0], p2, epsilon = 1e-15);
    assert_relative_eq!(v[0], v2, epsilon = 1e-15);
}

#[test]
fn six_stale_epochs_halve_the_rate_once() {
    let mut s = PlateauHalving::new(0.05, 5);
    s.observe(1.0);
    let mut lr = 0.0;
    for _ in 0..6 {
        lr = s.observe(1.0);
    }
    assert_eq!(lr, 0.025);
    for _ in 0..4 {
        lr = s.observe(2.0);
    }
    assert_eq!(lr, 0.0125);
    assert_eq!(s.observe(0.5), 0.0125);
}

#[test]
fn early_stopping_counts_whole_epochs() {
    let mut e = EarlyStopping::new(3);
    assert_eq!(e.observe(0.5), (true, false));
    assert_eq!(e.observe(0.5), (false, false));
    assert_eq!(e.observe(0.4), (false, false));
    assert_eq!(e.observe(0.6), (true, false));
    assert_eq!(e.observe(0.6), (false, false));
    assert_eq!(e.observe(0.6), (false, false));
    assert_eq!(e.observe(0.6), (false, true));
}

fn param_vector(model: &Model<f64>) -> Vec<(usize, bool, usize)> {
    let mut out = Vec::new();
    for (li, layer) in model.layers.iter().enumerate() {
        if let Some((w, b)) = layer.params() {
            out.extend((0..w.len()).map(|i| (li, true, i)));
            out.extend((0..b.len()).map(|i| (li, false, i)));
        }
    }
    out
}

fn nudge(model: &mut Model<f64>, (li, is_w, i): (usize, bool, usize), delta: f64) {
    let (w, b) = model.layers[li].params_mut().unwrap();
    if is_w {
        w[i] += delta;
    } else {
        b[i] += delta;
    }
}

fn check_gradients(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize]) {
    let (logits, cache) = model.forward(x, Mode::Train).unwrap();
    let (_, g) = loss_and_grad(&logits, labels).unwrap();
    let grads = model.backward(&cache, &g).unwrap();
    let loss_at = |m: &Model<f64>| {
        loss_and_grad(&m.forward(x, Mode::Train).unwrap().0, labels)
            .unwrap()
            .0
    };
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for p in param_vector(model) {
        let mut plus = model.clone();
        nudge(&mut plus, p, eps);
        let mut minus = model.clone();
        nudge(&mut minus, p, -eps);
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
        let lg = grads.layers[p.0].as_ref().unwrap();
        let analytic = if p.1 { lg.weights[p.2] } else { lg.bias[p.2] };
        let scale = numeric.abs().max(analytic.abs());
        if scale > 1e-7 {
            worst = worst.max((numeric - analytic).abs() / scale);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for mode in [PadMode::Zero, PadMode::Cylindrical] {
        let model = tiny_model(11, mode);
        let x = random_tensor::<f64>(Shape::new(2, 1, 8, 8), 12);
        check_gradients(&model, &x, &[1, 3]);
    }
}

#[test]
fn gradients_through_channel_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layers = vec![
        conv(ConvSpec::same3x3(1, 2, PadMode::Cylindrical), &mut rng),
        Layer::ChannelNorm(ChannelNorm::new(2)),
        Layer::Relu,
        Layer::Flatten,
        Layer::Linear(Linear::init(2 * 4 * 4, 3, &mut rng)),
    ];
    let model = Model::new("norm", (1, 4, 4), layers).unwrap();
    let x = random_tensor::<f64>(Shape::new(3, 1, 4, 4), 6);
    check_gradients(&model, &x, &[0, 2, 1]);
}

#[test]
fn maxpool_ties_route_gradient_to_first_element() {
    let model = Model::<f64>::new("pool", (1, 2, 2), vec![Layer::MaxPool, Layer::Flatten]).unwrap();
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.5, 0.5, 0.5, 0.5]).unwrap();
    let (y, cache) = model.forward(&x, Mode::Train).unwrap();
    assert_eq!(y.data(), [0.5]);
    let g = model
        .backward(
            &cache,
            &Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap(),
        )
        .unwrap();
    assert_eq!(g.input.data(), [1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn count_params_examples() {
    let lin =
        Model::<f64>::new("l", (10, 1, 1), vec![Layer::Linear(Linear::zeros(10, 5))]).unwrap();
    assert_eq!(count_params(&lin), 55);
    for mode in [PadMode::Zero, PadMode::Cylindrical] {
        let spec = ConvSpec::same3x3(2, 4, mode);
        let m = Model::<f64>::new(
            "c",
            (2, 6, 6),
            vec![Layer::Conv {
                filters: FilterBank::zeros(&spec),
                spec,
            }],
        )
        .unwrap();
        assert_eq!(count_params(&m), 76);
    }
}

#[test]
fn conversion_keeps_parameters_and_only_toggles_padding() {
    let cfg = MiniVggConfig::new(1, 32, 32, 10);
    let base: Model<f32> = mini_vgg(&cfg, 3).unwrap();
    let cy = convert_to_cycnn(&base).unwrap();
    assert_eq!(count_params(&base), count_params(&cy));
    for (a, b) in base.layers.iter().zip(&cy.layers) {
        match (a, b) {
            (
                Layer::Conv {
                    spec: sa,
                    filters: fa,
                },
                Layer::Conv {
                    spec: sb,
                    filters: fb,
                },
            ) => {
                assert_eq!(sb.pad_mode, PadMode::Cylindrical);
                assert_eq!(sa.with_pad_mode(PadMode::Cylindrical), *sb);
                assert_eq!(fa, fb);
            }
            (a, b) => assert_eq!(a, b),
        }
    }

    let plain = Model::<f64>::new(
        "mlp",
        (4, 1, 1),
        vec![Layer::Flatten, Layer::Linear(Linear::zeros(4, 2))],
    )
    .unwrap();
    assert_eq!(convert_to_cycnn(&plain).unwrap().layers, plain.layers);
}

#[test]
fn conversion_rejects_size_changing_convs() {
    let mut spec = ConvSpec::same3x3(1, 1, PadMode::Zero);
    spec.pad = 0;
    let m = Model::<f64>::new(
        "valid",
        (1, 6, 6),
        vec![
            Layer::Relu,
            Layer::Conv {
                filters: FilterBank::zeros(&spec),
                spec,
            },
        ],
    )
    .unwrap();
    assert!(matches!(
        convert_to_cycnn(&m),
        Err(Error::Layer {
            index: 1,
            kind: "conv",
            ..
        })
    ));
}

fn cy_stack(pools: usize, seed: u64) -> (Model<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut ch = 2;
    for _ in 0..pools {
        layers.push(conv(ConvSpec::same3x3(ch, 3, PadMode::Zero), &mut rng));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool);
        ch = 3;
    }
    layers.push(conv(ConvSpec::same3x3(ch, 2, PadMode::Zero), &mut rng));
    let flatten_at = layers.len();
    layers.push(Layer::Flatten);
    let side = 16 >> pools;
    layers.push(Layer::Linear(Linear::init(2 * side * side, 3, &mut rng)));
    let base = Model::new("stack", (2, 16, 16), layers).unwrap();
    (convert_to_cycnn(&base).unwrap(), flatten_at)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converted_stack_is_shift_equivariant(seed in 0u64..1000, j in 0i64..8) {
        let (model, flatten_at) = cy_stack(1, seed);
        let x = random_tensor::<f64>(Shape::new(1, 2, 16, 16), seed + 1);
        let a = model.forward_prefix(&cyclic_shift_rows(&x, 2 * j), flatten_at).unwrap();
        let b = cyclic_shift_rows(&model.forward_prefix(&x, flatten_at).unwrap(), j);
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn two_pool_stack_shifts_by_quarter(seed in 0u64..1000, j in 0i64..4) {
        let (model, flatten_at) = cy_stack(2, seed);
        let x = random_tensor::<f64>(Shape::new(1, 2, 16, 16), seed + 2);
        let a = model.forward_prefix(&cyclic_shift_rows(&x, 4 * j), flatten_at).unwrap();
        let b = cyclic_shift_rows(&model.forward_prefix(&x, flatten_at).unwrap(), j);
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn channel_norm_standardizes_training_batches(seed in 0u64..1000, n in 1usize..4, offset in -5.0f64..5.0) {
        let model = Model::<f64>::new("n", (3, 4, 5), vec![Layer::ChannelNorm(ChannelNorm::new(3))]).unwrap();
        let x = random_tensor::<f64>(Shape::new(n, 3, 4, 5), seed).map(|v| 4.0 * v + offset);
        let (y, _) = model.forward(&x, Mode::Train).unwrap();
        let stats = |t: &Tensor<f64>, c: usize| {
            let vals: Vec<f64> = (0..n)
                .flat_map(|i| (0..20).map(move |p| (i, p)))
                .map(|(i, p)| t.get(i, c, p / 5, p % 5))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            (mean, var)
        };
        for c in 0..3 {
            let (mean, var) = stats(&y, c);
            let (_, raw_var) = stats(&x, c);
            prop_assert!(mean.abs() < 1e-6);
            // eps in the denominator scales the variance by var / (var + eps).
            let expected = raw_var / (raw_var + 1e-5);
            prop_assert!((var - expected).abs() < 1e-6, "{} vs {}", var, expected);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn conversion_preserves_param_count(width in 1usize..6, classes in 1usize..12, seed in 0u64..100) {
        let mut cfg = MiniVggConfig::new(1, 16, 16, classes);
        cfg.base_width = width;
        cfg.hidden = 4;
        let m: Model<f32> = mini_vgg(&cfg, seed).unwrap();
        prop_assert_eq!(count_params(&m), count_params(&convert_to_cycnn(&m).unwrap()));
    }
}

#[test]
fn running_stats_move_toward_batch_stats() {
    let mut model = Model::<f64>::new(
        "n",
        (1, 2, 2),
        vec![Layer::ChannelNorm(ChannelNorm::new(1))],
    )
    .unwrap();
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (_, cache) = model.forward(&x, Mode::Train).unwrap();
    model.commit_running_stats(&cache);
    let Layer::ChannelNorm(n) = &model.layers[0] else {
        unreachable!()
    };
    assert_relative_eq!(n.running_mean[0], 0.25, epsilon = 1e-15);
    // Unbiased batch variance 5/3.
    assert_relative_eq!(n.running_var[0], 0.9 + 0.1 * 5.0 / 3.0, epsilon = 1e-15);
}

fn small_cfg(classes: usize) -> MiniVggConfig {
    let mut cfg = MiniVggConfig::new(1, 32, 32, classes);
    cfg.base_width = 4;
    cfg.hidden = 16;
    cfg
}

#[test]
fn one_sample_is_memorized() {
    let ds = synth_dataset(1, 3, 4);
    let model: Model<f32> = mini_vgg(&small_cfg(3), 1).unwrap();
    let cfg = TrainConfig {
        max_epochs: 40,
        early_stop_patience: 100,
        lr_halve_patience: 100,
        lr0: 0.01,
        ..TrainConfig::default()
    };
    let out = train(model, &ds, None, &cfg).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|m| m.train_loss).collect();
    let warmup = 5;
    for w in losses[warmup..].windows(2) {
        assert!(w[1] <= w[0], "{losses:?}");
    }
    assert!(*losses.last().unwrap() < 0.01, "{losses:?}");
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let ds = synth_dataset(60, 3, 4);
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 16,
        seed: 9,
        augment: cycnn::dataset::AugmentMode::RotateTranslate,
        ..TrainConfig::default()
    };
    let polar = Some(PolarConfig::for_image(PolarMode::Polar, 32, 32));
    let run = || {
        let model: Model<f32> = convert_to_cycnn(&mini_vgg(&small_cfg(3), 2).unwrap()).unwrap();
        train(model, &ds, polar, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(metrics_csv(&a.log), metrics_csv(&b.log));
    let bits = |log: &[EpochMetrics]| {
        log.iter()
            .map(|m| (m.train_loss.to_bits(), m.val_loss.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a.log), bits(&b.log));
    assert_eq!(a.model, b.model);
}

#[test]
fn training_rejects_empty_or_mislabeled_data() {
    let empty = synth_dataset(0, 3, 1);
    let model: Model<f32> = mini_vgg(&small_cfg(3), 1).unwrap();
    assert!(matches!(
        train(model.clone(), &empty, None, &TrainConfig::default()),
        Err(Error::EmptyDataset)
    ));
    let too_many = synth_dataset(8, 5, 1);
    assert!(matches!(
        train(model, &too_many, None, &TrainConfig::default()),
        Err(Error::LabelOutOfRange { .. })
    ));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model: Model<f32> = convert_to_cycnn(&mini_vgg(&small_cfg(4), 5).unwrap())
        .unwrap()
        .with_conv_algorithm(ConvAlgorithm::Winograd)
        .unwrap();
    let ckpt = Checkpoint {
        model,
        preprocess: Preprocess {
            polar: Some(PolarConfig::for_image(PolarMode::LogPolar, 32, 32)),
            standardizer: Standardizer {
                mean: vec![0.1307],
                std: vec![0.3081],
            },
        },
    };
    let bytes = encode_checkpoint(&ckpt);
    assert_eq!(&bytes[..4], b"CYC1");
    let back: Checkpoint<f32> = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(encode_checkpoint(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cyc");
    save_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(load_checkpoint::<f32>(&path).unwrap(), ckpt);

    assert!(decode_checkpoint::<f64>(&bytes).is_err());
    assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint::<f32>(&bad).is_err());
}
