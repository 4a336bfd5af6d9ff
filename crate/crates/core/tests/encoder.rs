use brainfold_core::eeg::EegSequence;
use brainfold_core::encoder::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layout_of(arch: Architecture, hidden: usize) -> EncoderLayout {
    match arch {
        Architecture::Common => EncoderLayout::common(&[hidden]),
        Architecture::ChannelCommon => EncoderLayout::channel_common(hidden / 2, &[hidden]),
        Architecture::CommonOutput => EncoderLayout::common_output(&[hidden], hidden),
    }
}

fn random_sequence(channels: usize, steps: usize, label: u32, rng: &mut ChaCha8Rng) -> EegSequence {
    let samples = (0..channels * steps).map(|_| rng.random_range(-30.0..30.0)).collect();
    EegSequence::new(0, label, label, 250.0, channels, samples).unwrap()
}

#[test]
fn gradient_matches_finite_differences_at_hidden_8() {
    // hidden 8, 12 steps, 3 classes, epsilon 1e-5
    for arch in Architecture::ALL {
        let inst = CheckInstance::new(layout_of(arch, 8), 3, 3, 12, 21).unwrap();
        let g = inst.check(1e-5).unwrap();
        assert!(g.max_rel_error < 1e-4, "{arch}: {g:?}");
        assert_eq!(g.parameters, inst.model.params.parameter_count());
    }
}

#[test]
fn gradient_matches_on_random_instances() {
    for arch in Architecture::ALL {
        for seed in 100..104 {
            let inst = CheckInstance::random(arch, 16, 16, 5, seed).unwrap();
            let g = inst.check(1e-6).unwrap();
            assert!(g.max_rel_error < 1e-4, "{arch} seed {seed}: {g:?}");
        }
    }
}

#[test]
fn zero_model_head_bias_gradient_is_softmax_of_constant_logits() {
    for arch in Architecture::ALL {
        let cfg = EncoderConfig::new(layout_of(arch, 4), 3, 4);
        let model = EncoderModel::zeros(cfg, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = random_sequence(3, 6, 1, &mut rng);
        let input = model.prepare(&seq).unwrap();
        let (loss, grad) = model.params.loss_and_grad(&model.config, &input, 1);
        assert_eq!(loss, 4f64.ln());
        assert_eq!(grad.head.b, vec![0.25, -0.75, 0.25, 0.25]);
        // every other gradient vanishes, so the head bias carries the check
        let g = grad_check(&model, &seq, 1, 1e-6).unwrap();
        assert_eq!(g.worst.0, "head.b", "{g:?}");
        assert!(g.max_rel_error < 1e-10, "{g:?}");
    }
}

#[test]
fn feature_width_follows_the_layout() {
    let cases = [
        ("128 common, 128 output", 128),
        ("5 channel, 32 common", 32),
        ("128,64 common", 64),
        ("7 common", 7),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seq = random_sequence(4, 5, 0, &mut rng);
    for (text, width) in cases {
        let layout: EncoderLayout = text.parse().unwrap();
        assert_eq!(layout.feature_dim(), width);
        let model = EncoderModel::init(EncoderConfig::new(layout, 4, 3), 5, 1).unwrap();
        assert_eq!(model.encode(&seq).unwrap().len(), width, "{text}");
    }
}

#[test]
fn relu_output_features_are_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = EncoderModel::init(EncoderConfig::new("6 common, 10 output".parse().unwrap(), 3, 2), 9, 3).unwrap();
    for _ in 0..20 {
        let f = model.encode(&random_sequence(3, 9, 0, &mut rng)).unwrap();
        assert!(f.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn encode_rejects_mismatched_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = EncoderModel::init(EncoderConfig::new(EncoderLayout::common(&[4]), 3, 2), 8, 0).unwrap();
    assert!(matches!(
        model.encode(&random_sequence(2, 8, 0, &mut rng)),
        Err(EncoderError::ChannelMismatch { expected: 3, found: 2 })
    ));
    assert!(matches!(
        model.encode(&random_sequence(3, 7, 0, &mut rng)),
        Err(EncoderError::LengthMismatch { expected: 8, found: 7 })
    ));
    assert!(model.classify_features(&[0.0; 3]).is_err());
}

#[test]
fn serialization_round_trip_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for text in ["5,3 common", "2 channel, 6 common", "6 common, 4 output"] {
        let model = EncoderModel::init(EncoderConfig::new(text.parse().unwrap(), 3, 4), 10, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bfenc");
        model.save(&path).unwrap();
        let loaded = EncoderModel::load(&path).unwrap();
        assert_eq!(loaded.params, model.params);
        assert_eq!(loaded.config, model.config);
        for _ in 0..5 {
            let seq = random_sequence(3, 10, 0, &mut rng);
            let a = model.encode(&seq).unwrap();
            let b = loaded.encode(&seq).unwrap();
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_eq!(loaded.to_bytes(), model.to_bytes());
    }
}

#[test]
fn corrupt_model_files_are_rejected() {
    let model = EncoderModel::init(EncoderConfig::new(EncoderLayout::common(&[3]), 2, 2), 4, 0).unwrap();
    let bytes = model.to_bytes();
    assert!(EncoderModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(EncoderModel::from_bytes(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(EncoderModel::from_bytes(&magic).is_err());
    let mut version = bytes;
    version[6] = 9;
    assert!(matches!(EncoderModel::from_bytes(&version), Err(EncoderError::Format(_))));
}

fn toy_samples(n: usize, channels: usize, steps: usize, classes: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % classes;
            let input = (0..steps)
                .map(|t| {
                    (0..channels)
                        .map(|c| {
                            let phase = (t as f64) * (0.3 + 0.4 * label as f64) + c as f64;
                            phase.sin() + 0.3 * rng.random_range(-1.0..1.0)
                        })
                        .collect()
                })
                .collect();
            Sample { input, label }
        })
        .collect()
}

#[test]
fn training_is_deterministic() {
    let cfg = EncoderConfig::new("6 common, 5 output".parse().unwrap(), 2, 3);
    let train = toy_samples(12, 2, 8, 3, 1);
    let val = toy_samples(6, 2, 8, 3, 2);
    let hyper = TrainHyper {
        learning_rate: 0.05,
        epochs: 4,
        batch_size: 4,
        ..TrainHyper::default()
    };
    let (m1, h1) = train_on(&cfg, 8, &train, &val, &[], &hyper, 17).unwrap();
    let (m2, h2) = train_on(&cfg, 8, &train, &val, &[], &hyper, 17).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(m1.to_bytes(), m2.to_bytes());
    let (m3, _) = train_on(&cfg, 8, &train, &val, &[], &hyper, 18).unwrap();
    assert_ne!(m1.to_bytes(), m3.to_bytes());
}

#[test]
fn a_single_sample_is_memorized() {
    let cfg = EncoderConfig::new(EncoderLayout::common(&[8]), 2, 4);
    let train = toy_samples(1, 2, 6, 4, 3);
    let hyper = TrainHyper {
        learning_rate: 0.1,
        batch_size: 1,
        epochs: 200,
        ..TrainHyper::default()
    };
    let (model, history) = train_on(&cfg, 6, &train, &[], &[], &hyper, 5).unwrap();
    let kept = history.best().train_loss;
    assert!(history.epochs.last().unwrap().train_loss < 0.01, "{:?}", history.epochs.last());
    assert!(kept < 0.01);
    let loss = model.params.loss(&cfg, &train[0].input, train[0].label);
    assert!(loss < 0.01, "{loss}");
}

#[test]
fn full_batch_descent_does_not_increase_loss_early() {
    for arch in Architecture::ALL {
        let cfg = EncoderConfig::new(layout_of(arch, 6), 2, 3);
        let train = toy_samples(9, 2, 7, 3, 4);
        let hyper = TrainHyper {
            learning_rate: 1e-3,
            batch_size: train.len(),
            epochs: 6,
            ..TrainHyper::default()
        };
        let (_, history) = train_on(&cfg, 7, &train, &[], &[], &hyper, 2).unwrap();
        let losses: Vec<f64> = history.epochs.iter().map(|e| e.train_loss).collect();
        for w in losses.windows(2).take(5) {
            assert!(w[1] <= w[0], "{arch}: {losses:?}");
        }
    }
}

#[test]
fn selection_keeps_the_earliest_best_validation_epoch() {
    let cfg = EncoderConfig::new(EncoderLayout::common(&[5]), 2, 3);
    let train = toy_samples(12, 2, 8, 3, 7);
    let val = toy_samples(6, 2, 8, 3, 8);
    let test = toy_samples(6, 2, 8, 3, 9);
    let hyper = TrainHyper {
        learning_rate: 0.05,
        batch_size: 4,
        epochs: 12,
        ..TrainHyper::default()
    };
    let (model, history) = train_on(&cfg, 8, &train, &val, &test, &hyper, 3).unwrap();
    let best = history.max_val_acc().unwrap();
    let first = history.epochs.iter().position(|e| e.val_acc == Some(best)).unwrap();
    assert_eq!(history.best_epoch, first);
    assert!(history.epochs.iter().all(|e| e.val_acc.unwrap() <= best));
    // the kept parameters reproduce the recorded validation accuracy
    let correct = val
        .iter()
        .filter(|s| argmax(&model.logits(&model.params.features(&cfg, &s.input)).unwrap()) == s.label)
        .count();
    assert_eq!(correct as f64 / val.len() as f64, best);
    assert!(history.to_text().lines().count() == 13);
}

#[test]
fn divergence_is_reported() {
    let cfg = EncoderConfig::new(EncoderLayout::common(&[4]), 2, 3);
    let mut train = toy_samples(4, 2, 5, 3, 1);
    train[0].input[0][0] = f64::NAN;
    let err = train_on(&cfg, 5, &train, &[], &[], &TrainHyper::default(), 1).unwrap_err();
    assert!(matches!(err, EncoderError::Diverged { epoch: 0, .. }), "{err}");
}
