use chladni_core::model::*;
use chladni_neural::{one_hot, softmax_cross_entropy, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(variant: Variant, dropout_p: f64) -> ModelConfig {
    ModelConfig {
        variant,
        image_size: 16,
        channel_widths: [4, 8, 8, 8],
        num_classes: 2,
        cbam_reduction: 4,
        dropout_p,
        hidden: 16,
    }
}

/// Two classes: bright left half versus bright right half, with noise.
fn halves(per_class: usize, seed: u64) -> Samples {
    let s = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * per_class {
        let label = i % 2;
        for _ch in 0..3 {
            for _r in 0..s {
                for c in 0..s {
                    let lit = (c < s / 2) == (label == 0);
                    let base = if lit { 0.8 } else { 0.1 };
                    inputs.push(base + rng.gen_range(-0.1..0.1f32));
                }
            }
        }
        labels.push(label);
    }
    Samples::new(s, 2, inputs, labels).unwrap()
}

#[test]
fn parameter_counts() {
    let cbam5 = ModelConfig::default();
    assert_eq!(cbam5.parameter_count(), 2_502_290);
    let basic = ModelConfig { variant: Variant::Basic, ..cbam5.clone() };
    let cbam7 = ModelConfig { variant: Variant::Cbam7, ..cbam5.clone() };
    // Channel MLP 256x16 + 16 + 16x256 + 256, spatial 2x5x5 + 1.
    assert_eq!(cbam5.parameter_count() - basic.parameter_count(), 8_464 + 51);
    assert_eq!(cbam7.parameter_count() - cbam5.parameter_count(), 99 - 51);
    assert!(basic.parameter_count() < cbam5.parameter_count());
    let model = Model::<f32>::init(cbam5, 0).unwrap();
    assert_eq!(model.parameter_count(), 2_502_290);
}

#[test]
fn stage_shapes_at_full_size() {
    let model = Model::<f32>::init(ModelConfig::default(), 1).unwrap();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let x = tape.constant(Tensor::full([1, 3, 224, 224], 0.5));
    let mut trace = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward_traced(&mut tape, &vars, x, false, &mut rng, &mut trace).unwrap();
    let expect: Vec<(String, Vec<usize>)> = [
        ("block1", vec![1, 32, 112, 112]),
        ("block2", vec![1, 64, 56, 56]),
        ("block3", vec![1, 128, 28, 28]),
        ("block4", vec![1, 256, 28, 28]),
        ("cbam", vec![1, 256, 28, 28]),
        ("pool", vec![1, 256, 4, 4]),
        ("logits", vec![1, 15]),
    ]
    .into_iter()
    .map(|(n, d)| (n.to_string(), d))
    .collect();
    assert_eq!(trace, expect);
    assert_eq!(tape.value(out).dims(), &[1, 15]);
}

#[test]
fn wrong_input_shape_is_rejected() {
    let model = Model::<f32>::init(tiny(Variant::Cbam5, 0.0), 0).unwrap();
    assert!(model.logits(&Tensor::zeros([1, 3, 32, 32])).is_err());
    assert!(model.logits(&Tensor::zeros([1, 1, 16, 16])).is_err());
    assert!(ModelConfig { image_size: 60, ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { cbam_reduction: 7, ..ModelConfig::default() }.validate().is_err());
}

fn zero_cbam_params(tape: &mut Tape<f64>, c: usize, r: usize, k: usize) -> ([chladni_neural::Var; 4], [chladni_neural::Var; 2]) {
    let mlp = [
        tape.constant(Tensor::zeros([c, r])),
        tape.constant(Tensor::zeros([r])),
        tape.constant(Tensor::zeros([r, c])),
        tape.constant(Tensor::zeros([c])),
    ];
    let spatial = [tape.constant(Tensor::zeros([1, 2, k, k])), tape.constant(Tensor::zeros([1]))];
    (mlp, spatial)
}

#[test]
fn zero_weights_give_half_gates() {
    let mut tape = Tape::<f64>::new();
    let (mlp, spatial) = zero_cbam_params(&mut tape, 8, 2, 5);
    let zeros = tape.constant(Tensor::zeros([1, 8, 6, 6]));
    let ca = channel_attention(&mut tape, zeros, mlp).unwrap();
    assert_eq!(tape.value(ca).dims(), &[1, 8, 1, 1]);
    assert!(tape.value(ca).data().iter().all(|&g| g == 0.5));
    let sa = spatial_attention(&mut tape, zeros, spatial[0], spatial[1]).unwrap();
    assert_eq!(tape.value(sa).dims(), &[1, 1, 6, 6]);
    assert!(tape.value(sa).data().iter().all(|&g| g == 0.5));

    // With both gates at one half, the block scales every feature by a quarter.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = Tensor::from_fn([2, 8, 6, 6], |_| rng.gen_range(-3.0..3.0));
    let fv = tape.constant(f.clone());
    let out = cbam(&mut tape, fv, mlp, spatial).unwrap();
    for (o, x) in tape.value(out).data().iter().zip(f.data()) {
        assert!((o - x / 4.0).abs() < 1e-15);
    }
}

#[test]
fn channel_attention_shape_at_block_four() {
    let mut tape = Tape::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mlp = [
        tape.constant(chladni_neural::init::kaiming_uniform([256, 16], 256, &mut rng)),
        tape.constant(Tensor::zeros([16])),
        tape.constant(chladni_neural::init::kaiming_uniform([16, 256], 16, &mut rng)),
        tape.constant(Tensor::zeros([256])),
    ];
    let f = tape.constant(Tensor::from_fn([1, 256, 28, 28], |i| (i % 13) as f32 / 13.0));
    let ca = channel_attention(&mut tape, f, mlp).unwrap();
    assert_eq!(tape.value(ca).dims(), &[1, 256, 1, 1]);
    assert!(tape.value(ca).data().iter().all(|&g| g > 0.0 && g < 1.0));
}

fn loss_of(model: &Model<f64>, x: &Tensor<f64>, targets: &Tensor<f64>) -> f64 {
    let logits = model.logits(x).unwrap();
    softmax_cross_entropy(&logits, targets).unwrap().0
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for variant in Variant::ALL {
        let model = Model::<f64>::init(tiny(variant, 0.0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_fn([2, 3, 16, 16], |_| rng.gen::<f64>());
        let targets = one_hot::<f64>(&[0, 1], 2);

        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let input = tape.constant(x.clone());
        let logits = model.forward(&mut tape, &vars, input, true, &mut rng).unwrap();
        let (_, seed) = softmax_cross_entropy(tape.value(logits), &targets).unwrap();
        let grads = tape.backward(logits, seed).unwrap();

        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for (p, &var) in vars.iter().enumerate() {
            let analytic = grads.get(var).expect("every parameter receives a gradient");
            let len = model.params()[p].len();
            for j in [0, len / 2, len - 1] {
                let mut plus = model.clone();
                plus.params_mut()[p].data_mut()[j] += eps;
                let mut minus = model.clone();
                minus.params_mut()[p].data_mut()[j] -= eps;
                let numeric = (loss_of(&plus, &x, &targets) - loss_of(&minus, &x, &targets)) / (2.0 * eps);
                let a = analytic.data()[j];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                worst = worst.max(err);
                assert!(err < 1e-4, "{variant} {} [{j}]: analytic {a}, numeric {numeric}", model.names()[p]);
            }
        }
        assert!(worst.is_finite());
    }
}

#[test]
fn toy_set_is_learned_perfectly() {
    let data = halves(12, 0);
    let tc = TrainConfig { lr: 3e-3, batch_size: 8, max_epochs: 30, early_stop_patience: 29, ..Default::default() };
    let ck = train_split(&data, &data, &tiny(Variant::Cbam5, 0.0), &tc, |_| {}).unwrap();
    let report = evaluate(&ck.model, &data).unwrap();
    assert_eq!(report.top1_accuracy, 1.0, "{:?}", ck.history.last());
    assert_eq!(report.macro_f1, 1.0);
}

#[test]
fn zero_learning_rate_stops_after_patience() {
    let data = halves(6, 1);
    let tc = TrainConfig { lr: 0.0, batch_size: 4, max_epochs: 20, early_stop_patience: 3, ..Default::default() };
    let ck = train_split(&data, &data, &tiny(Variant::Basic, 0.5), &tc, |_| {}).unwrap();
    assert_eq!(ck.history.len(), 4);
    assert_eq!(ck.best_epoch, 0);
    assert!(ck.history.windows(2).all(|w| w[0].val_loss == w[1].val_loss));
    assert_eq!(ck.model, Model::<f32>::init(tiny(Variant::Basic, 0.5), tc.seed).unwrap());
}

#[test]
fn training_is_reproducible() {
    let data = halves(6, 2);
    let tc = TrainConfig { lr: 1e-3, batch_size: 4, max_epochs: 2, early_stop_patience: 1, seed: 9, ..Default::default() };
    let mut first = Vec::new();
    let a = train_split(&data, &data, &tiny(Variant::Cbam7, 0.5), &tc, |r| first.push(r.clone())).unwrap();
    let b = train_split(&data, &data, &tiny(Variant::Cbam7, 0.5), &tc, |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(first, a.history);
    assert_eq!(a.model, b.model);
}

#[test]
fn non_finite_input_reports_divergence() {
    let good = halves(4, 3);
    let mut inputs: Vec<f32> = (0..good.len()).flat_map(|i| good.input(i).to_vec()).collect();
    inputs[10] = f32::NAN;
    let bad = Samples::new(16, 2, inputs, good.labels().to_vec()).unwrap();
    let tc = TrainConfig { lr: 1e-3, batch_size: 8, max_epochs: 3, early_stop_patience: 2, ..Default::default() };
    let err = train_split(&bad, &good, &tiny(Variant::Cbam5, 0.0), &tc, |_| {}).unwrap_err();
    assert!(matches!(err, ModelError::Diverged { epoch: 0, .. }), "{err}");
    assert!(err.to_string().contains("epoch 0"));
}

#[test]
fn training_rejects_bad_inputs() {
    let data = halves(4, 4);
    let tc = TrainConfig { max_epochs: 3, early_stop_patience: 1, ..Default::default() };
    let empty = data.subset(&[]);
    assert!(matches!(train_split(&empty, &data, &tiny(Variant::Basic, 0.0), &tc, |_| {}), Err(ModelError::EmptyTrainSplit)));
    let big = ModelConfig { image_size: 32, ..tiny(Variant::Basic, 0.0) };
    assert!(matches!(train_split(&data, &data, &big, &tc, |_| {}), Err(ModelError::InputSize { got: 16, expected: 32 })));
    let bad_tc = TrainConfig { early_stop_patience: 3, ..tc };
    assert!(matches!(train(&data, &tiny(Variant::Basic, 0.0), &bad_tc), Err(ModelError::TrainConfig(_))));
}

#[test]
fn stratified_split_keeps_every_class() {
    let data = halves(10, 5);
    let (rest, held) = data.stratified_split(0.1, 0);
    assert_eq!((rest.len(), held.len()), (18, 2));
    assert_eq!(held.labels().iter().filter(|&&l| l == 0).count(), 1);
}

fn trained_checkpoint() -> Checkpoint {
    let data = halves(4, 6);
    let tc = TrainConfig { lr: 1e-3, batch_size: 4, max_epochs: 2, early_stop_patience: 1, ..Default::default() };
    train_split(&data, &data, &tiny(Variant::Cbam5, 0.5), &tc, |_| {}).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ck = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    let x = halves(2, 7).batch(&[0, 1, 2, 3]).0;
    let (a, b) = (ck.model.logits(&x).unwrap(), back.model.logits(&x).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn checkpoint_corruption_is_detected() {
    let bytes = trained_checkpoint().to_bytes();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(CheckpointError::BadMagic)));

    // Cut inside the payload of the first classifier weight.
    let name = b"fc1.weight";
    let at = bytes.windows(name.len()).position(|w| w == name).unwrap();
    let cut = &bytes[..at + name.len() + 40];
    match Checkpoint::from_bytes(cut) {
        Err(CheckpointError::Truncated { section }) => assert_eq!(section, "fc1.weight"),
        other => panic!("expected truncation, got {other:?}"),
    }

    let mut flipped = bytes.clone();
    let mid = bytes.len() - 100;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::Checksum { .. })));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(CheckpointError::UnsupportedVersion(9))));

    assert!(matches!(load_checkpoint("/nonexistent/model.ckpt"), Err(CheckpointError::Io { .. })));
}

#[test]
fn evaluation_ignores_sample_order() {
    let model = Model::<f32>::init(tiny(Variant::Cbam5, 0.5), 8).unwrap();
    let data = halves(10, 8);
    let a = evaluate(&model, &data).unwrap();
    let b = evaluate(&model, &data.permuted(3)).unwrap();
    assert_eq!((a.top1_accuracy, a.macro_f1, &a.confusion), (b.top1_accuracy, b.macro_f1, &b.confusion));
    assert_eq!(a.confusion.iter().flatten().sum::<usize>(), 20);
    assert!(a.mean_latency_ms > 0.0 && a.p99_latency_ms > 0.0);
    assert!(evaluate(&model, &data.subset(&[])).is_err());
}

#[test]
fn latency_benchmark_runs() {
    let model = Model::<f32>::init(tiny(Variant::Basic, 0.5), 0).unwrap();
    let one = benchmark_latency(&model, 1, 0).unwrap();
    assert_eq!(one.runs, 1);
    assert_eq!(one.mean_ms, one.p99_ms);
    assert!(benchmark_latency(&model, 0, 0).is_err());
}

#[test]
fn classify_resizes_and_normalises() {
    let model = Model::<f32>::init(tiny(Variant::Cbam5, 0.5), 0).unwrap();
    let img = chladni_core::synth::SandImage::filled(40, [230, 225, 210]);
    let p = model.classify(&img).unwrap();
    assert_eq!(p.probabilities.len(), 2);
    assert!((p.probabilities.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    assert_eq!(p.confidence, p.probabilities[p.mode_id]);
    let x = image_to_input(&img, 16);
    assert_eq!(x.dims(), &[1, 3, 16, 16]);
    assert!((x.data()[0] - 230.0 / 255.0).abs() < 1e-6);
}
