use fwilab::nn::*;
use fwilab::{SeededRng, Tensor};

fn randn(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn zero_branch(c: usize) -> Block {
    let conv = Conv2d::new(Tensor::zeros(&[3, 3, c, c]), None, (1, 1), Padding::Same).unwrap();
    Block::new(LinearOp::Conv(conv), true, Some(0.0))
}

#[test]
fn residual_with_silent_branch_is_identity() {
    let mut rng = SeededRng::new(3);
    let mut block = ResidualBlock::new(zero_branch(3), zero_branch(3));
    let x = randn(&[2, 4, 5, 3], &mut rng);
    let y = block.forward(&x, Mode::Train).unwrap();
    assert_eq!(y, x);
    let dy = randn(&[2, 4, 5, 3], &mut rng);
    assert_eq!(block.backward(&dy).unwrap(), dy);
}

#[test]
fn batch_norm_training_output_has_beta_mean_and_gamma_spread() {
    let mut rng = SeededRng::new(5);
    let mut bn = BatchNorm::new(2);
    bn.gamma.value = Tensor::new(vec![2], vec![2.0, 0.5]).unwrap();
    bn.beta.value = Tensor::new(vec![2], vec![-1.0, 3.0]).unwrap();
    let x = randn(&[4, 3, 3, 2], &mut rng).map(|v| 10.0 * v + 7.0);
    let y = bn.forward(&x, Mode::Train).unwrap();
    for c in 0..2 {
        let vals: Vec<f64> = y.data().iter().skip(c).step_by(2).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let (g, b) = (bn.gamma.value.data()[c], bn.beta.value.data()[c]);
        assert!((mean - b).abs() < 1e-12, "channel {c} mean {mean}");
        // eps 1e-5 against a variance of about 100
        assert!((var / (g * g) - 1.0).abs() < 1e-6, "channel {c} var {var}");
    }
}

fn latent_kernel(spec: &NetworkSpec) -> (usize, usize) {
    match spec.encoder.last() {
        Some(LayerSpec::Conv { kernel, padding: Padding::Valid, .. }) => *kernel,
        other => panic!("encoder must end in a valid convolution, got {other:?}"),
    }
}

#[test]
fn preset_inputs_reach_a_single_latent_cell_and_the_model_grid() {
    // 1000 samples halve seven times to 8, 32 receivers halve five times to 1
    let flat = NetworkSpec::inversion_net((1000, 32, 3), (100, 100), 8, false, 0.2).unwrap();
    assert_eq!(latent_kernel(&flat), (8, 1));
    let curved = NetworkSpec::inversion_net((1000, 32, 3), (100, 150), 8, true, 0.2).unwrap();
    assert_eq!(latent_kernel(&curved), (8, 1));

    let x = Tensor::zeros(&[1, 1000, 32, 3]);
    let mut net = Network::new(flat, 1).unwrap();
    assert_eq!(net.forward(&x, Mode::Eval).unwrap().shape(), &[1, 100, 100, 1]);
    let mut net = Network::new(curved, 1).unwrap();
    let (out, feats) = net.forward_with_features(&x, Mode::Eval).unwrap();
    assert_eq!(out.shape(), &[1, 100, 150, 1]);
    assert_eq!(feats.shape(), &[1, 100, 150, net.feature_channels()]);
}

#[test]
fn inference_is_deterministic_and_stateless() {
    let mut rng = SeededRng::new(8);
    let spec = NetworkSpec::inversion_net((32, 8, 2), (12, 12), 16, true, 0.2).unwrap();
    let mut net = Network::new(spec, 4).unwrap();
    let before = net.clone();
    let x = randn(&[3, 32, 8, 2], &mut rng);
    let a = predict(&mut net, &x, 2).unwrap();
    let b = predict(&mut net, &x, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(net, before);
    assert_eq!(a.shape(), &[3, 12, 12]);
    assert!(matches!(net.backward(&Tensor::zeros(&[3, 12, 12, 1])), Err(fwilab::Error::StaleCache)));
}

#[test]
fn network_can_memorize_two_samples() {
    let mut rng = SeededRng::new(11);
    let spec = NetworkSpec::inversion_net((32, 8, 2), (12, 12), 16, false, 0.2).unwrap();
    let mut net = Network::new(spec, 2).unwrap();
    let x = randn(&[2, 32, 8, 2], &mut rng);
    let t = randn(&[2, 12, 12, 1], &mut rng);
    let mae = |net: &mut Network| {
        let p = net.forward(&x, Mode::Frozen).unwrap();
        p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64
    };
    let mut opt = AdamState::default();
    let mut first = None;
    for _ in 0..200 {
        net.zero_grad();
        let p = net.forward(&x, Mode::Train).unwrap();
        let (_, g) = loss_l2(&p, &t).unwrap();
        net.backward(&g).unwrap();
        opt.step(&mut net.params_mut(), 2e-3).unwrap();
        first.get_or_insert(mae(&mut net.clone()));
    }
    let (initial, last) = (first.unwrap(), mae(&mut net));
    assert!(last < 0.05 * initial, "mae {initial} -> {last}");
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = NetworkSpec::inversion_net((32, 8, 2), (12, 12), 16, true, 0.2).unwrap();
    let ckpt = Checkpoint {
        network: Network::new(spec, 9).unwrap(),
        optimizer: AdamState::default(),
        standardizer: fwilab::geomodel::Standardizer::new(4000.0, 500.0).unwrap(),
        input_scale: 12.5,
        epoch: 3,
        best_val_mae: 123.25,
        config_hash: "abc".into(),
        crf: Some(CrfSettings { window: 5, lambda1: 0.5, lambda2: 0.1, w: 0.75 }),
        history: vec![EpochStats { epoch: 0, lr: 5e-4, train_loss: 1.5, val_mae: f64::NAN }],
    };
    let path = dir.path().join("c.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.network, ckpt.network);
    assert_eq!(back.crf, ckpt.crf);
    assert!(back.history[0].val_mae.is_nan());
    assert_eq!(bincode::serialize(&back).unwrap(), bincode::serialize(&ckpt).unwrap());
}
