use std::rc::Rc;

use beamkit_core::room::ArrayGeometry;
use beamkit_core::signal::MultichannelWave;
use beamkit_neural::beamformer::{beamformer_forward, BeamformerNetConfig};
use beamkit_neural::gradcheck::{check_gradients, check_gradients_sampled};
use beamkit_neural::loss::joint_loss;
use beamkit_neural::model::{forward, ModelConfig, ModelInput, ModelSpec, NeuralBeamformer};
use beamkit_neural::preseparator::{preseparator_forward, MaskKind, PreSeparatorConfig};
use beamkit_neural::{Graph, LayerParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny_pre(kind: MaskKind) -> PreSeparatorConfig {
    PreSeparatorConfig {
        unet_channels: vec![5, 2, 3, 4],
        tcn_repeats: 1,
        tcn_blocks: 2,
        tcn_channels: 3,
        mask_kind: kind,
        ..PreSeparatorConfig::toy()
    }
}

fn tiny_bf() -> BeamformerNetConfig {
    BeamformerNetConfig {
        gru_layers: 2,
        gru_hidden: 3,
        attention_dim: 4,
        attention_heads: 2,
    }
}

fn pre_params(cfg: &PreSeparatorConfig, freqs: usize, seed: u64) -> LayerParams {
    let mut p = LayerParams::new();
    cfg.register(&mut p, freqs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    p
}

fn bf_params(cfg: &BeamformerNetConfig, mics: usize, spatial: usize, seed: u64) -> LayerParams {
    let mut p = LayerParams::new();
    cfg.register(&mut p, mics, spatial, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    p
}

#[test]
fn mask_shapes_and_irm_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [MaskKind::Irm, MaskKind::Crm] {
        let cfg = PreSeparatorConfig {
            mask_kind: kind,
            ..PreSeparatorConfig::toy()
        };
        let p = pre_params(&cfg, 65, 2);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let x = g.constant(rand_tensor(&mut rng, &[5, 65, 6], 50.0));
        let m = preseparator_forward(&mut g, &b, &cfg, x).unwrap();
        for v in [m.speech, m.noise] {
            assert_eq!(g.shape(v), [6, 65, 2]);
            let d = &g.value(v).data;
            if kind == MaskKind::Irm {
                assert!(d.chunks(2).all(|c| c[0] > 0.0 && c[0] < 1.0 && c[1] == 0.0));
            } else {
                assert!(d.chunks(2).any(|c| c[1] != 0.0));
            }
        }
    }
}

#[test]
fn frequency_padding_can_be_disabled() {
    let cfg = PreSeparatorConfig {
        pad_frequency: false,
        ..PreSeparatorConfig::toy()
    };
    let mut p = LayerParams::new();
    assert!(cfg.register(&mut p, 65, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    let p = pre_params(&cfg, 64, 0);
    let mut g = Graph::new();
    let b = p.bind_frozen(&mut g);
    let x = g.constant(Tensor::filled(&[5, 64, 3], 0.1));
    assert!(preseparator_forward(&mut g, &b, &cfg, x).is_ok());
    let wrong = g.constant(Tensor::filled(&[4, 64, 3], 0.1));
    assert!(preseparator_forward(&mut g, &b, &cfg, wrong).is_err());
}

#[test]
fn preseparator_gradients_match_finite_differences() {
    for (seed, kind) in [(3, MaskKind::Irm), (4, MaskKind::Crm)] {
        let cfg = tiny_pre(kind);
        let p = pre_params(&cfg, 16, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[5, 16, 2], 1.0);
        let w = Rc::new(rand_tensor(&mut rng, &[2, 16, 2], 1.0));
        let r = check_gradients(&p.tensors(), 1e-5, |g, vars| {
            let b = p.bind_vars(vars)?;
            let xv = g.constant(x.clone());
            let m = preseparator_forward(g, &b, &cfg, xv)?;
            let s = g.weighted_sum(m.speech, w.clone())?;
            let n = g.weighted_sum(m.noise, w.clone())?;
            let n = g.scale(n, -0.5)?;
            g.add(s, n)
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-3, "{kind:?}: {:?}", r.per_input);
    }
}

#[test]
fn beamformer_gradients_match_finite_differences() {
    let cfg = tiny_bf();
    let p = bf_params(&cfg, 2, 2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cov = rand_tensor(&mut rng, &[2, 5, 16], 1.0);
    let sp = rand_tensor(&mut rng, &[2, 5, 2], 1.0);
    let w = Rc::new(rand_tensor(&mut rng, &[2, 5, 2, 2], 1.0));
    let mut inputs = p.tensors();
    inputs.push(cov);
    let r = check_gradients(&inputs, 1e-5, |g, vars| {
        let n = vars.len() - 1;
        let b = p.bind_vars(&vars[..n])?;
        let s = g.constant(sp.clone());
        let out = beamformer_forward(g, &b, &cfg, vars[n], s)?;
        g.weighted_sum(out, w.clone())
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-3, "{:?} {:?}", r.per_input, r.norms);
    let names: Vec<&str> = r.below_resolution.iter().map(|k| p.entries()[*k].name.as_str()).collect();
    assert!(names.iter().all(|n| *n == "bf.att.k.b"), "{names:?}");
}

/// Four-channel noise whose STFT has exactly two frames.
fn two_frame_input(cfg: &ModelConfig, seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.stft.window_len + cfg.stft.hop;
    let wave = MultichannelWave::new(
        (0..4).map(|_| (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()).collect(),
        16000,
    )
    .unwrap();
    let input = ModelInput::from_mixture(&wave, &ArrayGeometry::default(), 60.0, cfg).unwrap();
    assert_eq!(input.frames(), 2);
    input
}

fn end_to_end_check(cfg: ModelConfig, sampled: Option<usize>) -> f64 {
    let spec = ModelSpec {
        config: cfg.clone(),
        mics: 4,
        spatial_dim: 4,
    };
    let model = NeuralBeamformer::new(cfg.clone(), 4, 4, 9).unwrap();
    let input = two_frame_input(&cfg, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let reference = Rc::new((0..input.length).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<f64>>());
    let ref_spec = Rc::new(rand_tensor(&mut rng, &[2, cfg.stft.num_bins(), 2], 0.5));
    let build = |g: &mut Graph, vars: &[beamkit_neural::Var]| {
        let b = model.params.bind_vars(vars)?;
        let out = forward(g, &b, &spec, &input)?;
        Ok(joint_loss(g, out.wave, reference.clone(), out.spectrum, ref_spec.clone())?.total)
    };
    let r = match sampled {
        None => check_gradients(&model.params.tensors(), 1e-5, build),
        Some(k) => check_gradients_sampled(&model.params.tensors(), k, 11, 1e-5, build),
    }
    .unwrap();
    // only the key bias may be unresolvable: its exact gradient is zero
    for k in &r.below_resolution {
        assert!(model.params.entries()[*k].name.ends_with("att.k.b"), "{}", model.params.entries()[*k].name);
    }
    r.max_relative_error
}

#[test]
fn tiny_end_to_end_gradients_match_on_every_parameter() {
    let cfg = ModelConfig {
        preseparator: tiny_pre(MaskKind::Crm),
        beamformer: tiny_bf(),
        ..ModelConfig::default()
    };
    let e = end_to_end_check(cfg, None);
    assert!(e < 1e-3, "{e}");
}

#[test]
fn toy_end_to_end_gradients_match_on_sampled_parameters() {
    let e = end_to_end_check(ModelConfig::default(), Some(3));
    assert!(e < 1e-3, "{e}");
}

#[test]
fn beamformer_is_frame_equivariant() {
    let cfg = BeamformerNetConfig::toy();
    let p = bf_params(&cfg, 4, 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (t, f) = (5, 9);
    let cov = rand_tensor(&mut rng, &[t, f, 64], 1.0);
    let sp = rand_tensor(&mut rng, &[t, f, 4], 1.0);
    let perm = [3usize, 0, 4, 2, 1];
    let permute = |x: &Tensor| {
        let w = x.numel() / t;
        let data = perm.iter().flat_map(|&s| x.data[s * w..(s + 1) * w].to_vec()).collect();
        Tensor::new(x.shape.clone(), data).unwrap()
    };
    let run = |cov: &Tensor, sp: &Tensor| {
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let (c, s) = (g.constant(cov.clone()), g.constant(sp.clone()));
        let out = beamformer_forward(&mut g, &b, &cfg, c, s).unwrap();
        assert_eq!(g.shape(out), [t, f, 4, 2]);
        g.value(out).clone()
    };
    let a = permute(&run(&cov, &sp));
    let b = run(&permute(&cov), &permute(&sp));
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn zero_covariance_with_repeated_spatial_frames_gives_identical_frames() {
    let cfg = BeamformerNetConfig::toy();
    let p = bf_params(&cfg, 4, 4, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (t, f) = (4, 6);
    let one = rand_tensor(&mut rng, &[1, f, 4], 1.0);
    let sp = Tensor::new(vec![t, f, 4], one.data.repeat(t)).unwrap();
    let mut g = Graph::new();
    let b = p.bind_frozen(&mut g);
    let c = g.constant(Tensor::zeros(&[t, f, 64]));
    let s = g.constant(sp);
    let out = beamformer_forward(&mut g, &b, &cfg, c, s).unwrap();
    let d = &g.value(out).data;
    let w = f * 8;
    for k in 1..t {
        assert_eq!(d[..w], d[k * w..(k + 1) * w]);
    }
}

#[test]
fn joint_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = rand_tensor(&mut rng, &[50], 1.0);
    let spec = rand_tensor(&mut rng, &[3, 4, 2], 1.0);
    let eval = |est: &Tensor, est_spec: &Tensor| {
        let mut g = Graph::new();
        let (e, s) = (g.constant(est.clone()), g.constant(est_spec.clone()));
        let l = joint_loss(&mut g, e, Rc::new(r.data.clone()), s, Rc::new(spec.clone())).unwrap();
        (g.value(l.total).item(), g.value(l.neg_si_sdr).item(), g.value(l.mse).item())
    };
    assert_eq!(eval(&r, &spec), (-60.0, -60.0, 0.0));
    let noisy = Tensor::new(vec![50], r.data.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (_, s1, m1) = eval(&noisy, &spec);
    let (_, s2, m2) = eval(&noisy.map(|v| 2.0 * v), &spec.map(|v| 2.0 * v));
    assert!((s1 - s2).abs() < 1e-10);
    assert!(m2 > m1);
    let est = rand_tensor(&mut rng, &[50], 1.0);
    let est_spec = rand_tensor(&mut rng, &[3, 4, 2], 1.0);
    let rr = Rc::new(r.data.clone());
    let rs = Rc::new(spec.clone());
    let res = check_gradients(&[est, est_spec], 1e-5, |g, v| {
        Ok(joint_loss(g, v[0], rr.clone(), v[1], rs.clone())?.total)
    })
    .unwrap();
    assert!(res.max_relative_error < 1e-4, "{:?}", res.per_input);
}

#[test]
fn loaded_parameters_must_match_the_configuration() {
    let m = NeuralBeamformer::new(ModelConfig::default(), 4, 4, 1).unwrap();
    let back = NeuralBeamformer::with_params(m.spec.clone(), LayerParams::from_bytes(&m.params.to_bytes()).unwrap()).unwrap();
    assert_eq!(back, m);
    let other = NeuralBeamformer::new(
        ModelConfig {
            beamformer: tiny_bf(),
            ..ModelConfig::default()
        },
        4,
        4,
        1,
    )
    .unwrap();
    assert!(NeuralBeamformer::with_params(m.spec.clone(), other.params).is_err());
    assert!(NeuralBeamformer::new(ModelConfig::default(), 4, 3, 1).is_err());
}

#[test]
fn model_inputs_are_checked_against_the_model() {
    let cfg = ModelConfig::default();
    let m = NeuralBeamformer::new(cfg.clone(), 4, 4, 1).unwrap();
    let input = two_frame_input(&cfg, 1);
    let w1 = m.infer(&input).unwrap();
    let w2 = m.infer(&input).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(w1.len(), input.length);
    let m3 = NeuralBeamformer::new(cfg, 3, 4, 1).unwrap();
    assert!(m3.infer(&input).is_err());
}
