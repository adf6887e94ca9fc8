use beamkit_neural::layers::{attention, cross_attention};
use beamkit_neural::{Graph, Init, LayerParams, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn single_key_attention_returns_its_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let q = g.constant(rand_tensor(&mut rng, &[2, 5, 4], 3.0));
    let k = g.constant(rand_tensor(&mut rng, &[2, 1, 4], 3.0));
    let vt = rand_tensor(&mut rng, &[2, 1, 4], 1.0);
    let v = g.constant(vt.clone());
    let out = attention(&mut g, q, k, v, 2).unwrap();
    let out = g.value(out);
    for b in 0..2 {
        for l in 0..5 {
            for d in 0..4 {
                assert!((out.data[(b * 5 + l) * 4 + d] - vt.data[b * 4 + d]).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_outputs_stay_inside_value_range(seed in 0u64..10_000, heads in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, lq, lk, d) = (2, 3, 6, 4);
        let mut g = Graph::new();
        let q = g.constant(rand_tensor(&mut rng, &[b, lq, d], 5.0));
        let k = g.constant(rand_tensor(&mut rng, &[b, lk, d], 5.0));
        let vt = rand_tensor(&mut rng, &[b, lk, d], 1.0);
        let v = g.constant(vt.clone());
        let out = attention(&mut g, q, k, v, heads).unwrap();
        let out = g.value(out);
        for bi in 0..b {
            for di in 0..d {
                let col: Vec<f64> = (0..lk).map(|l| vt.data[(bi * lk + l) * d + di]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for l in 0..lq {
                    let o = out.data[(bi * lq + l) * d + di];
                    prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
                }
            }
        }
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 5]));
    assert!(attention(&mut g, x, x, x, 2).is_err());
}

fn small_params(seed: u64) -> LayerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LayerParams::new();
    for n in ["att.q", "att.k", "att.v", "att.o"] {
        p.add_linear(n, 4, 4, &mut rng).unwrap();
    }
    p.add_prelu("act", 3, &mut rng).unwrap();
    p.add_norm("ln", 4, &mut rng).unwrap();
    p
}

#[test]
fn initialisation_is_seeded_and_bounded() {
    let a = small_params(5);
    assert_eq!(a, small_params(5));
    assert_ne!(a, small_params(6));
    for e in a.entries() {
        match e.init {
            Init::Uniform(b) => {
                assert_eq!(b, 0.5);
                assert!(e.tensor.data.iter().all(|v| v.abs() <= b));
            }
            Init::Constant(c) => assert!(e.tensor.data.iter().all(|v| *v == c)),
        }
    }
    assert_eq!(a.get("act.slope").unwrap().data, vec![0.25; 3]);
    assert!(a.get("missing").is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let p = small_params(7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    p.save(&path).unwrap();
    let q = LayerParams::load(&path).unwrap();
    assert_eq!(p, q);
    for (a, b) in p.entries().iter().zip(q.entries()) {
        let ab: Vec<u64> = a.tensor.data.iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.tensor.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = small_params(7).to_bytes();
    assert!(LayerParams::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(LayerParams::from_bytes(&bad).is_err());
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(LayerParams::from_bytes(&bad).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(LayerParams::from_bytes(&long).is_err());
}

#[test]
fn cross_attention_gradients_reach_every_projection() {
    let p = small_params(8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let q = g.constant(rand_tensor(&mut rng, &[2, 3, 4], 1.0));
    let m = g.constant(rand_tensor(&mut rng, &[2, 5, 4], 1.0));
    let out = cross_attention(&mut g, &bound, "att", q, m, 2).unwrap();
    let w = std::rc::Rc::new(rand_tensor(&mut rng, &[2, 3, 4], 1.0));
    let loss = g.weighted_sum(out, w).unwrap();
    let grads = g.backward(loss).unwrap();
    let all = bound.gradients(&p, &grads);
    for (e, gr) in p.entries().iter().zip(&all) {
        if e.name.starts_with("att") {
            assert!(gr.norm_sqr() > 0.0, "{} has no gradient", e.name);
        } else {
            assert_eq!(gr.norm_sqr(), 0.0);
        }
    }
}
