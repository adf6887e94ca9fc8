use beamkit_core::signal::{istft, stft, MultichannelWave, StftConfig};
use proptest::prelude::*;

fn wave_strategy() -> impl Strategy<Value = MultichannelWave> {
    (1usize..4, 128usize..2000).prop_flat_map(|(m, len)| {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, len), m)
            .prop_map(|s| MultichannelWave::new(s, 16000).unwrap())
    })
}

fn rel_err(a: &MultichannelWave, b: &MultichannelWave) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.samples().iter().flatten().zip(b.samples().iter().flatten()) {
        num += (x - y) * (x - y);
        den += x * x;
    }
    (num / den.max(1e-300)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roundtrip_is_exact(w in wave_strategy()) {
        let cfg = StftConfig::toy();
        let spec = stft(&w, &cfg).unwrap();
        let back = istft(&spec, w.len()).unwrap();
        prop_assert_eq!(back.len(), w.len());
        prop_assert!(rel_err(&w, &back) < 1e-10);
    }

    #[test]
    fn transform_is_linear(w in wave_strategy(), a in -3.0f64..3.0) {
        let cfg = StftConfig::toy();
        let s1 = stft(&w, &cfg).unwrap();
        let s2 = stft(&w.scaled(a), &cfg).unwrap();
        for (x, y) in s1.bins().iter().zip(s2.bins().iter()) {
            prop_assert!((x * a - y).norm() <= 1e-9 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn frame_count_formula(len in 128usize..5000) {
        let cfg = StftConfig::toy();
        let w = MultichannelWave::mono(vec![0.1; len], 16000).unwrap();
        let t = stft(&w, &cfg).unwrap().frames();
        let expected = 1 + (len - cfg.window_len).div_ceil(cfg.hop);
        prop_assert_eq!(t, expected);
    }
}
