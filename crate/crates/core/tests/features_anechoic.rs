use beamkit_core::features::extract_features;
use beamkit_core::room::{doa_of, fft_convolve, simulate_rir, synth_speech, ArrayGeometry, DelayInterpolation, RoomConfig};
use beamkit_core::signal::{stft, MultichannelWave, StftConfig};

fn anechoic_capture(theta_deg: f64) -> (MultichannelWave, ArrayGeometry, f64) {
    let array = ArrayGeometry::default().centered_at([3.0, 2.5, 1.2]);
    let mut room = RoomConfig::new([6.0, 5.0, 2.4], 0.3, 16000);
    room.max_image_order = 0;
    room.interpolation = DelayInterpolation::Sinc;
    let c = array.centroid();
    let src = [c[0] - 2.0 * theta_deg.to_radians().cos(), c[1] + 2.0 * theta_deg.to_radians().sin(), c[2]];
    let h = simulate_rir(&room, src, &array).unwrap();
    let dry = synth_speech(4, 16000, 16000);
    let chans = h.rir.iter().map(|k| fft_convolve(&dry, k, dry.len())).collect();
    (MultichannelWave::new(chans, 16000).unwrap(), array.clone(), doa_of(src, &array).unwrap())
}

/// Magnitude-weighted mean of the angle-feature plane.
fn weighted_af(wave: &MultichannelWave, array: &ArrayGeometry, theta: f64) -> f64 {
    let spec = stft(wave, &StftConfig::default()).unwrap();
    let feats = extract_features(&spec, array, theta, 343.0).unwrap();
    let mag = feats.data.index_axis(ndarray::Axis(0), 0);
    let af = feats.data.index_axis(ndarray::Axis(0), feats.num_planes() - 1);
    let w: f64 = mag.iter().map(|m| m * m).sum();
    mag.iter().zip(af.iter()).map(|(m, a)| m * m * a).sum::<f64>() / w
}

#[test]
fn angle_feature_peaks_at_the_source_direction() {
    for theta in [30.0, 75.0, 140.0] {
        let (wave, array, doa) = anechoic_capture(theta);
        assert!((doa - theta).abs() < 1e-9);
        let at_source = weighted_af(&wave, &array, doa);
        assert!(at_source > 0.95, "theta {theta}: {at_source}");
        for other in [0.0, 90.0, 180.0] {
            if (other - theta).abs() > 30.0 {
                assert!(weighted_af(&wave, &array, other) < at_source);
            }
        }
    }
}

#[test]
fn feature_stack_layout() {
    let (wave, array, doa) = anechoic_capture(60.0);
    let spec = stft(&wave, &StftConfig::default()).unwrap();
    let f = extract_features(&spec, &array, doa, 343.0).unwrap();
    assert_eq!(f.num_planes(), 5);
    assert_eq!(f.data.dim(), (5, 257, spec.frames()));
    assert!(f.data.iter().all(|v| v.is_finite()));
    assert!(f.spatial().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
}
