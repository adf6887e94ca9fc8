//! Schroeder backward integration of simulated impulse responses.

use beamkit_core::room::{simulate_rir, ArrayGeometry, RoomConfig};

/// Time (s) for the energy decay curve to fall 60 dB, from a line fitted
/// between -5 and -35 dB.
fn schroeder_t60(h: &[f64], fs: f64) -> f64 {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    let total = edc[0];
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let pts: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, d)| **d <= -5.0 && **d >= -35.0)
        .map(|(i, d)| (i as f64 / fs, *d))
        .collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -60.0 / (sxy / sxx)
}

#[test]
fn energy_decay_reaches_minus_60_db_near_requested_rt60() {
    let array = ArrayGeometry::default().centered_at([2.6, 2.1, 1.4]);
    for (dims, rt60) in [([6.0, 5.0, 3.0], 0.5), ([4.0, 3.5, 2.5], 0.3)] {
        let room = RoomConfig::new(dims, rt60, 16000);
        let h = simulate_rir(&room, [3.4, 2.9, 1.6], &array).unwrap();
        for ch in &h.rir {
            let t60 = schroeder_t60(ch, 16000.0);
            println!("dims {dims:?} rt60 {rt60}: schroeder {t60:.3} s (order {})", room.max_image_order);
            assert!((t60 - rt60).abs() <= 0.2 * rt60, "{t60} vs {rt60}");
        }
    }
}
