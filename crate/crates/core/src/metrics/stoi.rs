//! Short-time objective intelligibility.
//!
//! Follows the classic definition (25.6 ms Hann frames at 50% overlap,
//! 15 third-octave bands from 150 Hz, 384 ms segments, -15 dB clipping,
//! 40 dB silent-frame removal) but runs at the input sample rate instead of
//! resampling to 10 kHz: frame and segment lengths are scaled in time and
//! the bands stop below 5 kHz, so the band layout matches the 10 kHz case.
//! Silent frames are dropped before the spectral analysis rather than by
//! time-domain resynthesis. The final score is clamped to `[0, 1]`.

use std::f64::consts::PI;

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct StoiConfig {
    pub frame_seconds: f64,
    pub num_bands: usize,
    pub min_band_hz: f64,
    pub segment_frames: usize,
    pub clip_db: f64,
    pub dynamic_range_db: f64,
}

impl Default for StoiConfig {
    fn default() -> Self {
        Self {
            frame_seconds: 0.0256,
            num_bands: 15,
            min_band_hz: 150.0,
            segment_frames: 30,
            clip_db: -15.0,
            dynamic_range_db: 40.0,
        }
    }
}

pub fn stoi(est: &[f64], reference: &[f64], sample_rate: u32) -> Result<f64> {
    stoi_with(est, reference, sample_rate, &StoiConfig::default())
}

pub fn stoi_with(est: &[f64], reference: &[f64], sample_rate: u32, cfg: &StoiConfig) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    if est.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stoi input".into()));
    }
    if sample_rate == 0 {
        return Err(Error::InvalidArgument("sample rate 0".into()));
    }
    let fs = sample_rate as f64;
    let frame = (cfg.frame_seconds * fs).round() as usize;
    let hop = frame / 2;
    let nfft = (2 * frame).next_power_of_two();
    let needed = frame + (cfg.segment_frames - 1) * hop;
    if reference.len() < needed {
        return Err(Error::TooShort {
            len: reference.len(),
            needed,
        });
    }

    // Hann without the zero endpoints, as in the reference implementation.
    let window: Vec<f64> = (0..frame)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * (n + 1) as f64 / (frame + 1) as f64).cos())
        .collect();
    let starts: Vec<usize> = (0..=(reference.len() - frame) / hop).map(|i| i * hop).collect();
    let energy_db = |s: usize| {
        let e: f64 = (0..frame).map(|n| (window[n] * reference[s + n]).powi(2)).sum();
        20.0 * (e.sqrt() + f64::EPSILON).log10()
    };
    let energies: Vec<f64> = starts.iter().map(|&s| energy_db(s)).collect();
    let max_e = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, e)| max_e - **e < cfg.dynamic_range_db)
        .map(|(s, _)| *s)
        .collect();
    if kept.len() < cfg.segment_frames {
        return Err(Error::TooShort {
            len: kept.len() * hop,
            needed,
        });
    }

    let bands = third_octave_bands(nfft, fs, cfg.num_bands, cfg.min_band_hz);
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let band_envelopes = |x: &[f64]| -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(kept.len()); bands.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for &s in &kept {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for n in 0..frame {
                buf[n] = Complex64::new(window[n] * x[s + n], 0.0);
            }
            fft.process(&mut buf);
            for (j, &(lo, hi)) in bands.iter().enumerate() {
                let p: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
                out[j].push(p.sqrt());
            }
        }
        out
    };
    let x_env = band_envelopes(reference);
    let y_env = band_envelopes(est);

    let n = cfg.segment_frames;
    let clip = 1.0 + 10f64.powf(-cfg.clip_db / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for end in n..=kept.len() {
        for j in 0..bands.len() {
            let xs = &x_env[j][end - n..end];
            let ys = &y_env[j][end - n..end];
            let xn = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if yn > 0.0 { xn / yn } else { 0.0 };
            let y_clip: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (alpha * y).min(clip * x)).collect();
            total += correlation(xs, &y_clip);
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return if aa == 0.0 && bb == 0.0 { 1.0 } else { 0.0 };
    }
    ab / (aa * bb).sqrt()
}

/// `[lo, hi)` FFT-bin ranges, edges snapped to the nearest bin.
fn third_octave_bands(nfft: usize, fs: f64, num_bands: usize, min_hz: f64) -> Vec<(usize, usize)> {
    let df = fs / nfft as f64;
    let max_bin = nfft / 2;
    (0..num_bands)
        .map(|k| {
            let cf = min_hz * 2f64.powf(k as f64 / 3.0);
            let lo = cf * 2f64.powf(-1.0 / 6.0);
            let hi = cf * 2f64.powf(1.0 / 6.0);
            let lo_bin = ((lo / df).round() as usize).min(max_bin);
            let hi_bin = ((hi / df).round() as usize).min(max_bin + 1);
            (lo_bin, hi_bin.max(lo_bin + 1))
        })
        .collect()
}
