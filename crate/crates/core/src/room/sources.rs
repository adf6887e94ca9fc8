use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal::read_wav;

/// Deterministic speech-like test signal: voiced syllables with a gliding
/// pitch and formant-shaped harmonics, short fricative bursts and pauses.
/// Normalized to unit RMS over the whole clip.
pub fn synth_speech(seed: u64, len: usize, sample_rate: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    let mut out = vec![0.0; len];
    let base_f0: f64 = rng.random_range(95.0..230.0);
    let mut pos = (rng.random_range(0.0..0.15) * fs) as usize;

    while pos < len {
        let dur = (rng.random_range(0.12..0.32) * fs) as usize;
        let end = (pos + dur).min(len);
        let f0_start = base_f0 * rng.random_range(0.85..1.2);
        let f0_end = f0_start * rng.random_range(0.8..1.25);
        let formants: Vec<(f64, f64)> = vec![
            (rng.random_range(300.0..900.0), 120.0),
            (rng.random_range(900.0..2300.0), 180.0),
            (rng.random_range(2300.0..3400.0), 260.0),
        ];
        let mut phase = rng.random_range(0.0..2.0 * PI);
        let n = (end - pos).max(1) as f64;
        let harmonics = ((nyquist.min(5000.0)) / f0_start.max(f0_end)) as usize;
        let amps: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                let f0 = if i == 0 { f0_start } else { f0_end };
                (1..=harmonics)
                    .map(|h| {
                        let f = h as f64 * f0;
                        let env: f64 = formants
                            .iter()
                            .map(|(fc, bw)| (-0.5 * ((f - fc) / bw).powi(2)).exp())
                            .sum();
                        (0.05 + env) / (h as f64).sqrt()
                    })
                    .collect()
            })
            .collect();
        for (i, slot) in out[pos..end].iter_mut().enumerate() {
            let frac = i as f64 / n;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            phase += 2.0 * PI * f0 / fs;
            let envelope = (PI * frac).sin().powi(2);
            let mut v = 0.0;
            for (h, (a0, a1)) in amps[0].iter().zip(&amps[1]).enumerate() {
                v += (a0 + (a1 - a0) * frac) * ((h + 1) as f64 * phase).sin();
            }
            *slot += envelope * v;
        }
        pos = end;

        if rng.random_bool(0.35) && pos < len {
            let dur = (rng.random_range(0.04..0.1) * fs) as usize;
            let end = (pos + dur).min(len);
            let n = (end - pos).max(1) as f64;
            let mut prev = 0.0;
            let level = rng.random_range(0.2..0.6);
            for (i, slot) in out[pos..end].iter_mut().enumerate() {
                let white: f64 = StandardNormal.sample(&mut rng);
                // First difference tilts the burst toward high frequencies.
                let hf = white - prev;
                prev = white;
                *slot += level * (PI * i as f64 / n).sin() * hf;
            }
            pos = end;
        }
        pos += (rng.random_range(0.03..0.25) * fs) as usize;
    }

    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Independent 1/f-power noise per channel, unit RMS per channel.
pub fn pink_noise(seed: u64, channels: usize, len: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = len.next_power_of_two().max(2);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    (0..channels)
        .map(|_| {
            let mut buf: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
                .collect();
            fwd.process(&mut buf);
            buf[0] = Complex64::new(0.0, 0.0);
            for k in 1..n {
                let bin = k.min(n - k) as f64;
                buf[k] /= bin.sqrt();
            }
            inv.process(&mut buf);
            let mut row: Vec<f64> = buf[..len].iter().map(|c| c.re).collect();
            let rms = (row.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
            if rms > 0.0 {
                row.iter_mut().for_each(|v| *v /= rms);
            }
            row
        })
        .collect()
}

/// Sorted list of WAV files under a directory, used in place of the
/// synthetic generators when a corpus is supplied.
#[derive(Debug, Clone)]
pub struct SourceCorpus {
    files: Vec<PathBuf>,
}

impl SourceCorpus {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut files = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path
                .extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"))
            {
                files.push(path);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no .wav files in {}",
                dir.display()
            )));
        }
        Ok(Self { files })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Channel 0 of the chosen file, looped or cropped to `len` samples.
    pub fn draw(&self, rng: &mut impl Rng, len: usize, sample_rate: u32) -> Result<Vec<f64>> {
        let path = &self.files[rng.random_range(0..self.files.len())];
        let wave = read_wav(path)?;
        if wave.sample_rate() != sample_rate {
            return Err(Error::InvalidArgument(format!(
                "{} is {} Hz, expected {sample_rate} Hz",
                path.display(),
                wave.sample_rate()
            )));
        }
        let src = wave.channel(0);
        let offset = if src.len() > len {
            rng.random_range(0..=src.len() - len)
        } else {
            0
        };
        Ok((0..len).map(|i| src[(offset + i) % src.len()]).collect())
    }
}
