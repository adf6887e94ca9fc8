use std::f64::consts::PI;

use ndarray::{Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::MultichannelWave;
use crate::error::{Error, Result};

/// Analysis/synthesis taper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// `sin(pi (n + 1/2) / N)`, the square root of a half-sample shifted
    /// periodic Hann window. Its square overlap-adds to a constant at
    /// `hop = N / 2^k` and it is nonzero on every sample, so uncentered
    /// frames still invert exactly at the signal edges.
    SqrtHann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms window, 16 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            window_len: 512,
            hop: 256,
            fft_size: 512,
            window: WindowKind::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize, fft_size: usize, window: WindowKind) -> Result<Self> {
        let cfg = Self {
            window_len,
            hop,
            fft_size,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 8 ms window and 4 ms hop at 16 kHz; F = 65.
    pub fn toy() -> Self {
        Self {
            window_len: 128,
            hop: 64,
            fft_size: 128,
            window: WindowKind::SqrtHann,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `1 + ceil((len - window_len) / hop)`.
    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.window_len {
            1
        } else {
            1 + (len - self.window_len).div_ceil(self.hop)
        }
    }

    pub fn bin_frequency(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.fft_size as f64
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| match self.window {
                WindowKind::SqrtHann => (PI * (i as f64 + 0.5) / n).sin(),
                WindowKind::Rectangular => 1.0,
            })
            .collect()
    }

    /// Average of the squared window per hop; the factor by which
    /// spectrogram energy exceeds time-domain energy.
    pub fn window_gain(&self) -> f64 {
        self.window_coefficients().iter().map(|w| w * w).sum::<f64>() / self.hop as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window_len == 0 {
            return Err(Error::Config("hop and window_len must be positive".into()));
        }
        if self.hop > self.window_len || self.window_len > self.fft_size {
            return Err(Error::Config(format!(
                "need hop <= window_len <= fft_size, got {} / {} / {}",
                self.hop, self.window_len, self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        self.check_cola()
    }

    /// The squared window, shifted by multiples of the hop, must sum to a
    /// constant.
    fn check_cola(&self) -> Result<()> {
        let w = self.window_coefficients();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|v| v * v).sum())
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        if max - min > 1e-9 * max {
            return Err(Error::Config(format!(
                "{:?} window of {} samples is not constant-overlap-add at hop {}",
                self.window, self.window_len, self.hop
            )));
        }
        Ok(())
    }
}

/// Complex STFT coefficients indexed `(channel, frame, frequency)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: Array3<Complex64>,
    config: StftConfig,
    original_length: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn new(
        bins: Array3<Complex64>,
        config: StftConfig,
        original_length: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let f = bins.dim().2;
        if f != config.num_bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {f} bins, config implies {}",
                config.num_bins()
            )));
        }
        if bins.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram bins".into()));
        }
        Ok(Self {
            bins,
            config,
            original_length,
            sample_rate,
        })
    }

    /// Same framing and metadata, new coefficients.
    pub fn with_bins(&self, bins: Array3<Complex64>) -> Result<Self> {
        let (_, t, f) = bins.dim();
        if t != self.frames() || f != self.freqs() {
            return Err(Error::Shape(format!(
                "expected (*, {}, {}), got (*, {t}, {f})",
                self.frames(),
                self.freqs()
            )));
        }
        Self::new(bins, self.config, self.original_length, self.sample_rate)
    }

    pub fn bins(&self) -> &Array3<Complex64> {
        &self.bins
    }

    pub fn into_bins(self) -> Array3<Complex64> {
        self.bins
    }

    pub fn channel(&self, m: usize) -> ArrayView2<'_, Complex64> {
        self.bins.index_axis(ndarray::Axis(0), m)
    }

    pub fn channels(&self) -> usize {
        self.bins.dim().0
    }

    pub fn frames(&self) -> usize {
        self.bins.dim().1
    }

    pub fn freqs(&self) -> usize {
        self.bins.dim().2
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        self.config.bin_frequency(bin, self.sample_rate)
    }

    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }
}

pub fn stft(wave: &MultichannelWave, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let len = wave.len();
    if len < cfg.window_len {
        return Err(Error::TooShort {
            len,
            needed: cfg.window_len,
        });
    }
    let frames = cfg.num_frames(len);
    let bins_per_frame = cfg.num_bins();
    let window = cfg.window_coefficients();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let mut out = Array3::zeros((wave.channels(), frames, bins_per_frame));

    for (m, x) in wave.samples().iter().enumerate() {
        for t in 0..frames {
            let start = t * cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (n, w) in window.iter().enumerate() {
                if let Some(v) = x.get(start + n) {
                    buf[n].re = v * w;
                }
            }
            fft.process(&mut buf);
            for k in 0..bins_per_frame {
                out[[m, t, k]] = buf[k];
            }
        }
    }
    Spectrogram::new(out, *cfg, len, wave.sample_rate())
}

/// Per-sample overlap-add normalisation: sum over frames of the squared
/// synthesis window.
fn window_square_sum(cfg: &StftConfig, frames: usize, len: usize) -> Vec<f64> {
    let window = cfg.window_coefficients();
    let mut norm = vec![0.0; len];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (n, w) in window.iter().enumerate() {
            if let Some(slot) = norm.get_mut(start + n) {
                *slot += w * w;
            }
        }
    }
    norm
}

/// Weighted overlap-add inverse, truncated to `original_length`.
pub fn istft(spec: &Spectrogram, original_length: usize) -> Result<MultichannelWave> {
    let cfg = spec.config();
    cfg.validate()?;
    let n_fft = cfg.fft_size;
    let half = n_fft / 2;
    let window = cfg.window_coefficients();
    let norm = window_square_sum(cfg, spec.frames(), original_length);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut out = vec![vec![0.0; original_length]; spec.channels()];

    for (m, y) in out.iter_mut().enumerate() {
        for t in 0..spec.frames() {
            for k in 0..=half {
                buf[k] = spec.bins[[m, t, k]];
            }
            for k in 1..half {
                buf[n_fft - k] = buf[k].conj();
            }
            ifft.process(&mut buf);
            let start = t * cfg.hop;
            for (n, w) in window.iter().enumerate() {
                if let Some(slot) = y.get_mut(start + n) {
                    *slot += buf[n].re / n_fft as f64 * w;
                }
            }
        }
        for (v, d) in y.iter_mut().zip(&norm) {
            *v = if *d > 1e-12 { *v / d } else { 0.0 };
        }
    }
    MultichannelWave::new(out, spec.sample_rate())
}

/// Vector-Jacobian product of [`istft`]: maps a gradient on the output wave
/// to a gradient on the spectrogram. The real part of each returned bin is
/// the derivative with respect to the bin's real part, the imaginary part
/// the derivative with respect to its imaginary part.
pub fn istft_adjoint(
    grad: &[Vec<f64>],
    cfg: &StftConfig,
    frames: usize,
) -> Result<Array3<Complex64>> {
    cfg.validate()?;
    let len = grad.first().map_or(0, Vec::len);
    if grad.iter().any(|g| g.len() != len) {
        return Err(Error::Shape("ragged gradient channels".into()));
    }
    let n_fft = cfg.fft_size;
    let half = n_fft / 2;
    let window = cfg.window_coefficients();
    let norm = window_square_sum(cfg, frames, len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut out = Array3::zeros((grad.len(), frames, half + 1));

    for (m, g) in grad.iter().enumerate() {
        let scaled: Vec<f64> = g
            .iter()
            .zip(&norm)
            .map(|(v, d)| if *d > 1e-12 { v / d } else { 0.0 })
            .collect();
        for t in 0..frames {
            let start = t * cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (n, w) in window.iter().enumerate() {
                if let Some(v) = scaled.get(start + n) {
                    buf[n].re = v * w;
                }
            }
            fft.process(&mut buf);
            for k in 0..=half {
                let c = if k == 0 || k == half { 1.0 } else { 2.0 } / n_fft as f64;
                let im = if k == 0 || k == half { 0.0 } else { buf[k].im * c };
                out[[m, t, k]] = Complex64::new(buf[k].re * c, im);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(channels: usize, len: usize, seed: u64) -> MultichannelWave {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..channels)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        MultichannelWave::new(rows, 16000).unwrap()
    }

    fn rel_err(a: &MultichannelWave, b: &MultichannelWave) -> f64 {
        let num: f64 = a
            .samples()
            .iter()
            .flatten()
            .zip(b.samples().iter().flatten())
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        (num / b.energy()).sqrt()
    }

    #[test]
    fn frame_count_pads_tail() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.num_frames(512), 1);
        assert_eq!(cfg.num_frames(513), 2);
        assert_eq!(cfg.num_frames(768), 2);
        assert_eq!(cfg.num_frames(64000), 1 + (64000 - 512usize).div_ceil(256));
    }

    #[test]
    fn rejects_non_cola_config() {
        assert!(StftConfig::new(512, 200, 512, WindowKind::SqrtHann).is_err());
        assert!(StftConfig::new(512, 256, 500, WindowKind::SqrtHann).is_err());
        assert!(StftConfig::new(512, 512, 256, WindowKind::Rectangular).is_err());
        assert!(StftConfig::new(512, 128, 1024, WindowKind::SqrtHann).is_ok());
    }

    #[test]
    fn too_short_input_is_an_error() {
        let wave = noise(1, 100, 0);
        assert!(matches!(
            stft(&wave, &StftConfig::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn zeros_map_to_zeros() {
        let wave = MultichannelWave::zeros(2, 2000, 16000).unwrap();
        let spec = stft(&wave, &StftConfig::default()).unwrap();
        assert!(spec.bins().iter().all(|c| c.norm() == 0.0));
        let back = istft(&spec, 2000).unwrap();
        assert!(back.samples().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_channels_give_identical_slices() {
        let x = noise(1, 3000, 3).channel(0).to_vec();
        let wave = MultichannelWave::new(vec![x.clone(), x], 16000).unwrap();
        let spec = stft(&wave, &StftConfig::default()).unwrap();
        assert_eq!(spec.channel(0), spec.channel(1));
    }

    #[test]
    fn bin_centred_sine_concentrates_in_its_bin() {
        let cfg = StftConfig::new(512, 256, 512, WindowKind::Rectangular).unwrap();
        let k = 37;
        let len = 4096;
        let x: Vec<f64> = (0..len)
            .map(|n| (2.0 * PI * k as f64 * n as f64 / 512.0).sin())
            .collect();
        let spec = stft(&MultichannelWave::mono(x.clone(), 16000).unwrap(), &cfg).unwrap();
        // Oracle: direct DFT of the first frame.
        let direct: Vec<f64> = (0..=256)
            .map(|b| {
                let c: Complex64 = (0..512)
                    .map(|n| x[n] * Complex64::from_polar(1.0, -2.0 * PI * (b * n) as f64 / 512.0))
                    .sum();
                c.norm_sqr()
            })
            .collect();
        let direct_share = direct[k] / direct.iter().sum::<f64>();
        assert!(direct_share > 0.99);
        for t in 0..spec.frames() {
            let energies: Vec<f64> = (0..spec.freqs()).map(|f| spec.bins()[[0, t, f]].norm_sqr()).collect();
            let share = energies[k] / energies.iter().sum::<f64>();
            assert!(share > 0.99, "frame {t} share {share}");
        }
        assert!((spec.bins()[[0, 0, k]].norm_sqr() - direct[k]).abs() < 1e-6 * direct[k]);
    }

    #[test]
    fn roundtrip_is_exact_including_edges() {
        let wave = noise(4, 16000, 11);
        let spec = stft(&wave, &StftConfig::default()).unwrap();
        let back = istft(&spec, wave.len()).unwrap();
        assert!(rel_err(&back, &wave) < 1e-6);
        assert!((back.channel(0)[0] - wave.channel(0)[0]).abs() < 1e-9);
        assert!((back.channel(3)[15999] - wave.channel(3)[15999]).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_preserves_channel_order() {
        let rows: Vec<Vec<f64>> = (0..4).map(|m| vec![0.1 * (m + 1) as f64; 1000]).collect();
        let wave = MultichannelWave::new(rows, 16000).unwrap();
        let back = istft(&stft(&wave, &StftConfig::toy()).unwrap(), 1000).unwrap();
        for m in 0..4 {
            assert!((back.channel(m)[500] - 0.1 * (m + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_with_window_gain() {
        let cfg = StftConfig::default();
        let wave = noise(1, 32000, 5);
        let spec = stft(&wave, &cfg).unwrap();
        let n = cfg.fft_size as f64;
        let mut spec_energy = 0.0;
        for t in 0..spec.frames() {
            for f in 0..spec.freqs() {
                let weight = if f == 0 || f == spec.freqs() - 1 { 1.0 } else { 2.0 };
                spec_energy += weight * spec.bins()[[0, t, f]].norm_sqr() / n;
            }
        }
        let ratio = spec_energy / (wave.energy() * cfg.window_gain());
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn istft_rejects_non_cola_spectrogram() {
        let bad = StftConfig {
            window_len: 512,
            hop: 300,
            fft_size: 512,
            window: WindowKind::SqrtHann,
        };
        let spec = Spectrogram::new(Array3::zeros((1, 3, 257)), bad, 1100, 16000).unwrap();
        assert!(matches!(istft(&spec, 1100), Err(Error::Config(_))));
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let cfg = StftConfig::toy();
        let len = 900;
        let frames = cfg.num_frames(len);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bins = Array3::from_shape_fn((2, frames, cfg.num_bins()), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let spec = Spectrogram::new(bins.clone(), cfg, len, 16000).unwrap();
        let y = istft(&spec, len).unwrap();
        let g = noise(2, len, 10);
        let lhs: f64 = y
            .samples()
            .iter()
            .flatten()
            .zip(g.samples().iter().flatten())
            .map(|(a, b)| a * b)
            .sum();
        let adj = istft_adjoint(g.samples(), &cfg, frames).unwrap();
        let rhs: f64 = bins
            .iter()
            .zip(adj.iter())
            .map(|(x, d)| x.re * d.re + x.im * d.im)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
