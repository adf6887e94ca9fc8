use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::geometry::{ArrayGeometry, Point3};
use super::SPEED_OF_SOUND;
use crate::error::{Error, Result};

pub const MAX_IMAGE_ORDER_CAP: usize = 30;

/// Half width, in taps, of the windowed-sinc fractional delay kernel.
const SINC_HALF_WIDTH: isize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayInterpolation {
    #[default]
    Nearest,
    Sinc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    /// Length, width, height in meters.
    pub dimensions: Point3,
    pub rt60: f64,
    pub max_image_order: usize,
    pub speed_of_sound: f64,
    pub sample_rate: u32,
    #[serde(default)]
    pub interpolation: DelayInterpolation,
}

impl RoomConfig {
    /// Image order picked by [`auto_image_order`].
    pub fn new(dimensions: Point3, rt60: f64, sample_rate: u32) -> Self {
        Self {
            dimensions,
            rt60,
            max_image_order: auto_image_order(dimensions, rt60, SPEED_OF_SOUND),
            speed_of_sound: SPEED_OF_SOUND,
            sample_rate,
            interpolation: DelayInterpolation::Nearest,
        }
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [l, w, h] = self.dimensions;
        2.0 * (l * w + l * h + w * h)
    }

    pub fn contains(&self, p: Point3) -> bool {
        p.iter()
            .zip(&self.dimensions)
            .all(|(v, d)| *v > 0.0 && v < d)
    }

    /// Pressure reflection coefficient shared by all six walls.
    pub fn reflection_coefficient(&self) -> Result<f64> {
        if self.rt60 <= 0.0 {
            return Ok(0.0);
        }
        let alpha = sabine_absorption(self.volume(), self.surface(), self.rt60, self.speed_of_sound);
        if alpha > 1.0 {
            return Err(Error::UnreachableRt60 {
                rt60: self.rt60,
                absorption: alpha,
            });
        }
        Ok((1.0 - alpha).sqrt())
    }

    /// Enough taps to hold the rt60 tail, and at least the longest direct path
    /// across the room plus the interpolation kernel.
    pub fn num_taps(&self) -> usize {
        let fs = self.sample_rate as f64;
        let diag = self.dimensions.iter().map(|d| d * d).sum::<f64>().sqrt();
        let tail = (self.rt60 * fs).ceil() as usize;
        let direct = (diag / self.speed_of_sound * fs).ceil() as usize + SINC_HALF_WIDTH as usize + 1;
        tail.max(direct)
    }

    fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config(format!("room dimensions {:?}", self.dimensions)));
        }
        if !(self.rt60 >= 0.0) || !(self.speed_of_sound > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("rt60, speed of sound and sample rate".into()));
        }
        Ok(())
    }
}

/// Energy absorption coefficient from Sabine's formula,
/// `alpha = 24 ln(10) V / (c S T60)`.
pub fn sabine_absorption(volume: f64, surface: f64, rt60: f64, speed_of_sound: f64) -> f64 {
    24.0 * 10f64.ln() * volume / (speed_of_sound * surface * rt60)
}

/// Reflection order whose path length covers `c * rt60` along the smallest
/// room dimension, capped at [`MAX_IMAGE_ORDER_CAP`].
pub fn auto_image_order(dimensions: Point3, rt60: f64, speed_of_sound: f64) -> usize {
    let min_dim = dimensions.iter().cloned().fold(f64::INFINITY, f64::min);
    let order = (speed_of_sound * rt60 / min_dim).ceil();
    if order.is_finite() && order > 0.0 {
        (order as usize).min(MAX_IMAGE_ORDER_CAP)
    } else {
        0
    }
}

/// One impulse response per microphone, `rir[m][tap]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponseSet {
    pub rir: Vec<Vec<f64>>,
}

impl ImpulseResponseSet {
    pub fn num_taps(&self) -> usize {
        self.rir.first().map_or(0, Vec::len)
    }
}

pub fn simulate_rir(room: &RoomConfig, source: Point3, array: &ArrayGeometry) -> Result<ImpulseResponseSet> {
    room.validate()?;
    array.validate()?;
    if !room.contains(source) {
        return Err(Error::Geometry(format!("source {source:?} outside room")));
    }
    if let Some(p) = array.mic_positions.iter().find(|p| !room.contains(**p)) {
        return Err(Error::Geometry(format!("mic {p:?} outside room")));
    }
    let beta = room.reflection_coefficient()?;
    let taps = room.num_taps();
    let fs = room.sample_rate as f64;
    let order = room.max_image_order as i64;
    let [lx, ly, lz] = room.dimensions;

    let rir = array
        .mic_positions
        .iter()
        .map(|mic| {
            let mut h = vec![0.0; taps];
            // Image (u, l) along one axis sits at (1 - 2u) s + 2 l L and has
            // |l - u| + |l| wall hits; its reflection index is |2l - u|.
            for u in 0..2i64 {
                for v in 0..2i64 {
                    for w in 0..2i64 {
                        for l in -order..=order {
                            let ox = (2 * l - u).abs();
                            if ox > order {
                                continue;
                            }
                            let dx = (1 - 2 * u) as f64 * source[0] + 2.0 * l as f64 * lx - mic[0];
                            for m in -order..=order {
                                let oy = (2 * m - v).abs();
                                if ox + oy > order {
                                    continue;
                                }
                                let dy = (1 - 2 * v) as f64 * source[1] + 2.0 * m as f64 * ly - mic[1];
                                for n in -order..=order {
                                    let oz = (2 * n - w).abs();
                                    if ox + oy + oz > order {
                                        continue;
                                    }
                                    let dz = (1 - 2 * w) as f64 * source[2] + 2.0 * n as f64 * lz - mic[2];
                                    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                                    let bounces = (l - u).abs() + l.abs() + (m - v).abs() + m.abs() + (n - w).abs() + n.abs();
                                    let gain = if bounces == 0 { 1.0 } else { beta.powi(bounces as i32) };
                                    if gain == 0.0 {
                                        continue;
                                    }
                                    let amp = gain / (4.0 * PI * dist);
                                    let delay = dist / room.speed_of_sound * fs;
                                    deposit(&mut h, delay, amp, room.interpolation);
                                }
                            }
                        }
                    }
                }
            }
            h
        })
        .collect();
    Ok(ImpulseResponseSet { rir })
}

fn deposit(h: &mut [f64], delay: f64, amp: f64, interp: DelayInterpolation) {
    match interp {
        DelayInterpolation::Nearest => {
            let tap = delay.round() as usize;
            if let Some(slot) = h.get_mut(tap) {
                *slot += amp;
            }
        }
        DelayInterpolation::Sinc => {
            let centre = delay.round() as isize;
            for k in -SINC_HALF_WIDTH..=SINC_HALF_WIDTH {
                let tap = centre + k;
                if tap < 0 || tap as usize >= h.len() {
                    continue;
                }
                let x = tap as f64 - delay;
                let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
                let hann = 0.5 * (1.0 + (PI * x / (SINC_HALF_WIDTH as f64 + 1.0)).cos());
                h[tap as usize] += amp * sinc * hann;
            }
        }
    }
}

/// Linear convolution via FFT, truncated to `out_len` samples.
pub fn fft_convolve(signal: &[f64], kernel: &[f64], out_len: usize) -> Vec<f64> {
    if signal.is_empty() || kernel.is_empty() {
        return vec![0.0; out_len];
    }
    let full = signal.len() + kernel.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(signal.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut b: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(kernel.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    (0..out_len)
        .map(|i| if i < full { a[i].re / n as f64 } else { 0.0 })
        .collect()
}
