//! Ops that touch spectrograms: mask-weighted covariance tokens, complex
//! beamforming, inverse STFT and the loss terms.

use std::rc::Rc;

use beamkit_core::metrics::SI_SDR_CAP_DB;
use beamkit_core::signal::{istft, istft_adjoint, Spectrogram, StftConfig};
use beamkit_core::Complex64;
use ndarray::Array3;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Complex multichannel STFT held outside the graph, `[M, T, F]`.
pub type Observation = Rc<Array3<Complex64>>;

impl Graph {
    /// Frame-level covariance tokens for two masks applied to `y`.
    ///
    /// Masks are `[T, F, 2]` (real, imaginary). Since `(m y)(m y)^H =
    /// |m|^2 y y^H`, each token is `|m|^2` times the outer product of the
    /// observation. Output `[T, F, 4 M^2]`, flattened as
    /// (stream, re/im, row, column).
    pub fn covariance_tokens(&mut self, speech_mask: Var, noise_mask: Var, y: Observation) -> Result<Var> {
        let (m, t_n, f_n) = y.dim();
        for v in [speech_mask, noise_mask] {
            if self.shape(v) != [t_n, f_n, 2] {
                return Err(shape_err(
                    "covariance_tokens",
                    format!("mask {:?} vs observation (T, F) = ({t_n}, {f_n})", self.shape(v)),
                ));
            }
        }
        let mm = m * m;
        let width = 4 * mm;
        // outer products once: [T, F, 2 * M^2] as (re/im, row, col)
        let mut outer = vec![0.0; t_n * f_n * 2 * mm];
        for t in 0..t_n {
            for f in 0..f_n {
                let base = (t * f_n + f) * 2 * mm;
                for i in 0..m {
                    for j in 0..m {
                        let v = y[[i, t, f]] * y[[j, t, f]].conj();
                        outer[base + i * m + j] = v.re;
                        outer[base + mm + i * m + j] = v.im;
                    }
                }
            }
        }
        let power = |mask: &Tensor| -> Vec<f64> { mask.data.chunks(2).map(|c| c[0] * c[0] + c[1] * c[1]).collect() };
        let ps = power(self.value(speech_mask));
        let pn = power(self.value(noise_mask));
        let mut data = vec![0.0; t_n * f_n * width];
        for k in 0..t_n * f_n {
            let o = &outer[k * 2 * mm..(k + 1) * 2 * mm];
            let row = &mut data[k * width..(k + 1) * width];
            for (d, v) in row[..2 * mm].iter_mut().zip(o) {
                *d = ps[k] * v;
            }
            for (d, v) in row[2 * mm..].iter_mut().zip(o) {
                *d = pn[k] * v;
            }
        }
        let outer = Rc::new(outer);
        self.push(
            "covariance_tokens",
            Tensor::new(vec![t_n, f_n, width], data)?,
            &[speech_mask, noise_mask],
            move |c| {
                let g = &c.grad.data;
                let grad_for = |stream: usize, mask: &Tensor| -> Tensor {
                    let mut d = vec![0.0; mask.numel()];
                    for k in 0..t_n * f_n {
                        let o = &outer[k * 2 * mm..(k + 1) * 2 * mm];
                        let gs = &g[k * width + stream * 2 * mm..k * width + (stream + 1) * 2 * mm];
                        let s: f64 = gs.iter().zip(o).map(|(a, b)| a * b).sum();
                        d[2 * k] = 2.0 * mask.data[2 * k] * s;
                        d[2 * k + 1] = 2.0 * mask.data[2 * k + 1] * s;
                    }
                    Tensor {
                        shape: mask.shape.clone(),
                        data: d,
                    }
                };
                vec![
                    c.needs[0].then(|| grad_for(0, c.inputs[0])),
                    c.needs[1].then(|| grad_for(1, c.inputs[1])),
                ]
            },
        )
    }

    /// Per-bin `w^H y` with `w: [T, F, M, 2]` -> `[T, F, 2]`.
    pub fn beamform(&mut self, w: Var, y: Observation) -> Result<Var> {
        let (m, t_n, f_n) = y.dim();
        if self.shape(w) != [t_n, f_n, m, 2] {
            return Err(shape_err("beamform", format!("weights {:?} vs (T, F, M) = ({t_n}, {f_n}, {m})", self.shape(w))));
        }
        let wv = &self.value(w).data;
        let mut data = vec![0.0; t_n * f_n * 2];
        for t in 0..t_n {
            for f in 0..f_n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..m {
                    let base = ((t * f_n + f) * m + k) * 2;
                    acc += Complex64::new(wv[base], -wv[base + 1]) * y[[k, t, f]];
                }
                data[(t * f_n + f) * 2] = acc.re;
                data[(t * f_n + f) * 2 + 1] = acc.im;
            }
        }
        self.push("beamform", Tensor::new(vec![t_n, f_n, 2], data)?, &[w], move |c| {
            // out = sum conj(w) y ; d out_re / d w_re = y_re, d out_im / d w_re = y_im,
            // d out_re / d w_im = y_im, d out_im / d w_im = -y_re
            let g = &c.grad.data;
            let mut d = vec![0.0; t_n * f_n * m * 2];
            for t in 0..t_n {
                for f in 0..f_n {
                    let (gr, gi) = (g[(t * f_n + f) * 2], g[(t * f_n + f) * 2 + 1]);
                    for k in 0..m {
                        let yv = y[[k, t, f]];
                        let base = ((t * f_n + f) * m + k) * 2;
                        d[base] = gr * yv.re + gi * yv.im;
                        d[base + 1] = gr * yv.im - gi * yv.re;
                    }
                }
            }
            vec![Some(Tensor {
                shape: c.inputs[0].shape.clone(),
                data: d,
            })]
        })
    }

    /// Inverse STFT of a single-channel `[T, F, 2]` spectrogram to `[len]`.
    pub fn istft(&mut self, x: Var, cfg: StftConfig, length: usize, sample_rate: u32) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != cfg.num_bins() || s[2] != 2 {
            return Err(shape_err("istft", format!("{s:?} with {} bins", cfg.num_bins())));
        }
        let frames = s[0];
        let v = &self.value(x).data;
        let bins = Array3::from_shape_fn((1, frames, s[1]), |(_, t, f)| {
            let k = (t * s[1] + f) * 2;
            Complex64::new(v[k], v[k + 1])
        });
        let spec = Spectrogram::new(bins, cfg, length, sample_rate)?;
        let wave = istft(&spec, length)?;
        let out = Tensor::new(vec![length], wave.channel(0).to_vec())?;
        self.push("istft", out, &[x], move |c| {
            let adj = istft_adjoint(&[c.grad.data.clone()], &cfg, frames).expect("validated config");
            let data = adj.iter().flat_map(|z| [z.re, z.im]).collect();
            vec![Some(Tensor {
                shape: c.inputs[0].shape.clone(),
                data,
            })]
        })
    }

    /// `-SI-SDR(est, reference)` in dB, clamped to the metric cap (zero
    /// gradient once clamped).
    pub fn neg_si_sdr(&mut self, est: Var, reference: Rc<Vec<f64>>) -> Result<Var> {
        let e = &self.value(est).data;
        if e.len() != reference.len() {
            return Err(shape_err("neg_si_sdr", format!("{} vs {} samples", e.len(), reference.len())));
        }
        let rr: f64 = reference.iter().map(|v| v * v).sum();
        if rr == 0.0 {
            return Err(beamkit_core::Error::ZeroPower("si_sdr reference".into()).into());
        }
        let d: f64 = e.iter().zip(reference.iter()).map(|(a, b)| a * b).sum();
        let ee: f64 = e.iter().map(|v| v * v).sum();
        let s = d * d / rr;
        let n = ee - s;
        let raw = 10.0 * (s / n).log10();
        let clamped = !(raw.is_finite() && raw.abs() < SI_SDR_CAP_DB);
        let value = if raw.is_nan() || n <= 0.0 {
            -SI_SDR_CAP_DB
        } else {
            -raw.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB)
        };
        self.push("neg_si_sdr", Tensor::scalar(value), &[est], move |c| {
            let g = c.grad.item();
            let e = &c.inputs[0].data;
            if clamped {
                return vec![Some(Tensor::zeros(&c.inputs[0].shape))];
            }
            let k = -10.0 / std::f64::consts::LN_10 * g;
            let data = e
                .iter()
                .zip(reference.iter())
                .map(|(ev, rv)| {
                    let ds = 2.0 * d * rv / rr;
                    let dn = 2.0 * ev - ds;
                    k * (ds / s - dn / n)
                })
                .collect();
            vec![Some(Tensor {
                shape: c.inputs[0].shape.clone(),
                data,
            })]
        })
    }

    /// Mean squared difference from a constant target.
    pub fn mse(&mut self, a: Var, target: Rc<Tensor>) -> Result<Var> {
        if self.shape(a) != target.shape {
            return Err(shape_err("mse", format!("{:?} vs {:?}", self.shape(a), target.shape)));
        }
        let n = target.numel() as f64;
        let v: f64 = self.value(a).data.iter().zip(&target.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        self.push("mse", Tensor::scalar(v), &[a], move |c| {
            let g = c.grad.item();
            let data = c.inputs[0].data.iter().zip(&target.data).map(|(x, y)| 2.0 * (x - y) * g / n).collect();
            vec![Some(Tensor {
                shape: c.inputs[0].shape.clone(),
                data,
            })]
        })
    }
}
