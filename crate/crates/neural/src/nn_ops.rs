//! Convolution, normalisation, activation and recurrent ops.

use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::graph::{gemm, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }
}

const NO_SRC: u32 = u32::MAX;

impl Graph {
    /// `x: [C, H, W]`, `w: [O, C, KH, KW]`, `b: [O]` -> `[O, Ho, Wo]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || self.shape(b) != [ws[0]] {
            return Err(shape_err("conv2d", format!("x {xs:?}, w {ws:?}, b {:?}", self.shape(b))));
        }
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        let (dh, dw) = spec.dilation;
        let span_h = dh * (kh - 1) + 1;
        let span_w = dw * (kw - 1) + 1;
        if sh == 0 || sw == 0 || h + 2 * ph < span_h || wd + 2 * pw < span_w {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} does not fit input {h}x{wd}")));
        }
        let ho = (h + 2 * ph - span_h) / sh + 1;
        let wo = (wd + 2 * pw - span_w) / sw + 1;
        let k = c * kh * kw;
        let p = ho * wo;

        // im2col source indices, shared by forward and backward
        let mut map = vec![NO_SRC; k * p];
        for ci in 0..c {
            for a in 0..kh {
                for bb in 0..kw {
                    let row = (ci * kh + a) * kw + bb;
                    for i in 0..ho {
                        let y = (i * sh + a * dh) as isize - ph as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for j in 0..wo {
                            let xx = (j * sw + bb * dw) as isize - pw as isize;
                            if xx < 0 || xx as usize >= wd {
                                continue;
                            }
                            map[row * p + i * wo + j] = ((ci * h + y as usize) * wd + xx as usize) as u32;
                        }
                    }
                }
            }
        }
        let map = Rc::new(map);
        let xv = &self.value(x).data;
        let cols: Vec<f64> = map.iter().map(|&s| if s == NO_SRC { 0.0 } else { xv[s as usize] }).collect();
        let mut out = vec![0.0; o * p];
        gemm(&self.value(w).data, o, k, false, &cols, k, p, false, &mut out, 0.0);
        for (oi, bv) in self.value(b).data.iter().enumerate() {
            for v in &mut out[oi * p..(oi + 1) * p] {
                *v += bv;
            }
        }
        let cols = Rc::new(cols);
        self.push("conv2d", Tensor::new(vec![o, ho, wo], out)?, &[x, w, b], move |ctx| {
            let g = &ctx.grad.data;
            let dx = ctx.needs[0].then(|| {
                let mut dcols = vec![0.0; k * p];
                gemm(&ctx.inputs[1].data, o, k, true, g, o, p, false, &mut dcols, 0.0);
                let mut d = vec![0.0; c * h * wd];
                for (s, v) in map.iter().zip(&dcols) {
                    if *s != NO_SRC {
                        d[*s as usize] += v;
                    }
                }
                Tensor {
                    shape: vec![c, h, wd],
                    data: d,
                }
            });
            let dw = ctx.needs[1].then(|| {
                let mut d = vec![0.0; o * k];
                gemm(g, o, p, false, &cols, k, p, true, &mut d, 0.0);
                Tensor {
                    shape: vec![o, c, kh, kw],
                    data: d,
                }
            });
            let db = ctx.needs[2].then(|| Tensor {
                shape: vec![o],
                data: (0..o).map(|oi| g[oi * p..(oi + 1) * p].iter().sum()).collect(),
            });
            vec![dx, dw, db]
        })
    }

    /// Dilated 1-D convolution over `[C, T]` with "same" zero padding for
    /// odd kernels.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 3 {
            return Err(shape_err("conv1d", format!("x {xs:?}, w {ws:?}")));
        }
        let x3 = self.reshape(x, &[xs[0], 1, xs[1]])?;
        let w4 = self.reshape(w, &[ws[0], ws[1], 1, ws[2]])?;
        let pad = dilation * (ws[2] - 1) / 2;
        let y = self.conv2d(
            x3,
            w4,
            b,
            Conv2dSpec {
                stride: (1, 1),
                padding: (0, pad),
                dilation: (1, dilation),
            },
        )?;
        let t = self.shape(y)[2];
        self.reshape(y, &[ws[0], t])
    }

    /// Per-channel PReLU on a channel-first tensor `[C, ...]`.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || self.shape(slope) != [xs[0]] {
            return Err(shape_err("prelu", format!("x {xs:?}, slope {:?}", self.shape(slope))));
        }
        let inner = self.value(x).numel() / xs[0];
        let a = self.value(slope).data.clone();
        let data = self
            .value(x)
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| if *v > 0.0 { *v } else { a[i / inner] * v })
            .collect();
        self.push("prelu", Tensor { shape: xs, data }, &[x, slope], move |c| {
            let (xv, av, g) = (&c.inputs[0].data, &c.inputs[1].data, &c.grad.data);
            let dx = c.needs[0].then(|| Tensor {
                shape: c.inputs[0].shape.clone(),
                data: (0..g.len()).map(|i| if xv[i] > 0.0 { g[i] } else { av[i / inner] * g[i] }).collect(),
            });
            let da = c.needs[1].then(|| {
                let mut d = vec![0.0; av.len()];
                for i in 0..g.len() {
                    if xv[i] <= 0.0 {
                        d[i / inner] += g[i] * xv[i];
                    }
                }
                Tensor {
                    shape: vec![av.len()],
                    data: d,
                }
            });
            vec![dx, da]
        })
    }

    /// Normalises each row over the last axis, then applies gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(shape_err("layer_norm", format!("rows of {n} with gain {:?}", self.shape(gain))));
        }
        let rows = self.value(x).numel() / n;
        let groups: Vec<(usize, usize)> = (0..rows).map(|r| (r * n, n)).collect();
        let channel_of: Rc<dyn Fn(usize) -> usize> = Rc::new(move |i| i % n);
        self.normalise("layer_norm", x, gain, bias, eps, groups, channel_of)
    }

    /// Normalises over every element of a channel-first tensor `[C, ...]`
    /// (global layer norm), then applies per-channel gain and bias.
    pub fn global_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || self.shape(gain) != [xs[0]] || self.shape(bias) != [xs[0]] {
            return Err(shape_err("global_norm", format!("x {xs:?}, gain {:?}", self.shape(gain))));
        }
        let total = self.value(x).numel();
        let inner = total / xs[0];
        let channel_of: Rc<dyn Fn(usize) -> usize> = Rc::new(move |i| i / inner);
        self.normalise("global_norm", x, gain, bias, eps, vec![(0, total)], channel_of)
    }

    #[allow(clippy::too_many_arguments)]
    fn normalise(
        &mut self,
        op: &'static str,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
        groups: Vec<(usize, usize)>,
        channel_of: Rc<dyn Fn(usize) -> usize>,
    ) -> Result<Var> {
        let xv = &self.value(x).data;
        let (gv, bv) = (&self.value(gain).data, &self.value(bias).data);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(groups.len());
        for &(start, len) in &groups {
            let seg = &xv[start..start + len];
            let mean = seg.iter().sum::<f64>() / len as f64;
            let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat[start..start + len].iter_mut().zip(seg) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let data = xhat.iter().enumerate().map(|(i, h)| h * gv[channel_of(i)] + bv[channel_of(i)]).collect();
        let shape = self.shape(x).to_vec();
        let xhat = Rc::new(xhat);
        self.push(op, Tensor { shape, data }, &[x, gain, bias], move |c| {
            let g = &c.grad.data;
            let gv = &c.inputs[1].data;
            let nch = gv.len();
            let dx = c.needs[0].then(|| {
                let mut d = vec![0.0; g.len()];
                for (&(start, len), is) in groups.iter().zip(&inv_std) {
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for i in start..start + len {
                        let dh = g[i] * gv[channel_of(i)];
                        m1 += dh;
                        m2 += dh * xhat[i];
                    }
                    m1 /= len as f64;
                    m2 /= len as f64;
                    for i in start..start + len {
                        let dh = g[i] * gv[channel_of(i)];
                        d[i] = is * (dh - m1 - xhat[i] * m2);
                    }
                }
                Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: d,
                }
            });
            let (mut dg, mut db) = (vec![0.0; nch], vec![0.0; nch]);
            if c.needs[1] || c.needs[2] {
                for i in 0..g.len() {
                    dg[channel_of(i)] += g[i] * xhat[i];
                    db[channel_of(i)] += g[i];
                }
            }
            vec![
                dx,
                c.needs[1].then(|| Tensor {
                    shape: vec![nch],
                    data: dg,
                }),
                c.needs[2].then(|| Tensor {
                    shape: vec![nch],
                    data: db,
                }),
            ]
        })
    }

    /// Single-layer GRU over `x: [B, L, I]` with zero initial state,
    /// returning every hidden state `[B, L, H]`. Gate order in the packed
    /// weights is reset, update, candidate.
    pub fn gru(&mut self, x: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let wih = self.shape(w_ih).to_vec();
        let whh = self.shape(w_hh).to_vec();
        if xs.len() != 3 || wih.len() != 2 || whh.len() != 2 || wih[0] != xs[2] || whh[1] != wih[1] || whh[1] != 3 * whh[0] {
            return Err(shape_err("gru", format!("x {xs:?}, w_ih {wih:?}, w_hh {whh:?}")));
        }
        let (bsz, len, inp) = (xs[0], xs[1], xs[2]);
        let hid = whh[0];
        let h3 = 3 * hid;
        if self.shape(b_ih) != [h3] || self.shape(b_hh) != [h3] {
            return Err(shape_err("gru", "bias sizes"));
        }
        // input projections for every step at once: [B*L, 3H]
        let mut a = vec![0.0; bsz * len * h3];
        gemm(&self.value(x).data, bsz * len, inp, false, &self.value(w_ih).data, inp, h3, false, &mut a, 0.0);
        let bi = &self.value(b_ih).data;
        for row in a.chunks_mut(h3) {
            for (v, b) in row.iter_mut().zip(bi) {
                *v += b;
            }
        }
        let bh = self.value(b_hh).data.clone();
        let whh_v = self.value(w_hh).data.clone();

        let mut out = vec![0.0; bsz * len * hid];
        // saved per step: r, z, n, hn (= h_prev W_hn + b_hn), each [B, H]
        let mut saved = vec![0.0; len * 4 * bsz * hid];
        let mut h = vec![0.0; bsz * hid];
        let mut hh = vec![0.0; bsz * h3];
        for t in 0..len {
            gemm(&h, bsz, hid, false, &whh_v, hid, h3, false, &mut hh, 0.0);
            let base = t * 4 * bsz * hid;
            for bi_ in 0..bsz {
                let arow = &a[(bi_ * len + t) * h3..(bi_ * len + t + 1) * h3];
                let hrow = &hh[bi_ * h3..(bi_ + 1) * h3];
                for j in 0..hid {
                    let r = sigmoid(arow[j] + hrow[j] + bh[j]);
                    let z = sigmoid(arow[hid + j] + hrow[hid + j] + bh[hid + j]);
                    let hn = hrow[2 * hid + j] + bh[2 * hid + j];
                    let n = (arow[2 * hid + j] + r * hn).tanh();
                    let hp = h[bi_ * hid + j];
                    let hnew = (1.0 - z) * n + z * hp;
                    let k = bi_ * hid + j;
                    saved[base + k] = r;
                    saved[base + bsz * hid + k] = z;
                    saved[base + 2 * bsz * hid + k] = n;
                    saved[base + 3 * bsz * hid + k] = hn;
                    out[(bi_ * len + t) * hid + j] = hnew;
                }
            }
            for bi_ in 0..bsz {
                for j in 0..hid {
                    h[bi_ * hid + j] = out[(bi_ * len + t) * hid + j];
                }
            }
        }
        let saved = Rc::new(saved);
        self.push("gru", Tensor::new(vec![bsz, len, hid], out)?, &[x, w_ih, w_hh, b_ih, b_hh], move |c| {
            let g = &c.grad.data;
            let hs = &c.out.data;
            let whh = &c.inputs[2].data;
            let mut da = vec![0.0; bsz * len * h3];
            let mut dwhh = vec![0.0; hid * h3];
            let mut dbhh = vec![0.0; h3];
            let mut dh_next = vec![0.0; bsz * hid];
            let mut dhh = vec![0.0; bsz * h3];
            let mut hprev = vec![0.0; bsz * hid];
            for t in (0..len).rev() {
                let base = t * 4 * bsz * hid;
                for bi_ in 0..bsz {
                    for j in 0..hid {
                        let k = bi_ * hid + j;
                        let r = saved[base + k];
                        let z = saved[base + bsz * hid + k];
                        let n = saved[base + 2 * bsz * hid + k];
                        let hn = saved[base + 3 * bsz * hid + k];
                        let hp = if t == 0 { 0.0 } else { hs[(bi_ * len + t - 1) * hid + j] };
                        hprev[k] = hp;
                        let dh = g[(bi_ * len + t) * hid + j] + dh_next[k];
                        let dn = dh * (1.0 - z);
                        let dz = dh * (hp - n);
                        let dn_pre = dn * (1.0 - n * n);
                        let dr = dn_pre * hn;
                        let dr_pre = dr * r * (1.0 - r);
                        let dz_pre = dz * z * (1.0 - z);
                        let arow = &mut da[(bi_ * len + t) * h3..(bi_ * len + t + 1) * h3];
                        arow[j] = dr_pre;
                        arow[hid + j] = dz_pre;
                        arow[2 * hid + j] = dn_pre;
                        let hrow = &mut dhh[bi_ * h3..(bi_ + 1) * h3];
                        hrow[j] = dr_pre;
                        hrow[hid + j] = dz_pre;
                        hrow[2 * hid + j] = dn_pre * r;
                        dh_next[k] = dh * z;
                    }
                }
                // dW_hh += h_prev^T dhh ; db_hh += sum dhh ; dh_prev += dhh W_hh^T
                gemm(&hprev, bsz, hid, true, &dhh, bsz, h3, false, &mut dwhh, 1.0);
                for row in dhh.chunks(h3) {
                    for (acc, v) in dbhh.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                gemm(&dhh, bsz, h3, false, whh, hid, h3, true, &mut dh_next, 1.0);
            }
            let dx = c.needs[0].then(|| {
                let mut d = vec![0.0; bsz * len * inp];
                gemm(&da, bsz * len, h3, false, &c.inputs[1].data, inp, h3, true, &mut d, 0.0);
                Tensor {
                    shape: vec![bsz, len, inp],
                    data: d,
                }
            });
            let dwih = c.needs[1].then(|| {
                let mut d = vec![0.0; inp * h3];
                gemm(&c.inputs[0].data, bsz * len, inp, true, &da, bsz * len, h3, false, &mut d, 0.0);
                Tensor {
                    shape: vec![inp, h3],
                    data: d,
                }
            });
            let dbih = c.needs[3].then(|| {
                let mut d = vec![0.0; h3];
                for row in da.chunks(h3) {
                    for (acc, v) in d.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                Tensor {
                    shape: vec![h3],
                    data: d,
                }
            });
            vec![
                dx,
                dwih,
                c.needs[2].then(|| Tensor {
                    shape: vec![hid, h3],
                    data: dwhh,
                }),
                dbih,
                c.needs[4].then(|| Tensor {
                    shape: vec![h3],
                    data: dbhh,
                }),
            ]
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
