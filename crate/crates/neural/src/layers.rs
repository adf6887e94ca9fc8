//! Parameterised building blocks over a bound parameter set.

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::nn_ops::Conv2dSpec;
use crate::params::Bound;

pub const NORM_EPS: f64 = 1e-8;

pub fn linear(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let (w, b) = (p.var(&format!("{name}.w"))?, p.var(&format!("{name}.b"))?);
    g.linear(x, w, b)
}

pub fn conv2d(g: &mut Graph, p: &Bound, name: &str, x: Var, spec: Conv2dSpec) -> Result<Var> {
    let (w, b) = (p.var(&format!("{name}.w"))?, p.var(&format!("{name}.b"))?);
    g.conv2d(x, w, b, spec)
}

pub fn conv1d(g: &mut Graph, p: &Bound, name: &str, x: Var, dilation: usize) -> Result<Var> {
    let (w, b) = (p.var(&format!("{name}.w"))?, p.var(&format!("{name}.b"))?);
    g.conv1d(x, w, b, dilation)
}

pub fn prelu(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let a = p.var(&format!("{name}.slope"))?;
    g.prelu(x, a)
}

pub fn layer_norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let (gain, bias) = (p.var(&format!("{name}.gain"))?, p.var(&format!("{name}.bias"))?);
    g.layer_norm(x, gain, bias, NORM_EPS)
}

pub fn global_norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let (gain, bias) = (p.var(&format!("{name}.gain"))?, p.var(&format!("{name}.bias"))?);
    g.global_norm(x, gain, bias, NORM_EPS)
}

/// Stacked GRU layers `{name}.{i}` over `[B, L, I]`.
pub fn gru_stack(g: &mut Graph, p: &Bound, name: &str, x: Var, layers: usize) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        let n = format!("{name}.{i}");
        h = g.gru(
            h,
            p.var(&format!("{n}.w_ih"))?,
            p.var(&format!("{n}.w_hh"))?,
            p.var(&format!("{n}.b_ih"))?,
            p.var(&format!("{n}.b_hh"))?,
        )?;
    }
    Ok(h)
}

/// Scaled dot-product attention split into `heads` over `[B, L, d]`
/// inputs; keys and values share their length.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 3 || ks.len() != 3 || ks != vs || qs[0] != ks[0] || qs[2] != ks[2] {
        return Err(shape_err("attention", format!("q {qs:?}, k {ks:?}, v {vs:?}")));
    }
    let (b, lq, d) = (qs[0], qs[1], qs[2]);
    let lk = ks[1];
    if heads == 0 || d % heads != 0 {
        return Err(shape_err("attention", format!("{d} dims over {heads} heads")));
    }
    let dh = d / heads;
    let split = |g: &mut Graph, x: Var, l: usize| -> Result<Var> {
        let x = g.reshape(x, &[b, l, heads, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[b * heads, l, dh])
    };
    let qh = split(g, q, lq)?;
    let kh = split(g, k, lk)?;
    let vh = split(g, v, lk)?;
    let scores = g.bmm(qh, kh, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let weights = g.softmax(scores)?;
    let out = g.bmm(weights, vh, false)?;
    let out = g.reshape(out, &[b, heads, lq, dh])?;
    let out = g.permute(out, &[0, 2, 1, 3])?;
    g.reshape(out, &[b, lq, d])
}

/// Multi-head cross-attention with learned projections `{name}.q/k/v/o`.
pub fn cross_attention(g: &mut Graph, p: &Bound, name: &str, query: Var, memory: Var, heads: usize) -> Result<Var> {
    let q = linear(g, p, &format!("{name}.q"), query)?;
    let k = linear(g, p, &format!("{name}.k"), memory)?;
    let v = linear(g, p, &format!("{name}.v"), memory)?;
    let a = attention(g, q, k, v, heads)?;
    linear(g, p, &format!("{name}.o"), a)
}
