//! Reverse-mode tape. Each op stores its value and, when any input needs a
//! gradient, a closure mapping the output gradient to input gradients.

use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{strides, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct BackCtx<'a> {
    pub grad: &'a Tensor,
    pub out: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub needs: Vec<bool>,
}

type Backward = Box<dyn Fn(&BackCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    needs_grad: bool,
    backward: Option<Backward>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Sentinel in gather index maps: the output element is zero.
pub const ZERO_INDEX: usize = usize::MAX;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            parents: vec![],
            needs_grad: false,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            parents: vec![],
            needs_grad: true,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor,
        parents: &[Var],
        backward: impl Fn(&BackCtx<'_>) -> Vec<Option<Tensor>> + 'static,
    ) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite { op, node });
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            needs_grad,
            backward: if needs_grad { Some(Box::new(backward)) } else { None },
        });
        Ok(Var(node))
    }

    /// Gradients of a scalar `root` with respect to every tracked node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(shape_err("backward", format!("root has shape {:?}", self.value(root).shape)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(&self.nodes[root.0].value.shape, 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let ctx = BackCtx {
                grad: &grad,
                out: &node.value,
                inputs: node.parents.iter().map(|p| &self.nodes[*p].value).collect(),
                needs: node.parents.iter().map(|p| self.nodes[*p].needs_grad).collect(),
            };
            let parent_grads = bw(&ctx);
            for (p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[*p].needs_grad {
                    continue;
                }
                match &mut grads[*p] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise -------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let v = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect(),
        };
        self.push("add", v, &[a, b], |c| vec![Some(c.grad.clone()), Some(c.grad.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let v = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect(),
        };
        self.push("sub", v, &[a, b], |c| vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let v = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
        };
        self.push("mul", v, &[a, b], |c| {
            let g = &c.grad.data;
            let da = c.needs[0].then(|| Tensor {
                shape: c.grad.shape.clone(),
                data: g.iter().zip(&c.inputs[1].data).map(|(g, y)| g * y).collect(),
            });
            let db = c.needs[1].then(|| Tensor {
                shape: c.grad.shape.clone(),
                data: g.iter().zip(&c.inputs[0].data).map(|(g, x)| g * x).collect(),
            });
            vec![da, db]
        })
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * k);
        self.push("scale", v, &[a], move |c| vec![Some(c.grad.map(|g| g * k))])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push("sigmoid", v, &[a], |c| {
            let data = c.grad.data.iter().zip(&c.out.data).map(|(g, y)| g * y * (1.0 - y)).collect();
            vec![Some(Tensor {
                shape: c.grad.shape.clone(),
                data,
            })]
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push("tanh", v, &[a], |c| {
            let data = c.grad.data.iter().zip(&c.out.data).map(|(g, y)| g * (1.0 - y * y)).collect();
            vec![Some(Tensor {
                shape: c.grad.shape.clone(),
                data,
            })]
        })
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push("sum", v, &[a], |c| vec![Some(Tensor::filled(&c.inputs[0].shape, c.grad.item()))])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let v = Tensor::scalar(self.value(a).data.iter().sum::<f64>() / n);
        self.push("mean", v, &[a], move |c| vec![Some(Tensor::filled(&c.inputs[0].shape, c.grad.item() / n))])
    }

    /// `sum(a * w)` for a constant weight tensor; handy for building scalar
    /// probes in gradient checks.
    pub fn weighted_sum(&mut self, a: Var, w: Rc<Tensor>) -> Result<Var> {
        if w.shape != self.shape(a) {
            return Err(shape_err("weighted_sum", format!("{:?} vs {:?}", w.shape, self.shape(a))));
        }
        let v = Tensor::scalar(self.value(a).data.iter().zip(&w.data).map(|(x, y)| x * y).sum());
        self.push("weighted_sum", v, &[a], move |c| {
            let g = c.grad.item();
            vec![Some(w.map(|x| x * g))]
        })
    }

    // ---- shape -------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", v, &[a], |c| {
            vec![Some(Tensor {
                shape: c.inputs[0].shape.clone(),
                data: c.grad.data.clone(),
            })]
        })
    }

    /// `out[i] = a[index[i]]`, or zero where `index[i] == ZERO_INDEX`.
    pub fn gather(&mut self, a: Var, out_shape: &[usize], index: Rc<Vec<usize>>) -> Result<Var> {
        let n: usize = out_shape.iter().product();
        let src = self.value(a);
        if index.len() != n || index.iter().any(|i| *i != ZERO_INDEX && *i >= src.numel()) {
            return Err(shape_err("gather", "index map does not fit"));
        }
        let data = index.iter().map(|&i| if i == ZERO_INDEX { 0.0 } else { src.data[i] }).collect();
        let v = Tensor {
            shape: out_shape.to_vec(),
            data,
        };
        self.push("gather", v, &[a], move |c| {
            let mut g = Tensor::zeros(&c.inputs[0].shape);
            for (o, &i) in index.iter().enumerate() {
                if i != ZERO_INDEX {
                    g.data[i] += c.grad.data[o];
                }
            }
            vec![Some(g)]
        })
    }

    /// Reorders axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if perm.len() != shape.len() || {
            let mut p = perm.to_vec();
            p.sort_unstable();
            p != (0..shape.len()).collect::<Vec<_>>()
        } {
            return Err(shape_err("permute", format!("{perm:?} for shape {shape:?}")));
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let n: usize = shape.iter().product();
        let mut index = Vec::with_capacity(n);
        let mut coord = vec![0usize; shape.len()];
        for _ in 0..n {
            index.push(coord.iter().zip(perm).map(|(c, &p)| c * in_strides[p]).sum());
            for k in (0..coord.len()).rev() {
                coord[k] += 1;
                if coord[k] < out_shape[k] {
                    break;
                }
                coord[k] = 0;
            }
        }
        self.gather(a, &out_shape, Rc::new(index))
    }

    /// Takes `len` entries along `axis` starting at `start` (may be negative
    /// or run past the end; out-of-range positions are zero).
    pub fn window_axis(&mut self, a: Var, axis: usize, start: isize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("window_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for j in 0..len {
                let src = start + j as isize;
                for i in 0..inner {
                    index.push(if src >= 0 && (src as usize) < d {
                        (o * d + src as usize) * inner + i
                    } else {
                        ZERO_INDEX
                    });
                }
            }
        }
        self.gather(a, &out_shape, Rc::new(index))
    }

    /// Repeats every entry along `axis` `factor` times.
    pub fn upsample_axis(&mut self, a: Var, axis: usize, factor: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || factor == 0 {
            return Err(shape_err("upsample_axis", format!("axis {axis} x{factor} for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = d * factor;
        let mut index = Vec::with_capacity(outer * d * factor * inner);
        for o in 0..outer {
            for j in 0..d * factor {
                for i in 0..inner {
                    index.push((o * d + j / factor) * inner + i);
                }
            }
        }
        self.gather(a, &out_shape, Rc::new(index))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} for {first:?}")));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len() || s.iter().enumerate().any(|(k, d)| k != axis && *d != first[k]) {
                return Err(shape_err("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, d) in parts.iter().zip(&sizes) {
                let src = &self.value(*p).data;
                data.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let sizes_c = sizes.clone();
        self.push("concat", Tensor { shape, data }, parts, move |c| {
            let mut out: Vec<Vec<f64>> = sizes_c.iter().map(|d| Vec::with_capacity(outer * d * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (k, d) in sizes_c.iter().enumerate() {
                    out[k].extend_from_slice(&c.grad.data[pos..pos + d * inner]);
                    pos += d * inner;
                }
            }
            out.into_iter()
                .zip(&c.inputs)
                .zip(&c.needs)
                .map(|((data, t), need)| {
                    need.then(|| Tensor {
                        shape: t.shape.clone(),
                        data,
                    })
                })
                .collect()
        })
    }

    // ---- linear algebra ----------------------------------------------

    /// `x W + b` over the last axis of `x`; `w` is `[in, out]`, `b` is `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let in_dim = *xs.last().ok_or_else(|| shape_err("linear", "scalar input"))?;
        if ws.len() != 2 || ws[0] != in_dim || self.shape(b) != [ws[1]] {
            return Err(shape_err(
                "linear",
                format!("x {xs:?}, w {ws:?}, b {:?}", self.shape(b)),
            ));
        }
        let out_dim = ws[1];
        let rows = self.value(x).numel() / in_dim;
        let mut data = vec![0.0; rows * out_dim];
        gemm(&self.value(x).data, rows, in_dim, false, &self.value(w).data, in_dim, out_dim, false, &mut data, 0.0);
        let bias = &self.value(b).data;
        for r in 0..rows {
            for (o, bv) in data[r * out_dim..(r + 1) * out_dim].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = out_dim;
        self.push("linear", Tensor { shape, data }, &[x, w, b], move |c| {
            let g = &c.grad.data;
            let dx = c.needs[0].then(|| {
                let mut d = vec![0.0; rows * in_dim];
                gemm(g, rows, out_dim, false, &c.inputs[1].data, in_dim, out_dim, true, &mut d, 0.0);
                Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: d,
                }
            });
            let dw = c.needs[1].then(|| {
                let mut d = vec![0.0; in_dim * out_dim];
                gemm(&c.inputs[0].data, rows, in_dim, true, g, rows, out_dim, false, &mut d, 0.0);
                Tensor {
                    shape: vec![in_dim, out_dim],
                    data: d,
                }
            });
            let db = c.needs[2].then(|| {
                let mut d = vec![0.0; out_dim];
                for r in 0..rows {
                    for (acc, v) in d.iter_mut().zip(&g[r * out_dim..(r + 1) * out_dim]) {
                        *acc += v;
                    }
                }
                Tensor {
                    shape: vec![out_dim],
                    data: d,
                }
            });
            vec![dx, dw, db]
        })
    }

    /// Batched product `[B, m, k] x [B, k, n]`, or `[B, m, k] x [B, n, k]^T`
    /// when `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(shape_err("bmm", format!("{sa:?} x {sb:?} (transpose {transpose_b})")));
        }
        let (br, bc) = (sb[1], sb[2]);
        let mut data = vec![0.0; batch * m * n];
        {
            let (av, bv) = (&self.value(a).data, &self.value(b).data);
            for i in 0..batch {
                gemm(
                    &av[i * m * k..(i + 1) * m * k],
                    m,
                    k,
                    false,
                    &bv[i * br * bc..(i + 1) * br * bc],
                    br,
                    bc,
                    transpose_b,
                    &mut data[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
        }
        self.push("bmm", Tensor::new(vec![batch, m, n], data)?, &[a, b], move |c| {
            let g = &c.grad.data;
            let (av, bv) = (&c.inputs[0].data, &c.inputs[1].data);
            let da = c.needs[0].then(|| {
                let mut d = vec![0.0; batch * m * k];
                for i in 0..batch {
                    // dA = G B^T  (or G B when B was transposed)
                    gemm(
                        &g[i * m * n..(i + 1) * m * n],
                        m,
                        n,
                        false,
                        &bv[i * br * bc..(i + 1) * br * bc],
                        br,
                        bc,
                        !transpose_b,
                        &mut d[i * m * k..(i + 1) * m * k],
                        0.0,
                    );
                }
                Tensor {
                    shape: vec![batch, m, k],
                    data: d,
                }
            });
            let db = c.needs[1].then(|| {
                let mut d = vec![0.0; batch * br * bc];
                for i in 0..batch {
                    let ga = &g[i * m * n..(i + 1) * m * n];
                    let ai = &av[i * m * k..(i + 1) * m * k];
                    let out = &mut d[i * br * bc..(i + 1) * br * bc];
                    if transpose_b {
                        // dB = G^T A   [n, k]
                        gemm(ga, m, n, true, ai, m, k, false, out, 0.0);
                    } else {
                        // dB = A^T G   [k, n]
                        gemm(ai, m, k, true, ga, m, n, false, out, 0.0);
                    }
                }
                Tensor {
                    shape: vec![batch, br, bc],
                    data: d,
                }
            });
            vec![da, db]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = x.last_dim();
        let mut data = x.data.clone();
        for row in data.chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let shape = x.shape.clone();
        self.push("softmax", Tensor { shape, data }, &[a], move |c| {
            let mut d = c.grad.data.clone();
            for (drow, yrow) in d.chunks_mut(n).zip(c.out.data.chunks(n)) {
                let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                for (g, y) in drow.iter_mut().zip(yrow) {
                    *g = y * (*g - dot);
                }
            }
            vec![Some(Tensor {
                shape: c.grad.shape.clone(),
                data: d,
            })]
        })
    }
}

/// `c = op(a) op(b) + beta c` on row-major slices, where `a` is stored as
/// `ar x ac` and `b` as `br x bc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    ar: usize,
    ac: usize,
    ta: bool,
    b: &[f64],
    br: usize,
    bc: usize,
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    let av = ArrayView2::from_shape((ar, ac), a).expect("lhs shape");
    let bv = ArrayView2::from_shape((br, bc), b).expect("rhs shape");
    let av = if ta { av.reversed_axes() } else { av };
    let bv = if tb { bv.reversed_axes() } else { bv };
    let mut cv = ArrayViewMut2::from_shape((av.nrows(), bv.ncols()), c).expect("output shape");
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}
