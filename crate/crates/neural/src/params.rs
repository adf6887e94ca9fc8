//! Named parameter tensors, initialisation and checkpoint files.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"BKPARAMS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub init: Init,
}

/// Parameters in registration order; that order drives seeding,
/// optimisation and serialisation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerParams {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl LayerParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
            Init::Constant(c) => vec![c; n],
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor: Tensor::new(shape.to_vec(), data)?,
            init,
        });
        Ok(())
    }

    /// `x W + b` with `W: [in, out]`; bound `1/sqrt(in)` for both.
    pub fn add_linear(&mut self, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let b = 1.0 / (inp as f64).sqrt();
        self.add(&format!("{name}.w"), &[inp, out], Init::Uniform(b), rng)?;
        self.add(&format!("{name}.b"), &[out], Init::Uniform(b), rng)
    }

    pub fn add_conv2d(&mut self, name: &str, out: usize, inp: usize, kernel: (usize, usize), rng: &mut ChaCha8Rng) -> Result<()> {
        let b = 1.0 / ((inp * kernel.0 * kernel.1) as f64).sqrt();
        self.add(&format!("{name}.w"), &[out, inp, kernel.0, kernel.1], Init::Uniform(b), rng)?;
        self.add(&format!("{name}.b"), &[out], Init::Uniform(b), rng)
    }

    pub fn add_conv1d(&mut self, name: &str, out: usize, inp: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let b = 1.0 / ((inp * kernel) as f64).sqrt();
        self.add(&format!("{name}.w"), &[out, inp, kernel], Init::Uniform(b), rng)?;
        self.add(&format!("{name}.b"), &[out], Init::Uniform(b), rng)
    }

    pub fn add_prelu(&mut self, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.add(&format!("{name}.slope"), &[channels], Init::Constant(0.25), rng)
    }

    pub fn add_norm(&mut self, name: &str, n: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.add(&format!("{name}.gain"), &[n], Init::Constant(1.0), rng)?;
        self.add(&format!("{name}.bias"), &[n], Init::Constant(0.0), rng)
    }

    pub fn add_gru(&mut self, name: &str, inp: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let b = 1.0 / (hidden as f64).sqrt();
        self.add(&format!("{name}.w_ih"), &[inp, 3 * hidden], Init::Uniform(b), rng)?;
        self.add(&format!("{name}.w_hh"), &[hidden, 3 * hidden], Init::Uniform(b), rng)?;
        self.add(&format!("{name}.b_ih"), &[3 * hidden], Init::Uniform(b), rng)?;
        self.add(&format!("{name}.b_hh"), &[3 * hidden], Init::Uniform(b), rng)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|i| &self.entries[*i].tensor)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(i) => Ok(&mut self.entries[*i].tensor),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Adds every parameter to `g` as a tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, true)
    }

    /// Adds every parameter to `g` as a constant (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, false)
    }

    /// Pairs existing graph nodes with parameter names, in parameter order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.entries.len() {
            return Err(Error::Config(format!("{} nodes for {} parameters", vars.len(), self.entries.len())));
        }
        Ok(Bound {
            vars: self.entries.iter().zip(vars).map(|(e, v)| (e.name.clone(), *v)).collect(),
        })
    }

    /// Parameter tensors in order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.tensor.clone()).collect()
    }

    fn bind_with(&self, g: &mut Graph, track: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                let t = e.tensor.clone();
                (e.name.clone(), if track { g.leaf(t) } else { g.constant(t) })
            })
            .collect();
        Bound { vars }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            let (tag, v) = match e.init {
                Init::Uniform(b) => (0u8, b),
                Init::Constant(c) => (1u8, c),
            };
            out.push(tag);
            out.extend_from_slice(&v.to_le_bytes());
            out.extend_from_slice(&(e.tensor.shape.len() as u32).to_le_bytes());
            for d in &e.tensor.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &e.tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a parameter file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut p = LayerParams::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("bad name".into()))?;
            let tag = r.take(1)?[0];
            let v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let init = match tag {
                0 => Init::Uniform(v),
                1 => Init::Constant(v),
                t => return Err(Error::Checkpoint(format!("unknown init tag {t}"))),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if p.index.contains_key(&name) {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
            p.index.insert(name.clone(), p.entries.len());
            p.entries.push(ParamEntry {
                name,
                tensor: Tensor::new(shape, data)?,
                init,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn same_layout(&self, other: &LayerParams) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.shape == b.tensor.shape)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Graph handles for a bound parameter set.
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Gradients in parameter order; untouched parameters get zeros.
    pub fn gradients(&self, params: &LayerParams, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(params.entries())
            .map(|((_, v), e)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(&e.tensor.shape)))
            .collect()
    }
}
