//! Cross-attention beamforming network: per-bin covariance and spatial
//! tokens, each encoded by a linear layer and a GRU running along
//! frequency, combined by multi-head attention within each frame.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{cross_attention, gru_stack, layer_norm, linear};
use crate::params::{Bound, LayerParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformerNetConfig {
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub attention_dim: usize,
    pub attention_heads: usize,
}

impl Default for BeamformerNetConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl BeamformerNetConfig {
    pub fn toy() -> Self {
        Self {
            gru_layers: 2,
            gru_hidden: 32,
            attention_dim: 16,
            attention_heads: 2,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            gru_hidden: 256,
            attention_dim: 128,
            ..Self::toy()
        }
    }

    /// Real and imaginary weight per microphone.
    pub fn output_dim(mics: usize) -> usize {
        2 * mics
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.gru_layers == 0 || self.gru_hidden == 0 {
            v.push("gru_layers and gru_hidden must be positive".into());
        }
        if self.attention_heads == 0 || self.attention_dim % self.attention_heads.max(1) != 0 {
            v.push(format!(
                "attention_dim {} must be a positive multiple of attention_heads {}",
                self.attention_dim, self.attention_heads
            ));
        }
        v
    }

    /// Adds parameters under `bf.` for `mics` microphones and
    /// `spatial_dim` spatial planes (cosIPD pairs plus the angle feature).
    pub fn register(&self, p: &mut LayerParams, mics: usize, spatial_dim: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs.join("; ")));
        }
        let cov_dim = 4 * mics * mics;
        let (h, dk) = (self.gru_hidden, self.attention_dim);
        p.add_norm("bf.cov.norm", cov_dim, rng)?;
        for (stream, inp) in [("cov", cov_dim), ("spatial", spatial_dim)] {
            p.add_linear(&format!("bf.{stream}.in"), inp, h, rng)?;
            for l in 0..self.gru_layers {
                p.add_gru(&format!("bf.{stream}.gru.{l}"), h, h, rng)?;
            }
            p.add_linear(&format!("bf.{stream}.out"), h, dk, rng)?;
        }
        for proj in ["q", "k", "v", "o"] {
            p.add_linear(&format!("bf.att.{proj}"), dk, dk, rng)?;
        }
        p.add_linear("bf.head", dk, Self::output_dim(mics), rng)
    }
}

/// Maps covariance tokens `[T, F, 4 M^2]` and spatial tokens `[T, F, S]`
/// to complex weights `[T, F, M, 2]`. Frames never interact.
pub fn beamformer_forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &BeamformerNetConfig,
    cov_tokens: Var,
    spatial: Var,
) -> Result<Var> {
    let cs = g.shape(cov_tokens).to_vec();
    let ss = g.shape(spatial).to_vec();
    if cs.len() != 3 || ss.len() != 3 || cs[..2] != ss[..2] {
        return Err(Error::Shape {
            op: "beamformer",
            message: format!("covariance tokens {cs:?} vs spatial tokens {ss:?}"),
        });
    }
    let mics = ((cs[2] / 4) as f64).sqrt().round() as usize;
    if 4 * mics * mics != cs[2] {
        return Err(Error::Shape {
            op: "beamformer",
            message: format!("{} covariance values per bin is not 4 M^2", cs[2]),
        });
    }
    let normed = layer_norm(g, p, "bf.cov.norm", cov_tokens)?;
    let encode = |g: &mut Graph, stream: &str, x: Var| -> Result<Var> {
        let h = linear(g, p, &format!("bf.{stream}.in"), x)?;
        let h = gru_stack(g, p, &format!("bf.{stream}.gru"), h, cfg.gru_layers)?;
        linear(g, p, &format!("bf.{stream}.out"), h)
    };
    let memory = encode(g, "cov", normed)?;
    let query = encode(g, "spatial", spatial)?;
    let attended = cross_attention(g, p, "bf.att", query, memory, cfg.attention_heads)?;
    let w = linear(g, p, "bf.head", attended)?;
    g.reshape(w, &[cs[0], cs[1], mics, 2])
}
