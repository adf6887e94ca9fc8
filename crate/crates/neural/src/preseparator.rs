//! UNet-TCN mask estimator: strided 2-D convolutions over frequency, a
//! dilated temporal convolution stack at the bottleneck, and a decoder with
//! skip connections feeding a per-bin mask head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{conv1d, conv2d, global_norm, prelu};
use crate::nn_ops::Conv2dSpec;
use crate::params::{Bound, LayerParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Irm,
    Crm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreSeparatorConfig {
    /// Input planes followed by one entry per encoder level.
    pub unet_channels: Vec<usize>,
    pub tcn_repeats: usize,
    pub tcn_blocks: usize,
    pub tcn_channels: usize,
    pub tcn_kernel: usize,
    pub mask_kind: MaskKind,
    /// Zero-pad the frequency axis up to a multiple of the encoder stride
    /// product and crop afterwards. When false, such inputs are rejected.
    pub pad_frequency: bool,
}

impl Default for PreSeparatorConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl PreSeparatorConfig {
    pub fn toy() -> Self {
        Self {
            unet_channels: vec![5, 8, 16, 32],
            tcn_repeats: 2,
            tcn_blocks: 3,
            tcn_channels: 32,
            tcn_kernel: 3,
            mask_kind: MaskKind::Irm,
            pad_frequency: true,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            unet_channels: vec![5, 32, 64, 128],
            tcn_repeats: 3,
            tcn_blocks: 8,
            tcn_channels: 128,
            ..Self::toy()
        }
    }

    pub fn levels(&self) -> usize {
        self.unet_channels.len() - 1
    }

    pub fn stride_product(&self) -> usize {
        1 << self.levels()
    }

    pub fn input_planes(&self) -> usize {
        self.unet_channels[0]
    }

    pub fn mask_planes(&self) -> usize {
        match self.mask_kind {
            MaskKind::Irm => 2,
            MaskKind::Crm => 4,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.unet_channels.len() < 2 {
            v.push("unet_channels needs the input count and at least one level".into());
        }
        if self.unet_channels.contains(&0) {
            v.push("unet_channels entries must be positive".into());
        }
        if self.tcn_repeats == 0 || self.tcn_blocks == 0 || self.tcn_channels == 0 {
            v.push("tcn_repeats, tcn_blocks and tcn_channels must be positive".into());
        }
        if self.tcn_kernel % 2 == 0 {
            v.push(format!("tcn_kernel must be odd, got {}", self.tcn_kernel));
        }
        v
    }

    /// Frequency size seen by the encoder.
    pub fn working_freqs(&self, freqs: usize) -> Result<usize> {
        let s = self.stride_product();
        if freqs % s == 0 {
            Ok(freqs)
        } else if self.pad_frequency {
            Ok(freqs.div_ceil(s) * s)
        } else {
            Err(Error::Config(format!(
                "{freqs} frequency bins not divisible by the encoder stride product {s}"
            )))
        }
    }

    fn bottleneck_width(&self, freqs: usize) -> Result<usize> {
        Ok(self.unet_channels[self.levels()] * self.working_freqs(freqs)? / self.stride_product())
    }

    /// Adds this network's parameters, in forward order, under `pre.`.
    pub fn register(&self, p: &mut LayerParams, freqs: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs.join("; ")));
        }
        let ch = &self.unet_channels;
        for l in 0..self.levels() {
            p.add_conv2d(&format!("pre.enc{l}"), ch[l + 1], ch[l], (3, 3), rng)?;
            p.add_prelu(&format!("pre.enc{l}.act"), ch[l + 1], rng)?;
        }
        let width = self.bottleneck_width(freqs)?;
        let c = self.tcn_channels;
        p.add_conv1d("pre.tcn.in", c, width, 1, rng)?;
        for r in 0..self.tcn_repeats {
            for b in 0..self.tcn_blocks {
                let n = format!("pre.tcn.{r}.{b}");
                p.add_conv1d(&format!("{n}.expand"), c, c, 1, rng)?;
                p.add_prelu(&format!("{n}.act1"), c, rng)?;
                p.add_norm(&format!("{n}.norm1"), c, rng)?;
                p.add_conv1d(&format!("{n}.dilated"), c, c, self.tcn_kernel, rng)?;
                p.add_prelu(&format!("{n}.act2"), c, rng)?;
                p.add_norm(&format!("{n}.norm2"), c, rng)?;
                p.add_conv1d(&format!("{n}.project"), c, c, 1, rng)?;
            }
        }
        p.add_conv1d("pre.tcn.out", width, c, 1, rng)?;
        for l in (0..self.levels()).rev() {
            // upsampled deeper features concatenated with the skip input of this level
            let inp = ch[l + 1] + ch[l];
            let out = if l == 0 { ch[1] } else { ch[l] };
            p.add_conv2d(&format!("pre.dec{l}"), out, inp, (3, 3), rng)?;
            p.add_prelu(&format!("pre.dec{l}.act"), out, rng)?;
        }
        p.add_conv2d("pre.head", self.mask_planes(), ch[1], (1, 1), rng)
    }
}

/// Speech and noise masks as `[T, F, 2]` (real, imaginary); IRM masks have
/// a zero imaginary plane.
#[derive(Debug, Clone, Copy)]
pub struct MaskPair {
    pub speech: Var,
    pub noise: Var,
}

/// Runs the mask estimator on a `[N, F, T]` feature stack.
pub fn preseparator_forward(g: &mut Graph, p: &Bound, cfg: &PreSeparatorConfig, features: Var) -> Result<MaskPair> {
    let s = g.shape(features).to_vec();
    if s.len() != 3 || s[0] != cfg.input_planes() {
        return Err(Error::Shape {
            op: "preseparator",
            message: format!("features {s:?}, expected [{}, F, T]", cfg.input_planes()),
        });
    }
    let (freqs, frames) = (s[1], s[2]);
    let work = cfg.working_freqs(freqs)?;
    let down = Conv2dSpec {
        stride: (2, 1),
        padding: (1, 1),
        dilation: (1, 1),
    };
    let same = Conv2dSpec {
        padding: (1, 1),
        ..Conv2dSpec::default()
    };

    let mut x = if work == freqs { features } else { g.window_axis(features, 1, 0, work)? };
    let mut skips = vec![x];
    for l in 0..cfg.levels() {
        x = conv2d(g, p, &format!("pre.enc{l}"), x, down)?;
        x = prelu(g, p, &format!("pre.enc{l}.act"), x)?;
        skips.push(x);
    }

    let deep = g.shape(x).to_vec();
    let width = deep[0] * deep[1];
    let mut h = g.reshape(x, &[width, frames])?;
    h = conv1d(g, p, "pre.tcn.in", h, 1)?;
    for r in 0..cfg.tcn_repeats {
        for b in 0..cfg.tcn_blocks {
            let n = format!("pre.tcn.{r}.{b}");
            let mut y = conv1d(g, p, &format!("{n}.expand"), h, 1)?;
            y = prelu(g, p, &format!("{n}.act1"), y)?;
            y = global_norm(g, p, &format!("{n}.norm1"), y)?;
            y = conv1d(g, p, &format!("{n}.dilated"), y, 1 << b)?;
            y = prelu(g, p, &format!("{n}.act2"), y)?;
            y = global_norm(g, p, &format!("{n}.norm2"), y)?;
            y = conv1d(g, p, &format!("{n}.project"), y, 1)?;
            h = g.add(h, y)?;
        }
    }
    h = conv1d(g, p, "pre.tcn.out", h, 1)?;
    x = g.reshape(h, &deep)?;

    for l in (0..cfg.levels()).rev() {
        let up = g.upsample_axis(x, 1, 2)?;
        let joined = g.concat(&[up, skips[l]], 0)?;
        x = conv2d(g, p, &format!("pre.dec{l}"), joined, same)?;
        x = prelu(g, p, &format!("pre.dec{l}.act"), x)?;
    }
    let mut head = conv2d(g, p, "pre.head", x, Conv2dSpec::default())?;
    if work != freqs {
        head = g.window_axis(head, 1, 0, freqs)?;
    }

    let planes = |g: &mut Graph, start: usize| -> Result<Var> {
        match cfg.mask_kind {
            MaskKind::Irm => {
                let m = g.window_axis(head, 0, start as isize, 1)?;
                let m = g.sigmoid(m)?;
                let zero = g.constant(Tensor::zeros(&[1, freqs, frames]));
                let m = g.concat(&[m, zero], 0)?;
                g.permute(m, &[2, 1, 0])
            }
            MaskKind::Crm => {
                let m = g.window_axis(head, 0, 2 * start as isize, 2)?;
                g.permute(m, &[2, 1, 0])
            }
        }
    };
    Ok(MaskPair {
        speech: planes(g, 0)?,
        noise: planes(g, 1)?,
    })
}
