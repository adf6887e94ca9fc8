//! Deterministic single-threaded trainer.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{NeuralBeamformer, TrainingExample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    /// Global gradient norm limit.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Shuffles the example order each epoch.
    pub seed: u64,
    /// Window of the moving average used to judge progress.
    pub smoothing_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 2e-3,
            lr_decay: 0.98,
            clip_norm: 10.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            smoothing_window: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.steps == 0 {
            v.push("steps must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            v.push(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.clip_norm > 0.0) {
            v.push(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            v.push("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.smoothing_window == 0 {
            v.push("smoothing_window must be positive".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub example: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub neg_si_sdr: f64,
    pub mse: f64,
    /// Before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Trailing moving average of the loss.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let l = self.losses();
        (0..l.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(window.max(1));
                l[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }

    /// Mean loss over the first and over the last `window` steps.
    pub fn initial_and_final(&self, window: usize) -> Option<(f64, f64)> {
        let l = self.losses();
        let w = window.min(l.len());
        if w == 0 {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&l[..w]), mean(&l[l.len() - w..])))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,example,learning_rate,loss,neg_si_sdr,mse,grad_norm\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                r.step, r.epoch, r.example, r.learning_rate, r.loss, r.neg_si_sdr, r.mse, r.grad_norm
            );
        }
        s
    }
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    fn new(model: &NeuralBeamformer) -> Self {
        let zeros: Vec<Tensor> = model.params.entries().iter().map(|e| Tensor::zeros(&e.tensor.shape)).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut NeuralBeamformer, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, e) in model.params.entries_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k].data, &mut self.v[k].data);
            for (i, w) in e.tensor.data.iter_mut().enumerate() {
                let g = grads[k].data[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged(step),
        other => other,
    }
}

/// Runs `cfg.steps` single-example Adam steps over `examples`, visiting
/// them in a seeded shuffled order each epoch. Returns the loss trace;
/// `model` holds the final parameters.
pub fn train(model: &mut NeuralBeamformer, examples: &[TrainingExample], cfg: &TrainConfig) -> Result<LossTrace> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    if examples.is_empty() {
        return Err(Error::Config("training needs at least one example".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut records = Vec::with_capacity(cfg.steps);
    let mut lr = cfg.learning_rate;
    for step in 0..cfg.steps {
        let (epoch, pos) = (step / examples.len(), step % examples.len());
        if pos == 0 {
            if epoch > 0 {
                lr *= cfg.lr_decay;
            }
            order.shuffle(&mut rng);
        }
        let ex = &examples[order[pos]];
        let mut g = Graph::new();
        let p = model.params.bind(&mut g);
        let loss = model.loss(&mut g, &p, ex).map_err(diverged(step))?;
        let value = g.value(loss.total).item();
        if !value.is_finite() {
            return Err(Error::Diverged(step));
        }
        let raw = g.backward(loss.total).map_err(diverged(step))?;
        let mut grads = p.gradients(&model.params, &raw);
        let norm = grads.iter().map(Tensor::norm_sqr).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged(step));
        }
        if norm > cfg.clip_norm {
            let k = cfg.clip_norm / norm;
            for t in &mut grads {
                t.data.iter_mut().for_each(|v| *v *= k);
            }
        }
        adam.step(model, &grads, lr, cfg);
        records.push(LossRecord {
            step,
            epoch,
            example: order[pos],
            learning_rate: lr,
            loss: value,
            neg_si_sdr: g.value(loss.neg_si_sdr).item(),
            mse: g.value(loss.mse).item(),
            grad_norm: norm,
        });
    }
    Ok(LossTrace { records })
}
