//! Central finite-difference gradient checks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|)` norm ratio
    /// over all inputs.
    pub max_relative_error: f64,
    pub per_input: Vec<f64>,
    /// `(analytic, numeric)` gradient norms per input.
    pub norms: Vec<(f64, f64)>,
    /// Inputs whose analytic and numeric gradients both sit below the
    /// rounding noise of the central difference, so no ratio is
    /// meaningful; they score 0. An attention key bias is one: it shifts
    /// every score of a query equally and its exact gradient is zero.
    pub below_resolution: Vec<usize>,
}

/// Compares analytic and numeric gradients of the scalar produced by
/// `build` with respect to every tensor in `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let all: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    check_coordinates(inputs, &all, step, build)
}

/// Like [`check_gradients`] but perturbs at most `per_input` seeded random
/// coordinates of each input, for networks too large to sweep.
pub fn check_gradients_sampled<F>(inputs: &[Tensor], per_input: usize, seed: u64, step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let mut idx: Vec<usize> = (0..t.numel()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(per_input);
            idx.sort_unstable();
            idx
        })
        .collect();
    check_coordinates(inputs, &picks, step, build)
}

fn check_coordinates<F>(inputs: &[Tensor], coords: &[Vec<usize>], step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let f0 = g.value(out).item().abs().max(1.0);
    let grads = g.backward(out)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut below_resolution = Vec::new();
    let mut norms = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(&inputs[k].shape));
        let (mut diff, mut num_norm, mut ana_norm) = (0.0, 0.0, 0.0);
        for &i in &coords[k] {
            let orig = work[k].data[i];
            work[k].data[i] = orig + step;
            let up = eval(&work)?;
            work[k].data[i] = orig - step;
            let down = eval(&work)?;
            work[k].data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            diff += (numeric - analytic.data[i]).powi(2);
            num_norm += numeric * numeric;
            ana_norm += analytic.data[i] * analytic.data[i];
        }
        norms.push((ana_norm.sqrt(), num_norm.sqrt()));
        let scale = f64::max(ana_norm, num_norm).sqrt();
        let noise = 10.0 * (coords[k].len() as f64).sqrt() * f0 * f64::EPSILON / step;
        if scale <= noise {
            below_resolution.push(k);
            per_input.push(0.0);
        } else {
            per_input.push(diff.sqrt() / scale);
        }
    }
    Ok(GradCheck {
        max_relative_error: per_input.iter().cloned().fold(0.0, f64::max),
        per_input,
        norms,
        below_resolution,
    })
}
