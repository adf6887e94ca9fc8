use std::rc::Rc;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Graph nodes of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub total: Var,
    pub neg_si_sdr: Var,
    pub mse: Var,
}

/// `-SI-SDR(wave) + MSE(spectrum)` with unit weights. The spectral term
/// compares real and imaginary STFT coefficients.
pub fn joint_loss(
    g: &mut Graph,
    est_wave: Var,
    ref_wave: Rc<Vec<f64>>,
    est_spec: Var,
    ref_spec: Rc<Tensor>,
) -> Result<JointLoss> {
    let neg_si_sdr = g.neg_si_sdr(est_wave, ref_wave)?;
    let mse = g.mse(est_spec, ref_spec)?;
    let total = g.add(neg_si_sdr, mse)?;
    Ok(JointLoss { total, neg_si_sdr, mse })
}
