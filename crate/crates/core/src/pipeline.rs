//! Oracle-mask MVDR extraction: masks from the stored scene components,
//! utterance-level covariances, per-frequency MVDR and resynthesis.

use serde::{Deserialize, Serialize};

use crate::beamform::{
    apply_beamformer, mvdr_field, pca_steering, steering_for_bins, whitened_pca_steering, BeamWeights, CVector,
};
use crate::error::{Error, Result};
use crate::masks::{
    apply_mask, covariance_average, covariance_utterance, oracle_crm, oracle_irm, CovarianceField, CovarianceKind, Mask,
};
use crate::room::{ArrayGeometry, MixtureScene, SPEED_OF_SOUND};
use crate::signal::{istft, stft, MultichannelWave, Spectrogram, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteeringSource {
    /// Plane-wave steering from the known target direction.
    Doa,
    /// Principal eigenvector of the speech covariance, relative to the reference mic.
    Pca,
    /// Principal eigenvector after whitening by the noise covariance.
    WhitenedPca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMaskKind {
    Irm,
    Crm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub stft: StftConfig,
    pub steering: SteeringSource,
    pub mask: OracleMaskKind,
    pub loading: f64,
    pub speed_of_sound: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            steering: SteeringSource::Doa,
            mask: OracleMaskKind::Irm,
            loading: 1e-6,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub output: MultichannelWave,
    pub weights: BeamWeights,
    pub steering: SteeringSource,
    /// Frequencies where PCA steering found near-equal top eigenvalues.
    pub degenerate_bins: Vec<usize>,
}

/// Speech and noise covariances from oracle masks; "noise" is everything
/// in the mixture except the reverberant target.
pub fn oracle_covariances(
    scene: &MixtureScene,
    cfg: &ExtractionConfig,
    reference_mic: usize,
) -> Result<(Spectrogram, CovarianceField, CovarianceField)> {
    let mix = stft(&scene.mixture, &cfg.stft)?;
    let target = stft(&scene.target_reverberant, &cfg.stft)?;
    let residual = stft(&scene.residual(), &cfg.stft)?;
    let (phi_ss, phi_nn) = match cfg.mask {
        OracleMaskKind::Irm => {
            let ms = oracle_irm(&target, &mix, reference_mic)?;
            let mn = oracle_irm(&residual, &mix, reference_mic)?;
            (
                covariance_utterance(&ms, &mix, CovarianceKind::Speech)?,
                covariance_utterance(&mn, &mix, CovarianceKind::Noise)?,
            )
        }
        OracleMaskKind::Crm => {
            let ms: Mask = oracle_crm(&target, &mix, reference_mic)?.into();
            let mn: Mask = oracle_crm(&residual, &mix, reference_mic)?.into();
            (
                covariance_average(&apply_mask(&ms, &mix)?, CovarianceKind::Speech),
                covariance_average(&apply_mask(&mn, &mix)?, CovarianceKind::Noise),
            )
        }
    };
    Ok((mix, phi_ss, phi_nn))
}

/// Steering per bin from the known DOA or from the covariances.
pub fn steering_per_bin(
    source: SteeringSource,
    target_doa: Option<f64>,
    phi_ss: &CovarianceField,
    phi_nn: &CovarianceField,
    mix: &Spectrogram,
    array: &ArrayGeometry,
    speed_of_sound: f64,
    loading: f64,
) -> Result<(Vec<CVector>, Vec<usize>)> {
    match source {
        SteeringSource::Doa => {
            let doa = target_doa.ok_or_else(|| Error::InvalidArgument("DOA steering needs a target direction".into()))?;
            Ok((steering_for_bins(doa, mix.config(), mix.sample_rate(), array, speed_of_sound)?, vec![]))
        }
        SteeringSource::Pca => {
            let mut degenerate = vec![];
            let mut out = Vec::with_capacity(phi_ss.freqs());
            for f in 0..phi_ss.freqs() {
                let p = pca_steering(phi_ss.at_freq(f), array.reference_mic)?;
                if p.degenerate {
                    degenerate.push(f);
                }
                out.push(p.relative_to_reference(array.reference_mic));
            }
            Ok((out, degenerate))
        }
        SteeringSource::WhitenedPca => {
            let mut degenerate = vec![];
            let mut out = Vec::with_capacity(phi_ss.freqs());
            for f in 0..phi_ss.freqs() {
                let p = whitened_pca_steering(phi_ss.at_freq(f), phi_nn.at_freq(f), array.reference_mic, loading)?;
                if p.degenerate {
                    degenerate.push(f);
                }
                out.push(p.relative_to_reference(array.reference_mic));
            }
            Ok((out, degenerate))
        }
    }
}

/// Full oracle pipeline on a generated scene. Falls back to PCA steering
/// when DOA steering is requested but the scene carries no geometry.
pub fn oracle_extract(scene: &MixtureScene, array: &ArrayGeometry, cfg: &ExtractionConfig) -> Result<Extraction> {
    let reference_mic = array.reference_mic;
    let (mix, phi_ss, phi_nn) = oracle_covariances(scene, cfg, reference_mic)?;
    let source = match (cfg.steering, scene.target_doa()) {
        (SteeringSource::Doa, None) => SteeringSource::Pca,
        (s, _) => s,
    };
    let (steering, degenerate_bins) =
        steering_per_bin(
            source,
            scene.target_doa(),
            &phi_ss,
            &phi_nn,
            &mix,
            array,
            cfg.speed_of_sound,
            cfg.loading,
        )?;
    let weights = mvdr_field(&phi_nn, &steering, cfg.loading, mix.frames())?;
    let out = apply_beamformer(&weights, &mix)?;
    let output = istft(&out, scene.mixture.len())?;
    Ok(Extraction {
        output,
        weights,
        steering: source,
        degenerate_bins,
    })
}
