//! End-to-end network: features and observation in, waveform out.

use std::rc::Rc;

use beamkit_core::features::{extract_features, FeatureStack};
use beamkit_core::room::{ArrayGeometry, MixtureScene};
use beamkit_core::signal::{stft, MultichannelWave, StftConfig};
use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_ops::Observation;
use crate::beamformer::{beamformer_forward, BeamformerNetConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::loss::{joint_loss, JointLoss};
use crate::params::{Bound, LayerParams};
use crate::preseparator::{preseparator_forward, MaskPair, PreSeparatorConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stft: StftConfig,
    pub preseparator: PreSeparatorConfig,
    pub beamformer: BeamformerNetConfig,
    pub speed_of_sound: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::toy(),
            preseparator: PreSeparatorConfig::toy(),
            beamformer: BeamformerNetConfig::toy(),
            speed_of_sound: 343.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v: Vec<String> = self.stft.validate().err().map(|e| format!("stft: {e}")).into_iter().collect();
        v.extend(self.preseparator.validate().into_iter().map(|e| format!("preseparator: {e}")));
        v.extend(self.beamformer.validate().into_iter().map(|e| format!("beamformer: {e}")));
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            v.push(format!("speed_of_sound must be positive, got {}", self.speed_of_sound));
        }
        v
    }
}

/// Everything needed to rebuild a model next to its parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub mics: usize,
    pub spatial_dim: usize,
}

/// Network inputs for one utterance.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// Mixture STFT `[M, T, F]`.
    pub observation: Observation,
    /// Feature stack `[N, F, T]`; the magnitude plane is `ln(1 + |Y|)`.
    pub features: Tensor,
    /// cosIPD planes and angle feature per bin, `[T, F, P + 1]`.
    pub spatial: Tensor,
    pub length: usize,
    pub sample_rate: u32,
}

impl ModelInput {
    pub fn from_mixture(
        mixture: &MultichannelWave,
        array: &ArrayGeometry,
        target_doa: f64,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let spec = stft(mixture, &cfg.stft)?;
        let feats = extract_features(&spec, array, target_doa, cfg.speed_of_sound)?;
        Self::from_parts(spec.into_bins(), &feats, mixture.len(), mixture.sample_rate())
    }

    pub fn from_parts(
        observation: ndarray::Array3<beamkit_core::Complex64>,
        feats: &FeatureStack,
        length: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let (n, f, t) = feats.data.dim();
        let (_, ot, of) = observation.dim();
        if (ot, of) != (t, f) {
            return Err(Error::Shape {
                op: "model_input",
                message: format!("observation (T, F) = ({ot}, {of}) vs features ({t}, {f})"),
            });
        }
        let mut data = feats.data.clone();
        data.index_axis_mut(Axis(0), 0).mapv_inplace(f64::ln_1p);
        let features = Tensor::new(vec![n, f, t], data.iter().cloned().collect())?;
        let sp = feats.spatial();
        let s = sp.dim().0;
        let spatial = sp.permuted_axes([2, 1, 0]);
        let spatial = Tensor::new(vec![t, f, s], spatial.iter().cloned().collect())?;
        Ok(Self {
            observation: Rc::new(observation),
            features,
            spatial,
            length,
            sample_rate,
        })
    }

    pub fn mics(&self) -> usize {
        self.observation.dim().0
    }

    pub fn frames(&self) -> usize {
        self.observation.dim().1
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial.shape[2]
    }
}

/// An input with its training target: the reverberant target at the
/// reference microphone.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub input: ModelInput,
    pub reference: Rc<Vec<f64>>,
    /// Reference STFT `[T, F, 2]`.
    pub reference_spec: Rc<Tensor>,
    pub mixture_reference: Vec<f64>,
}

impl TrainingExample {
    pub fn from_scene(scene: &MixtureScene, cfg: &ModelConfig) -> Result<Self> {
        let geo = scene
            .geometry
            .as_ref()
            .ok_or_else(|| Error::Config("scene has no geometry; the angle feature needs a DOA".into()))?;
        let input = ModelInput::from_mixture(&scene.mixture, &geo.array, geo.target_doa, cfg)?;
        let r = geo.array.reference_mic;
        let reference = scene.target_reverberant.channel(r).to_vec();
        let ref_wave = MultichannelWave::mono(reference.clone(), scene.mixture.sample_rate())?;
        let rs = stft(&ref_wave, &cfg.stft)?;
        let bins = rs.channel(0);
        let (t, f) = bins.dim();
        let data = bins.iter().flat_map(|c| [c.re, c.im]).collect();
        Ok(Self {
            input,
            reference: Rc::new(reference),
            reference_spec: Rc::new(Tensor::new(vec![t, f, 2], data)?),
            mixture_reference: scene.mixture.channel(r).to_vec(),
        })
    }
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub masks: MaskPair,
    /// Complex weights `[T, F, M, 2]`.
    pub weights: Var,
    /// Beamformed spectrum `[T, F, 2]`.
    pub spectrum: Var,
    pub wave: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralBeamformer {
    pub spec: ModelSpec,
    pub params: LayerParams,
}

impl NeuralBeamformer {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, mics: usize, spatial_dim: usize, seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            config,
            mics,
            spatial_dim,
        };
        let params = register(&spec, seed)?;
        Ok(Self { spec, params })
    }

    /// Wraps loaded parameters after checking their names and shapes.
    pub fn with_params(spec: ModelSpec, params: LayerParams) -> Result<Self> {
        let expected = register(&spec, 0)?;
        if !expected.same_layout(&params) {
            return Err(Error::Checkpoint("parameter layout does not match the model configuration".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.spec.config
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, input: &ModelInput) -> Result<ForwardOutput> {
        forward(g, p, &self.spec, input)
    }

    /// Extracted waveform, no gradients kept.
    pub fn infer(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, input)?;
        Ok(g.value(out.wave).data.clone())
    }

    pub fn loss(&self, g: &mut Graph, p: &Bound, ex: &TrainingExample) -> Result<JointLoss> {
        let out = self.forward(g, p, &ex.input)?;
        joint_loss(g, out.wave, ex.reference.clone(), out.spectrum, ex.reference_spec.clone())
    }
}

fn register(spec: &ModelSpec, seed: u64) -> Result<LayerParams> {
    let errs = spec.config.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    let planes = spec.config.preseparator.input_planes();
    if planes != spec.spatial_dim + 1 {
        return Err(Error::Config(format!(
            "pre-separator takes {planes} planes but the features have {}",
            spec.spatial_dim + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LayerParams::new();
    spec.config
        .preseparator
        .register(&mut p, spec.config.stft.num_bins(), &mut rng)?;
    spec.config.beamformer.register(&mut p, spec.mics, spec.spatial_dim, &mut rng)?;
    Ok(p)
}

/// Features to masks, masks to covariance tokens, tokens and spatial
/// features to weights, weights to the beamformed spectrum and waveform.
pub fn forward(g: &mut Graph, p: &Bound, spec: &ModelSpec, input: &ModelInput) -> Result<ForwardOutput> {
    let cfg = &spec.config;
    if input.mics() != spec.mics || input.spatial_dim() != spec.spatial_dim {
        return Err(Error::Shape {
            op: "model",
            message: format!(
                "input has {} mics and {} spatial planes, model expects {} and {}",
                input.mics(),
                input.spatial_dim(),
                spec.mics,
                spec.spatial_dim
            ),
        });
    }
    let features = g.constant(input.features.clone());
    let masks = preseparator_forward(g, p, &cfg.preseparator, features)?;
    let tokens = g.covariance_tokens(masks.speech, masks.noise, input.observation.clone())?;
    let spatial = g.constant(input.spatial.clone());
    let weights = beamformer_forward(g, p, &cfg.beamformer, tokens, spatial)?;
    let spectrum = g.beamform(weights, input.observation.clone())?;
    let wave = g.istft(spectrum, cfg.stft, input.length, input.sample_rate)?;
    Ok(ForwardOutput {
        masks,
        weights,
        spectrum,
        wave,
    })
}
