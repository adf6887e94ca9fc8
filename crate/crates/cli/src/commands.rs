//! Subcommand bodies. Each returns the files it wrote; on error the
//! staging guard removes partial output.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use beamkit_core::beamform::{band_bins, beam_pattern, BeamWeights};
use beamkit_core::metrics::{si_sdr, MetricReport};
use beamkit_core::pipeline::oracle_extract as extract_scene;
use beamkit_core::room::{generate_scene, ArrayGeometry};
use beamkit_core::signal::{read_wav, MultichannelWave, StftConfig};
use beamkit_core::Complex64;
use beamkit_neural::model::{ModelInput, ModelSpec, NeuralBeamformer, TrainingExample};
use beamkit_neural::train::train as run_training;
use beamkit_neural::{Graph, LayerParams};
use ndarray::Array3;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::scenes::{
    load_scene, manifest_paths, scene_dirs, to_json, write_scene, EstimateManifest, LoadedScene, Manifest, Staging,
    MANIFEST,
};

pub const MODEL_SPEC: &str = "model.json";
/// Peak after rescaling an estimate that would not fit in a WAV file.
pub const ESTIMATE_PEAK: f64 = 0.9;

fn array_of<'a>(s: &'a LoadedScene, cfg: &'a PipelineConfig) -> &'a ArrayGeometry {
    s.scene.geometry.as_ref().map_or(&cfg.simulation.array, |g| &g.array)
}

fn target_doa(s: &LoadedScene) -> Result<f64> {
    s.scene
        .target_doa()
        .ok_or_else(|| anyhow!("{}: manifest has no geometry, the target DOA is unknown", s.dir.display()))
}

fn reference_channel(s: &LoadedScene) -> usize {
    s.manifest.reference_mic
}

pub fn simulate(cfg: &PipelineConfig, count: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let mut st = Staging::new(out)?;
    for i in 0..count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let scene = generate_scene(seed, &cfg.simulation).with_context(|| format!("generating scene for seed {seed}"))?;
        let id = format!("scene_{seed:04}");
        let dir = st.dir(&id)?;
        write_scene(&mut st, &dir, &id, &scene, cfg.wav_encoding)?;
        eprintln!("{id}: sir {:.2} dB, snr {:.2} dB", scene.sir_db, scene.snr_db);
    }
    Ok(st.commit())
}

fn write_estimate(
    st: &mut Staging,
    cfg: &PipelineConfig,
    scene: &LoadedScene,
    method: &str,
    wave: Vec<f64>,
    mut details: serde_json::Value,
) -> Result<()> {
    let r = reference_channel(scene);
    let reference = scene.scene.target_reverberant.channel(r);
    let mixture_db = si_sdr(scene.scene.mixture.channel(r), reference)?;
    let estimate_db = si_sdr(&wave, reference)?;
    details["mixture_si_sdr_db"] = json!(mixture_db);
    details["estimate_si_sdr_db"] = json!(estimate_db);
    eprintln!("{}: {method} {mixture_db:.2} dB -> {estimate_db:.2} dB", scene.manifest.id);

    // files hold [-1, 1]; both metrics are scale invariant
    let peak = wave.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 1.0 { ESTIMATE_PEAK / peak } else { 1.0 };
    details["output_gain"] = json!(gain);
    let dir = st.dir(&scene.manifest.id)?;
    let est = MultichannelWave::mono(wave.iter().map(|v| v * gain).collect(), scene.manifest.sample_rate)?;
    st.write_wav(dir.join("estimate.wav"), &est, cfg.wav_encoding)?;
    let target = scene.target_path();
    let manifest = Manifest::Estimate(EstimateManifest {
        id: scene.manifest.id.clone(),
        method: method.to_string(),
        sample_rate: scene.manifest.sample_rate,
        estimate: "estimate.wav".into(),
        reference: target.canonicalize().unwrap_or(target),
        reference_channel: r,
        details,
    });
    st.write(dir.join(MANIFEST), &to_json(&manifest))
}

pub fn oracle_extract(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let dirs = scene_dirs(inputs)?;
    let mut st = Staging::new(out)?;
    let ex = &cfg.extraction;
    for d in dirs {
        let scene = load_scene(&d)?;
        let array = array_of(&scene, cfg);
        let result = extract_scene(&scene.scene, array, ex).with_context(|| format!("extracting {}", d.display()))?;
        let method = format!("oracle-mvdr-{}-{}", name(&ex.mask)?, name(&result.steering)?);
        let details = json!({
            "mask": ex.mask,
            "steering_requested": ex.steering,
            "steering_used": result.steering,
            "loading": ex.loading,
            "degenerate_bins": result.degenerate_bins,
        });
        let wave = result.output.channel(0).to_vec();
        write_estimate(&mut st, cfg, &scene, &method, wave, details)?;
    }
    Ok(st.commit())
}

fn name<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_value(v)?.as_str().unwrap_or_default().to_string())
}

pub fn train(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let dirs = scene_dirs(inputs)?;
    let scenes = dirs.iter().map(|d| load_scene(d)).collect::<Result<Vec<_>>>()?;
    let examples = scenes
        .iter()
        .map(|s| TrainingExample::from_scene(&s.scene, &cfg.model).with_context(|| format!("preparing {}", s.dir.display())))
        .collect::<Result<Vec<_>>>()?;
    let first = &scenes[0];
    let mics = first.manifest.channels;
    let spatial_dim = array_of(first, cfg).pairs.len() + 1;
    if let Some(bad) = scenes
        .iter()
        .find(|s| s.manifest.channels != mics || array_of(s, cfg).pairs.len() + 1 != spatial_dim)
    {
        bail!("{} has a different array layout from {}", bad.dir.display(), first.dir.display());
    }
    let mut model = NeuralBeamformer::new(cfg.model.clone(), mics, spatial_dim, cfg.training.seed)?;
    eprintln!(
        "training {} parameters on {} scenes for {} steps",
        model.params.num_values(),
        examples.len(),
        cfg.training.steps
    );
    let trace = run_training(&mut model, &examples, &cfg.training)?;
    if let Some((a, b)) = trace.initial_and_final(cfg.training.smoothing_window) {
        eprintln!("smoothed loss {a:.3} -> {b:.3}");
    }

    let mut st = Staging::new(out)?;
    let ckpt = out.join("checkpoint.bin");
    model.params.save(&ckpt)?;
    st.track(ckpt);
    st.write(out.join(MODEL_SPEC), &to_json(&model.spec))?;
    st.write(out.join("training.json"), &to_json(&cfg.training))?;
    st.write(out.join("loss_trace.csv"), &trace.to_csv())?;
    Ok(st.commit())
}

pub fn load_model(checkpoint: &Path) -> Result<NeuralBeamformer> {
    let spec_path = checkpoint.with_file_name(MODEL_SPEC);
    let text = std::fs::read_to_string(&spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: ModelSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    let params = LayerParams::load(checkpoint)?;
    Ok(NeuralBeamformer::with_params(spec, params)?)
}

fn model_input(model: &NeuralBeamformer, scene: &LoadedScene, cfg: &PipelineConfig) -> Result<ModelInput> {
    Ok(ModelInput::from_mixture(&scene.scene.mixture, array_of(scene, cfg), target_doa(scene)?, model.config())?)
}

pub fn infer(cfg: &PipelineConfig, checkpoint: &Path, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let model = load_model(checkpoint)?;
    let dirs = scene_dirs(inputs)?;
    let mut st = Staging::new(out)?;
    for d in dirs {
        let scene = load_scene(&d)?;
        let input = model_input(&model, &scene, cfg)?;
        let wave = model.infer(&input).with_context(|| format!("running the model on {}", d.display()))?;
        let details = json!({ "checkpoint": checkpoint.canonicalize().unwrap_or_else(|_| checkpoint.to_path_buf()) });
        write_estimate(&mut st, cfg, &scene, "neural", wave, details)?;
    }
    Ok(st.commit())
}

pub fn evaluate(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let paths = manifest_paths(inputs)?;
    let mut report = MetricReport::new();
    for p in &paths {
        let dir = p.parent().unwrap_or(Path::new("."));
        match Manifest::read(p)? {
            Manifest::Scene(m) => {
                let mix = read_wav(dir.join(&m.files.mixture))?;
                let target = read_wav(dir.join(&m.files.target))?;
                let r = m.reference_mic;
                report.evaluate(format!("{}/mixture", m.id), mix.channel(r), target.channel(r), m.sample_rate)?;
            }
            Manifest::Estimate(m) => {
                let est = read_wav(dir.join(&m.estimate))?;
                let reference = read_wav(&m.reference).with_context(|| format!("reference of {}", p.display()))?;
                if m.reference_channel >= reference.channels() {
                    bail!("{}: reference channel {} out of range", p.display(), m.reference_channel);
                }
                report.evaluate(
                    format!("{}/{}", m.id, m.method),
                    est.channel(0),
                    reference.channel(m.reference_channel),
                    m.sample_rate,
                )?;
            }
        }
    }
    let s = report.summary();
    eprintln!("{} utterances: si-sdr {:.2} dB, stoi {:.3}", s.count, s.mean_si_sdr_db, s.mean_stoi);
    let mut st = Staging::new(out)?;
    st.write(out.join("metrics.csv"), &report.to_csv())?;
    let mut summary = report.summary_json()?;
    summary.push('\n');
    st.write(out.join("summary.json"), &summary)?;
    Ok(st.commit())
}

fn neural_weights(model: &NeuralBeamformer, input: &ModelInput) -> Result<BeamWeights> {
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let fwd = model.forward(&mut g, &p, input)?;
    let w = g.value(fwd.weights);
    let (t, f, m) = (w.shape[0], w.shape[1], w.shape[2]);
    let weights = Array3::from_shape_fn((t, f, m), |(a, b, c)| {
        let k = ((a * f + b) * m + c) * 2;
        Complex64::new(w.data[k], w.data[k + 1])
    });
    Ok(BeamWeights { weights })
}

pub fn beampattern(cfg: &PipelineConfig, inputs: &[PathBuf], checkpoint: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let model = checkpoint.map(load_model).transpose()?;
    let dirs = scene_dirs(inputs)?;
    let bp = &cfg.beampattern;
    let steps = (180.0 / bp.angle_step_deg).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 * bp.angle_step_deg).collect();
    let mut st = Staging::new(out)?;
    for d in dirs {
        let scene = load_scene(&d)?;
        let array = array_of(&scene, cfg);
        let (weights, stft_cfg, c, source): (BeamWeights, StftConfig, f64, String) = match &model {
            Some(m) => {
                let input = model_input(m, &scene, cfg)?;
                (neural_weights(m, &input)?, m.config().stft, m.config().speed_of_sound, "neural".into())
            }
            None => {
                let r = extract_scene(&scene.scene, array, &cfg.extraction)?;
                (r.weights, cfg.extraction.stft, cfg.extraction.speed_of_sound, format!("oracle-mvdr-{}", name(&r.steering)?))
            }
        };
        let bins = band_bins(&stft_cfg, scene.manifest.sample_rate, bp.band_hz.0, bp.band_hz.1);
        let pattern = beam_pattern(&weights, array, &grid, &bins, c)?;
        let mean = pattern.time_average()?;
        let gain_db = |angle: f64| {
            let i = grid.iter().enumerate().min_by(|a, b| (a.1 - angle).abs().total_cmp(&(b.1 - angle).abs())).map_or(0, |x| x.0);
            20.0 * mean.gains[0][i].max(1e-300).log10()
        };
        let mut info = json!({
            "weights": source,
            "band_hz": bp.band_hz,
            "bins": bins.len(),
            "frames": pattern.gains.len(),
            "peak_angle_deg": mean.argmax(0),
        });
        if let Some(g) = &scene.scene.geometry {
            info["target_doa_deg"] = json!(g.target_doa);
            info["interference_doa_deg"] = json!(g.interference_doa);
            info["gain_at_target_db"] = json!(gain_db(g.target_doa));
            info["gain_at_interference_db"] = json!(gain_db(g.interference_doa));
        }
        let dir = st.dir(&scene.manifest.id)?;
        st.write(dir.join("beampattern.csv"), &pattern.to_csv())?;
        st.write(dir.join("beampattern_mean.csv"), &mean.to_csv())?;
        st.write(dir.join("beampattern.json"), &to_json(&info))?;
    }
    Ok(st.commit())
}
