use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{doa_of, ArrayGeometry, Point3};
use super::rir::{fft_convolve, simulate_rir, DelayInterpolation, ImpulseResponseSet, RoomConfig};
use super::sources::{pink_noise, synth_speech, SourceCorpus};
use super::SPEED_OF_SOUND;
use crate::error::{Error, Result};
use crate::signal::MultichannelWave;

/// Mixture peak is brought down to this level when it would exceed it.
const PEAK_LIMIT: f64 = 0.9;

/// Where everything sits in the room for a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub room: RoomConfig,
    pub array: ArrayGeometry,
    pub target_position: Point3,
    pub interference_position: Point3,
    pub target_doa: f64,
    pub interference_doa: f64,
}

/// A mixture together with its ground-truth components. The mixture is the
/// sample-wise sum `target_reverberant + interference_reverberant + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureScene {
    pub mixture: MultichannelWave,
    pub target_reverberant: MultichannelWave,
    pub interference_reverberant: MultichannelWave,
    pub noise: MultichannelWave,
    pub sir_db: f64,
    pub snr_db: f64,
    pub seed: Option<u64>,
    pub geometry: Option<SceneGeometry>,
}

impl MixtureScene {
    pub fn target_doa(&self) -> Option<f64> {
        self.geometry.as_ref().map(|g| g.target_doa)
    }

    pub fn interference_doa(&self) -> Option<f64> {
        self.geometry.as_ref().map(|g| g.interference_doa)
    }

    /// Everything that is not target: `interference_reverberant + noise`.
    pub fn residual(&self) -> MultichannelWave {
        let rows = self
            .interference_reverberant
            .samples()
            .iter()
            .zip(self.noise.samples())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        MultichannelWave::new(rows, self.mixture.sample_rate()).expect("components share shape")
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn reverberate(dry: &[f64], rir: &ImpulseResponseSet) -> Vec<Vec<f64>> {
    rir.rir.iter().map(|h| fft_convolve(dry, h, dry.len())).collect()
}

/// Convolves both dry sources with their impulse responses, then scales
/// interference and noise so that at the reference mic the target-to-
/// interference ratio is `sir_db` and the target-to-noise ratio `snr_db`.
#[allow(clippy::too_many_arguments)]
pub fn mix_scene(
    target_dry: &MultichannelWave,
    interf_dry: &MultichannelWave,
    rir_target: &ImpulseResponseSet,
    rir_interf: &ImpulseResponseSet,
    noise: &MultichannelWave,
    sir_db: f64,
    snr_db: f64,
    reference_mic: usize,
) -> Result<MixtureScene> {
    let fs = target_dry.sample_rate();
    if interf_dry.sample_rate() != fs || noise.sample_rate() != fs {
        return Err(Error::InvalidArgument("sample rates differ".into()));
    }
    if target_dry.channels() != 1 || interf_dry.channels() != 1 {
        return Err(Error::Shape("dry sources must be mono".into()));
    }
    let len = target_dry.len();
    let mics = rir_target.rir.len();
    if interf_dry.len() != len || noise.len() != len {
        return Err(Error::Shape("dry sources and noise must share length".into()));
    }
    if rir_interf.rir.len() != mics || noise.channels() != mics {
        return Err(Error::Shape(format!(
            "expected {mics} channels in interference RIRs and noise"
        )));
    }
    if reference_mic >= mics {
        return Err(Error::InvalidArgument(format!("reference mic {reference_mic}")));
    }
    if !sir_db.is_finite() || !snr_db.is_finite() {
        return Err(Error::InvalidArgument("sir_db and snr_db must be finite".into()));
    }

    let target = reverberate(target_dry.channel(0), rir_target);
    let interf = reverberate(interf_dry.channel(0), rir_interf);
    let p_target = power(&target[reference_mic]);
    let p_interf = power(&interf[reference_mic]);
    let p_noise = power(noise.channel(reference_mic));
    if p_target == 0.0 {
        return Err(Error::ZeroPower("target".into()));
    }
    if p_interf == 0.0 {
        return Err(Error::ZeroPower("interference".into()));
    }
    if p_noise == 0.0 {
        return Err(Error::ZeroPower("noise".into()));
    }
    let g_interf = (p_target / (p_interf * 10f64.powf(sir_db / 10.0))).sqrt();
    let g_noise = (p_target / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();

    let sum_peak = (0..mics)
        .flat_map(|m| {
            let (t, i, n) = (&target[m], &interf[m], noise.channel(m));
            (0..len).map(move |k| (t[k] + g_interf * i[k] + g_noise * n[k]).abs())
        })
        .fold(0.0_f64, f64::max);
    let global = if sum_peak > PEAK_LIMIT { PEAK_LIMIT / sum_peak } else { 1.0 };

    let scale = |rows: &[Vec<f64>], g: f64| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().map(|v| v * g * global).collect())
            .collect()
    };
    let target = scale(&target, 1.0);
    let interf = scale(&interf, g_interf);
    let noise_rows = scale(noise.samples(), g_noise);
    let mixture: Vec<Vec<f64>> = (0..mics)
        .map(|m| {
            (0..len)
                .map(|k| target[m][k] + interf[m][k] + noise_rows[m][k])
                .collect()
        })
        .collect();

    Ok(MixtureScene {
        mixture: MultichannelWave::new(mixture, fs)?,
        target_reverberant: MultichannelWave::new(target, fs)?,
        interference_reverberant: MultichannelWave::new(interf, fs)?,
        noise: MultichannelWave::new(noise_rows, fs)?,
        sir_db,
        snr_db,
        seed: None,
        geometry: None,
    })
}

/// Sampling ranges for [`generate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub room_min: Point3,
    pub room_max: Point3,
    pub rt60_range: (f64, f64),
    pub sir_range_db: (f64, f64),
    pub snr_range_db: (f64, f64),
    pub min_separation_deg: f64,
    /// Array layout in its own frame; it is translated into the room.
    pub array: ArrayGeometry,
    pub source_distance: (f64, f64),
    /// Minimum clearance between any source or mic and the walls.
    pub wall_margin: f64,
    pub speed_of_sound: f64,
    pub interpolation: DelayInterpolation,
    pub max_retries: usize,
    pub speech_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            duration_s: 4.0,
            room_min: [3.0, 3.0, 1.5],
            room_max: [8.0, 8.0, 2.5],
            rt60_range: (0.1, 0.6),
            sir_range_db: (-6.0, 6.0),
            snr_range_db: (-5.0, 20.0),
            min_separation_deg: 5.0,
            array: ArrayGeometry::default(),
            source_distance: (0.5, 2.5),
            wall_margin: 0.3,
            speed_of_sound: SPEED_OF_SOUND,
            interpolation: DelayInterpolation::Nearest,
            max_retries: 1000,
            speech_dir: None,
            noise_dir: None,
        }
    }
}

impl SimConfig {
    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    /// Every violated field, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sample_rate == 0 {
            out.push("sample_rate must be positive".into());
        }
        if !(self.duration_s > 0.0) {
            out.push("duration_s must be positive".into());
        }
        for k in 0..3 {
            if !(self.room_min[k] > 0.0 && self.room_min[k] <= self.room_max[k]) {
                out.push(format!("room_min[{k}] must be positive and <= room_max[{k}]"));
            }
        }
        let range_ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !(range_ok(self.rt60_range) && self.rt60_range.0 > 0.0) {
            out.push("rt60_range must be a positive, ordered range".into());
        }
        if !range_ok(self.sir_range_db) {
            out.push("sir_range_db must be an ordered range".into());
        }
        if !range_ok(self.snr_range_db) {
            out.push("snr_range_db must be an ordered range".into());
        }
        if !(range_ok(self.source_distance) && self.source_distance.0 > 0.0) {
            out.push("source_distance must be a positive, ordered range".into());
        }
        if !(0.0..180.0).contains(&self.min_separation_deg) {
            out.push("min_separation_deg must lie in [0, 180)".into());
        }
        if !(self.wall_margin >= 0.0) {
            out.push("wall_margin must be non-negative".into());
        }
        if !(self.speed_of_sound > 0.0) {
            out.push("speed_of_sound must be positive".into());
        }
        if self.max_retries == 0 {
            out.push("max_retries must be positive".into());
        }
        if let Err(e) = self.array.axis() {
            out.push(format!("array: {e}"));
        }
        out
    }
}

/// The random draws behind a scene, before any signal is synthesized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub geometry: SceneGeometry,
    pub sir_db: f64,
    pub snr_db: f64,
    pub target_source_seed: u64,
    pub interference_source_seed: u64,
    pub noise_seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..=range.1)
    } else {
        range.0
    }
}

fn inside_with_margin(p: Point3, dims: Point3, margin: f64) -> bool {
    p.iter().zip(&dims).all(|(v, d)| *v >= margin && *v <= d - margin)
}

fn place_source(rng: &mut ChaCha8Rng, cfg: &SimConfig, room: &RoomConfig, center: Point3) -> Point3 {
    let r = uniform(rng, cfg.source_distance);
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let h = room.dimensions[2];
    let z = rng.random_range(cfg.wall_margin.min(h / 2.0)..=(h - cfg.wall_margin).max(h / 2.0));
    let dz = z - center[2];
    let horizontal = (r * r - dz * dz).max(0.0).sqrt();
    [center[0] + horizontal * azimuth.cos(), center[1] + horizontal * azimuth.sin(), z]
}

/// Draws room, rt60, placement and levels for `seed`. Pure in `(seed, cfg)`.
pub fn sample_scene_params(seed: u64, cfg: &SimConfig) -> Result<SceneParams> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local = &cfg.array;
    let half_span = local
        .mic_positions
        .iter()
        .map(|p| {
            let c = local.centroid();
            ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);

    for _ in 0..cfg.max_retries {
        let dims = [
            uniform(&mut rng, (cfg.room_min[0], cfg.room_max[0])),
            uniform(&mut rng, (cfg.room_min[1], cfg.room_max[1])),
            uniform(&mut rng, (cfg.room_min[2], cfg.room_max[2])),
        ];
        let rt60 = uniform(&mut rng, cfg.rt60_range);
        let mut room = RoomConfig::new(dims, rt60, cfg.sample_rate);
        room.speed_of_sound = cfg.speed_of_sound;
        room.interpolation = cfg.interpolation;
        if room.reflection_coefficient().is_err() {
            continue;
        }
        let clear = cfg.wall_margin + half_span;
        if dims.iter().any(|d| *d <= 2.0 * clear) {
            continue;
        }
        let center = [
            rng.random_range(clear..=dims[0] - clear),
            rng.random_range(clear..=dims[1] - clear),
            rng.random_range(clear..=dims[2] - clear),
        ];
        let array = local.centered_at(center);
        let target = place_source(&mut rng, cfg, &room, center);
        let interf = place_source(&mut rng, cfg, &room, center);
        if !inside_with_margin(target, dims, cfg.wall_margin)
            || !inside_with_margin(interf, dims, cfg.wall_margin)
        {
            continue;
        }
        let target_doa = doa_of(target, &array)?;
        let interference_doa = doa_of(interf, &array)?;
        if (target_doa - interference_doa).abs() < cfg.min_separation_deg {
            continue;
        }
        let sir_db = uniform(&mut rng, cfg.sir_range_db);
        let snr_db = uniform(&mut rng, cfg.snr_range_db);
        return Ok(SceneParams {
            seed,
            geometry: SceneGeometry {
                room,
                array,
                target_position: target,
                interference_position: interf,
                target_doa,
                interference_doa,
            },
            sir_db,
            snr_db,
            target_source_seed: rng.next_u64(),
            interference_source_seed: rng.next_u64(),
            noise_seed: rng.next_u64(),
        });
    }
    Err(Error::Placement(cfg.max_retries))
}

/// Full scene for `seed`: draws parameters, synthesizes (or loads) dry
/// sources and noise, simulates both RIR sets and mixes.
pub fn generate_scene(seed: u64, cfg: &SimConfig) -> Result<MixtureScene> {
    let params = sample_scene_params(seed, cfg)?;
    let len = cfg.num_samples();
    let fs = cfg.sample_rate;
    let geo = &params.geometry;
    let mics = geo.array.num_mics();

    let speech = |source_seed: u64| -> Result<Vec<f64>> {
        match &cfg.speech_dir {
            Some(dir) => {
                let corpus = SourceCorpus::from_dir(dir)?;
                corpus.draw(&mut ChaCha8Rng::seed_from_u64(source_seed), len, fs)
            }
            None => Ok(synth_speech(source_seed, len, fs)),
        }
    };
    let target_dry = MultichannelWave::mono(speech(params.target_source_seed)?, fs)?;
    let interf_dry = MultichannelWave::mono(speech(params.interference_source_seed)?, fs)?;
    let noise_rows = match &cfg.noise_dir {
        Some(dir) => {
            let corpus = SourceCorpus::from_dir(dir)?;
            let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
            (0..mics)
                .map(|_| corpus.draw(&mut rng, len, fs))
                .collect::<Result<Vec<_>>>()?
        }
        None => pink_noise(params.noise_seed, mics, len),
    };
    let noise = MultichannelWave::new(noise_rows, fs)?;

    let rir_t = simulate_rir(&geo.room, geo.target_position, &geo.array)?;
    let rir_i = simulate_rir(&geo.room, geo.interference_position, &geo.array)?;
    let mut scene = mix_scene(
        &target_dry,
        &interf_dry,
        &rir_t,
        &rir_i,
        &noise,
        params.sir_db,
        params.snr_db,
        geo.array.reference_mic,
    )?;
    scene.seed = Some(seed);
    scene.geometry = Some(params.geometry);
    Ok(scene)
}
