//! Pipeline configuration: JSON file, `--set key=value` overrides and
//! validation against every stage before any work starts.

use std::path::Path;

use beamkit_core::pipeline::ExtractionConfig;
use beamkit_core::room::SimConfig;
use beamkit_core::signal::WavEncoding;
use beamkit_neural::model::ModelConfig;
use beamkit_neural::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamPatternConfig {
    pub angle_step_deg: f64,
    /// Frequency band averaged into the pattern, in Hz.
    pub band_hz: (f64, f64),
}

impl Default for BeamPatternConfig {
    fn default() -> Self {
        Self {
            angle_step_deg: 1.0,
            band_hz: (500.0, 4000.0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub simulation: SimConfig,
    pub extraction: ExtractionConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub beampattern: BeamPatternConfig,
    pub wav_encoding: WavEncoding,
}

impl PipelineConfig {
    /// Defaults, then the file at `path`, then each `key=value` override.
    /// Every problem found is returned, not just the first.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Vec<String>> {
        let mut value = serde_json::to_value(Self::default()).expect("config serialises");
        let mut errors = Vec::new();
        if let Some(p) = path {
            match std::fs::read_to_string(p) {
                Ok(text) => match serde_json::from_str::<Value>(&text) {
                    Ok(user) => {
                        unknown_keys(&user, &value, "", &mut errors);
                        merge(&mut value, user);
                    }
                    Err(e) => errors.push(format!("{}: {e}", p.display())),
                },
                Err(e) => errors.push(format!("{}: {e}", p.display())),
            }
        }
        for o in overrides {
            if let Err(e) = apply_override(&mut value, o) {
                errors.push(e);
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| vec![e.to_string()])?;
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(v)
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self.simulation.violations().into_iter().map(|e| format!("simulation: {e}")).collect();
        let ex = &self.extraction;
        if let Err(e) = ex.stft.validate() {
            v.push(format!("extraction.stft: {e}"));
        }
        if !(ex.loading.is_finite() && ex.loading >= 0.0) {
            v.push(format!("extraction.loading must be finite and >= 0, got {}", ex.loading));
        }
        if !(ex.speed_of_sound.is_finite() && ex.speed_of_sound > 0.0) {
            v.push(format!("extraction.speed_of_sound must be positive, got {}", ex.speed_of_sound));
        }
        v.extend(self.model.validate().into_iter().map(|e| format!("model.{e}")));
        let planes = self.simulation.array.pairs.len() + 2;
        if self.model.preseparator.unet_channels.first() != Some(&planes) {
            v.push(format!(
                "model.preseparator.unet_channels must start with {planes} (magnitude, one cosIPD per pair, angle feature)"
            ));
        }
        v.extend(self.training.validate().into_iter().map(|e| format!("training: {e}")));
        let bp = &self.beampattern;
        if !(bp.angle_step_deg > 0.0 && bp.angle_step_deg <= 180.0) {
            v.push(format!("beampattern.angle_step_deg must lie in (0, 180], got {}", bp.angle_step_deg));
        }
        let nyquist = self.simulation.sample_rate as f64 / 2.0;
        if !(bp.band_hz.0 >= 0.0 && bp.band_hz.0 < bp.band_hz.1 && bp.band_hz.1 <= nyquist) {
            v.push(format!("beampattern.band_hz must satisfy 0 <= lo < hi <= {nyquist}, got {:?}", bp.band_hz));
        }
        v
    }
}

fn unknown_keys(user: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(u), Value::Object(k)) = (user, known) {
        for (key, val) in u {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                Some(kv) => unknown_keys(val, kv, &path, out),
                None => out.push(format!("unknown key {path}")),
            }
        }
    }
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
fn apply_override(root: &mut Value, text: &str) -> Result<(), String> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| format!("override {text:?} is not key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(m) => m.get_mut(part).ok_or_else(|| format!("unknown key {key}"))?,
            Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| format!("unknown key {key}"))?;
                a.get_mut(i).ok_or_else(|| format!("index out of range in {key}"))?
            }
            _ => return Err(format!("unknown key {key}")),
        };
    }
    *slot = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(PipelineConfig::default().violations().is_empty());
        assert_eq!(PipelineConfig::load(None, &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "simulation.duration_s=0.5".into(),
                "extraction.steering=pca".into(),
                "model.preseparator.mask_kind=crm".into(),
                "beampattern.band_hz.1=3000".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.simulation.duration_s, 0.5);
        assert_eq!(cfg.beampattern.band_hz.1, 3000.0);
    }

    #[test]
    fn every_problem_is_listed() {
        let errs = PipelineConfig::load(
            None,
            &[
                "simulation.nonsense=1".into(),
                "noequals".into(),
                "training.learning_rate=-1".into(),
            ],
        )
        .unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
        let errs = PipelineConfig::load(None, &["training.learning_rate=-1".into(), "extraction.loading=-2".into()]).unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
    }

    #[test]
    fn unknown_file_keys_are_reported_with_their_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"simulation": {"duraton_s": 1.0}, "seed": 3}"#).unwrap();
        let errs = PipelineConfig::load(Some(&p), &[]).unwrap_err();
        assert_eq!(errs, vec!["unknown key simulation.duraton_s".to_string()]);
        std::fs::write(&p, r#"{"simulation": {"duration_s": 1.0}, "seed": 3}"#).unwrap();
        assert_eq!(PipelineConfig::load(Some(&p), &[]).unwrap().seed, 3);
    }
}
