//! On-disk scene layout, manifests and guarded output directories.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use beamkit_core::room::{MixtureScene, SceneGeometry};
use beamkit_core::signal::{read_wav, write_wav, MultichannelWave, WavEncoding};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub mixture: String,
    pub target: String,
    pub interference: String,
    pub noise: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub id: String,
    pub seed: Option<u64>,
    pub sample_rate: u32,
    pub num_samples: usize,
    pub channels: usize,
    pub reference_mic: usize,
    pub sir_db: f64,
    pub snr_db: f64,
    pub geometry: Option<SceneGeometry>,
    pub files: SceneFiles,
}

/// An extracted signal and the reference it should be scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateManifest {
    pub id: String,
    pub method: String,
    pub sample_rate: u32,
    /// Relative to the manifest's directory.
    pub estimate: String,
    pub reference: PathBuf,
    pub reference_channel: usize,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifest {
    Scene(SceneManifest),
    Estimate(EstimateManifest),
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

/// A scene directory read back from disk.
pub struct LoadedScene {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
    pub scene: MixtureScene,
}

impl LoadedScene {
    pub fn target_path(&self) -> PathBuf {
        self.dir.join(&self.manifest.files.target)
    }
}

pub fn load_scene(dir: &Path) -> Result<LoadedScene> {
    let manifest = match Manifest::read(&dir.join(MANIFEST))? {
        Manifest::Scene(m) => m,
        Manifest::Estimate(_) => bail!("{} holds an estimate, not a scene", dir.display()),
    };
    let read = |name: &str| -> Result<MultichannelWave> {
        let p = dir.join(name);
        let w = read_wav(&p).with_context(|| format!("reading {}", p.display()))?;
        if w.channels() != manifest.channels || w.len() != manifest.num_samples {
            bail!(
                "{}: {} channels x {} samples, manifest says {} x {}",
                p.display(),
                w.channels(),
                w.len(),
                manifest.channels,
                manifest.num_samples
            );
        }
        Ok(w)
    };
    let scene = MixtureScene {
        mixture: read(&manifest.files.mixture)?,
        target_reverberant: read(&manifest.files.target)?,
        interference_reverberant: read(&manifest.files.interference)?,
        noise: read(&manifest.files.noise)?,
        sir_db: manifest.sir_db,
        snr_db: manifest.snr_db,
        seed: manifest.seed,
        geometry: manifest.geometry.clone(),
    };
    Ok(LoadedScene {
        dir: dir.to_path_buf(),
        manifest,
        scene,
    })
}

/// Scene directories named by `inputs`: each is either a scene directory
/// or a directory whose immediate children are scene directories.
pub fn scene_dirs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.join(MANIFEST).is_file() {
            out.push(input.clone());
            continue;
        }
        let mut found: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST).is_file())
            .collect();
        if found.is_empty() {
            bail!("no scene manifests under {}", input.display());
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

/// Manifest files named by `inputs`, searched recursively in directories.
pub fn manifest_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == MANIFEST) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for input in inputs {
        if input.is_file() {
            out.push(input.clone());
        } else {
            let before = out.len();
            walk(input, &mut out)?;
            if out.len() == before {
                bail!("no manifests under {}", input.display());
            }
        }
    }
    Ok(out)
}

/// Output directory that removes whatever it created unless committed.
pub struct Staging {
    root: PathBuf,
    created_root: bool,
    created: Vec<PathBuf>,
    files: Vec<PathBuf>,
    committed: bool,
}

impl Staging {
    pub fn new(root: &Path) -> Result<Self> {
        let created_root = !root.exists();
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            created_root,
            created: Vec::new(),
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Fresh subdirectory; an existing one of the same name is replaced.
    pub fn dir(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        if p.exists() {
            std::fs::remove_dir_all(&p).with_context(|| format!("replacing {}", p.display()))?;
        }
        std::fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        self.created.push(p.clone());
        Ok(p)
    }

    pub fn write(&mut self, path: PathBuf, contents: &str) -> Result<()> {
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.track(path);
        Ok(())
    }

    pub fn write_wav(&mut self, path: PathBuf, wave: &MultichannelWave, enc: WavEncoding) -> Result<()> {
        write_wav(&path, wave, enc).with_context(|| format!("writing {}", path.display()))?;
        self.track(path);
        Ok(())
    }

    /// Records a file written by other means.
    pub fn track(&mut self, path: PathBuf) {
        if !self.created.iter().any(|d| path.starts_with(d)) {
            self.created.push(path.clone());
        }
        self.files.push(path);
    }

    /// Keeps everything and returns the files written, in order.
    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        if self.created_root {
            let _ = std::fs::remove_dir_all(&self.root);
            return;
        }
        for p in self.created.iter().rev() {
            let _ = if p.is_dir() { std::fs::remove_dir_all(p) } else { std::fs::remove_file(p) };
        }
    }
}

/// Writes the four signals and the manifest into `dir`.
pub fn write_scene(staging: &mut Staging, dir: &Path, id: &str, scene: &MixtureScene, enc: WavEncoding) -> Result<()> {
    let files = SceneFiles {
        mixture: "mixture.wav".into(),
        target: "target.wav".into(),
        interference: "interference.wav".into(),
        noise: "noise.wav".into(),
    };
    staging.write_wav(dir.join(&files.mixture), &scene.mixture, enc)?;
    staging.write_wav(dir.join(&files.target), &scene.target_reverberant, enc)?;
    staging.write_wav(dir.join(&files.interference), &scene.interference_reverberant, enc)?;
    staging.write_wav(dir.join(&files.noise), &scene.noise, enc)?;
    let manifest = Manifest::Scene(SceneManifest {
        id: id.to_string(),
        seed: scene.seed,
        sample_rate: scene.mixture.sample_rate(),
        num_samples: scene.mixture.len(),
        channels: scene.mixture.channels(),
        reference_mic: scene.geometry.as_ref().map_or(0, |g| g.array.reference_mic),
        sir_db: scene.sir_db,
        snr_db: scene.snr_db,
        geometry: scene.geometry.clone(),
        files,
    });
    staging.write(dir.join(MANIFEST), &to_json(&manifest))
}
