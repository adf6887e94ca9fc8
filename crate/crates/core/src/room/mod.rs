//! Shoebox room acoustics: array geometry, image-source impulse responses,
//! dry source synthesis and scene mixing.

mod geometry;
mod rir;
mod scene;
mod sources;

pub use geometry::{doa_of, ArrayGeometry, Point3};
pub use rir::{
    auto_image_order, fft_convolve, sabine_absorption, simulate_rir, DelayInterpolation,
    ImpulseResponseSet, RoomConfig, MAX_IMAGE_ORDER_CAP,
};
pub use scene::{
    generate_scene, mix_scene, sample_scene_params, MixtureScene, SceneGeometry, SceneParams,
    SimConfig,
};
pub use sources::{pink_noise, synth_speech, SourceCorpus};

/// Default speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
