//! Multichannel target speech extraction toolkit.
//!
//! The crate covers the classical half of a mask-based beamforming pipeline:
//! WAV I/O and an exact-reconstruction STFT ([`signal`]), image-source room
//! simulation and scene mixing ([`room`]), spatial input features
//! ([`features`]), oracle masks and spatial covariance estimation ([`masks`]),
//! steering vectors, MVDR and beam patterns ([`beamform`]), and objective
//! metrics ([`metrics`]).
//!
//! All audio is `f64` in `[-1, 1]` internally. Spectrograms are indexed
//! `(channel, frame, frequency)`; mask and feature planes are indexed
//! `(frequency, frame)`.

pub mod beamform;
pub mod dump;
pub mod error;
pub mod features;
pub mod masks;
pub mod metrics;
pub mod pipeline;
pub mod room;
pub mod signal;

pub use error::{Error, Result};
pub use num_complex::Complex64;
