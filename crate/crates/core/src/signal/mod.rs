//! Time-domain waves, WAV files and the STFT engine.

mod stft;
mod wav;
mod wave;

pub use stft::{istft, istft_adjoint, stft, Spectrogram, StftConfig, WindowKind};
pub use wav::{read_wav, write_wav, WavEncoding};
pub use wave::MultichannelWave;
