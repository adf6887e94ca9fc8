use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::MultichannelWave;
use crate::error::{Error, Result};

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

// Symmetric scale so that +1 and -1 both map to representable codes.
const PCM16_SCALE: f64 = 32767.0;

fn wav_err(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWave> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| (v as f64 / PCM16_SCALE).max(-1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{format:?} with {bits} bits per sample"
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio(path.display().to_string()));
    }
    let frames = interleaved.len() / channels;
    let mut rows = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (row, v) in rows.iter_mut().zip(frame) {
            row.push(*v);
        }
    }
    MultichannelWave::new(rows, spec.sample_rate)
}

/// Writes interleaved samples. Values outside `[-1, 1]` are rejected, never
/// clipped.
pub fn write_wav(path: impl AsRef<Path>, wave: &MultichannelWave, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    for (channel, row) in wave.samples().iter().enumerate() {
        for (index, &value) in row.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("channel {channel}, sample {index}")));
            }
            if value.abs() > 1.0 {
                return Err(Error::OutOfRange {
                    channel,
                    index,
                    value,
                });
            }
        }
    }
    let channels = u16::try_from(wave.channels())
        .map_err(|_| Error::InvalidArgument("too many channels".into()))?;
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels,
            sample_rate: wave.sample_rate(),
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels,
            sample_rate: wave.sample_rate(),
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for i in 0..wave.len() {
        for row in wave.samples() {
            let v = row[i];
            match encoding {
                WavEncoding::Pcm16 => writer.write_sample((v * PCM16_SCALE).round() as i16),
                WavEncoding::Float32 => writer.write_sample(v as f32),
            }
            .map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
