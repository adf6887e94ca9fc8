use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-domain multichannel audio, one row per microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultichannelWave {
    samples: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultichannelWave {
    pub fn new(samples: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Shape("wave needs at least one channel".into()));
        }
        let len = samples[0].len();
        if let Some((ch, row)) = samples.iter().enumerate().find(|(_, r)| r.len() != len) {
            return Err(Error::Shape(format!(
                "channel {ch} has {} samples, channel 0 has {len}",
                row.len()
            )));
        }
        for (ch, row) in samples.iter().enumerate() {
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("channel {ch}, sample {i}")));
            }
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; channels], sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.samples[index]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Vec<f64>> {
        self.samples
    }

    /// Keeps a single channel as a mono wave.
    pub fn select_channel(&self, index: usize) -> Result<Self> {
        let row = self.samples.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "channel {index} out of range for {}-channel wave",
                self.channels()
            ))
        })?;
        Ok(Self {
            samples: vec![row.clone()],
            sample_rate: self.sample_rate,
        })
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|row| row.iter().map(|v| v * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().flatten().map(|v| v * v).sum()
    }
}
