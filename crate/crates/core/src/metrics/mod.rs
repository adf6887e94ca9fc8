//! Objective quality metrics: SI-SDR and STOI, plus per-utterance reports.

mod stoi;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use stoi::{stoi, StoiConfig};

pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant SDR in dB, capped at [`SI_SDR_CAP_DB`].
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    if est.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("si_sdr input".into()));
    }
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::ZeroPower("si_sdr reference".into()));
    }
    let dot: f64 = est.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let (mut target, mut err) = (0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let s = alpha * r;
        target += s * s;
        err += (e - s) * (e - s);
    }
    if err == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    if target == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / err).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    pub si_sdr_db: f64,
    pub stoi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean_si_sdr_db: f64,
    pub mean_stoi: f64,
    pub si_sdr_cap_db: f64,
    /// PESQ is not computed.
    pub pesq: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub utterances: Vec<UtteranceMetrics>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scores `est` against `reference` and appends a row.
    pub fn evaluate(&mut self, id: impl Into<String>, est: &[f64], reference: &[f64], sample_rate: u32) -> Result<&UtteranceMetrics> {
        let row = UtteranceMetrics {
            id: id.into(),
            si_sdr_db: si_sdr(est, reference)?,
            stoi: stoi(est, reference, sample_rate)?,
        };
        self.utterances.push(row);
        Ok(self.utterances.last().expect("just pushed"))
    }

    pub fn push(&mut self, row: UtteranceMetrics) {
        self.utterances.push(row);
    }

    pub fn summary(&self) -> MetricSummary {
        let n = self.utterances.len();
        let mean = |f: fn(&UtteranceMetrics) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                self.utterances.iter().map(f).sum::<f64>() / n as f64
            }
        };
        MetricSummary {
            count: n,
            mean_si_sdr_db: mean(|u| u.si_sdr_db),
            mean_stoi: mean(|u| u.stoi),
            si_sdr_cap_db: SI_SDR_CAP_DB,
            pesq: "excluded".into(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,si_sdr_db,stoi\n");
        for u in &self.utterances {
            let _ = writeln!(s, "{},{:.6},{:.6}", u.id, u.si_sdr_db, u.stoi);
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.05).sin() + 0.3 * (i as f64 * 0.173).cos()).collect()
    }

    #[test]
    fn identical_hits_cap() {
        let x = tone(1000);
        assert_eq!(si_sdr(&x, &x).unwrap(), SI_SDR_CAP_DB);
        let scaled: Vec<f64> = x.iter().map(|v| v * 3.7).collect();
        assert_eq!(si_sdr(&scaled, &x).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn orthogonal_ten_percent_error_is_twenty_db() {
        let n = 1000;
        let r: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.5 }).collect();
        // alternating sign pattern, then Gram-Schmidt against r
        let raw: Vec<f64> = (0..n).map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let proj: f64 = raw.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
        let e: Vec<f64> = raw.iter().zip(&r).map(|(a, b)| a - proj * b).collect();
        let scale = 0.1 * rr.sqrt() / e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let est: Vec<f64> = r.iter().zip(&e).map(|(a, b)| a + scale * b).collect();
        assert!((si_sdr(&est, &r).unwrap() - 20.0).abs() < 0.01);
    }

    #[test]
    fn scale_invariance_is_exact_for_powers_of_two() {
        let x = tone(777);
        let noisy: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 0.2 * ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let base = si_sdr(&noisy, &x).unwrap();
        for a in [0.25, 2.0, 8.0] {
            let s: Vec<f64> = noisy.iter().map(|v| v * a).collect();
            assert_eq!(si_sdr(&s, &x).unwrap(), base);
        }
    }

    #[test]
    fn depends_only_on_angle_so_swap_is_symmetric() {
        let x = tone(500);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 0.5 * (i as f64 * 1.3).sin()).collect();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let cos2 = xy * xy / (xx * yy);
        let want = 10.0 * (cos2 / (1.0 - cos2)).log10();
        assert!((si_sdr(&y, &x).unwrap() - want).abs() < 1e-9);
        assert!((si_sdr(&x, &y).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn bad_inputs_error() {
        assert!(matches!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::ZeroPower(_))));
        assert!(matches!(si_sdr(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn report_csv_and_summary() {
        let mut r = MetricReport::new();
        r.push(UtteranceMetrics { id: "a".into(), si_sdr_db: 1.0, stoi: 0.5 });
        r.push(UtteranceMetrics { id: "b".into(), si_sdr_db: 3.0, stoi: 0.7 });
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("id,si_sdr_db,stoi\n"));
        let s = r.summary();
        assert!((s.mean_si_sdr_db - 2.0).abs() < 1e-12);
        assert!((s.mean_stoi - 0.6).abs() < 1e-12);
        let json: serde_json::Value = serde_json::from_str(&r.summary_json().unwrap()).unwrap();
        assert_eq!(json["pesq"], "excluded");
    }
}
