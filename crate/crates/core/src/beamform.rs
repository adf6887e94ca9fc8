//! Steering vectors, PCA steering estimation, MVDR weights, beamformer
//! application and beam patterns.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DVector, SymmetricEigen};
use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::masks::{CMatrix, CovarianceField};
use crate::room::ArrayGeometry;
use crate::signal::{Spectrogram, StftConfig};

pub type CVector = DVector<Complex64>;

/// Plane-wave phase vector for one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub values: CVector,
    pub theta: f64,
    pub frequency: f64,
}

/// `exp(-j 2 pi f tau_m)` with `tau_m = x_m cos(theta) / c` and `x_m` the
/// axial coordinate relative to the reference mic.
pub fn steering_vector(theta_deg: f64, frequency: f64, array: &ArrayGeometry, speed_of_sound: f64) -> Result<SteeringVector> {
    if !frequency.is_finite() || frequency < 0.0 {
        return Err(Error::InvalidArgument(format!("frequency {frequency}")));
    }
    let x = array.axial_coordinates()?;
    let cos_theta = theta_deg.to_radians().cos();
    let values = CVector::from_iterator(
        x.len(),
        x.iter().map(|xm| {
            let tau = xm * cos_theta / speed_of_sound;
            Complex64::from_polar(1.0, -2.0 * PI * frequency * tau)
        }),
    );
    Ok(SteeringVector {
        values,
        theta: theta_deg,
        frequency,
    })
}

/// One steering vector per STFT bin.
pub fn steering_for_bins(
    theta_deg: f64,
    cfg: &StftConfig,
    sample_rate: u32,
    array: &ArrayGeometry,
    speed_of_sound: f64,
) -> Result<Vec<CVector>> {
    (0..cfg.num_bins())
        .map(|k| steering_vector(theta_deg, cfg.bin_frequency(k, sample_rate), array, speed_of_sound).map(|s| s.values))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaSteering {
    /// Unit-norm principal eigenvector, reference element real and >= 0.
    pub vector: CVector,
    /// Top two eigenvalues closer than `1e-9 * trace`.
    pub degenerate: bool,
}

impl PcaSteering {
    /// Rescaled so the reference element is exactly 1 (relative transfer
    /// function). Falls back to the unit-norm vector when that element is
    /// numerically zero.
    pub fn relative_to_reference(&self, reference_mic: usize) -> CVector {
        let r = self.vector[reference_mic];
        if r.norm() > 1e-12 {
            self.vector.map(|v| v / r)
        } else {
            self.vector.clone()
        }
    }
}

/// Principal eigenvector of a Hermitian PSD matrix.
pub fn pca_steering(phi_ss: &CMatrix, reference_mic: usize) -> Result<PcaSteering> {
    let m = phi_ss.nrows();
    if m == 0 || phi_ss.ncols() != m {
        return Err(Error::Shape(format!("{}x{} covariance", m, phi_ss.ncols())));
    }
    if reference_mic >= m {
        return Err(Error::InvalidArgument(format!("reference mic {reference_mic}")));
    }
    if phi_ss.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("covariance".into()));
    }
    let herm = (phi_ss + phi_ss.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let top = order[0];
    let trace: f64 = (0..m).map(|i| phi_ss[(i, i)].re).sum();
    let degenerate = m > 1 && (eig.eigenvalues[top] - eig.eigenvalues[order[1]]) < 1e-9 * trace.abs();

    let mut v: CVector = eig.eigenvectors.column(top).into_owned();
    let norm = v.norm();
    if norm > 0.0 {
        v /= Complex64::new(norm, 0.0);
    }
    let r = v[reference_mic];
    if r.norm() > 0.0 {
        let rot = r.conj() / r.norm();
        v *= rot;
        v[reference_mic] = Complex64::new(v[reference_mic].norm(), 0.0);
    }
    Ok(PcaSteering {
        vector: v,
        degenerate,
    })
}

/// Principal eigenvector of the noise-whitened speech covariance
/// `L^-1 phi_ss L^-H` (with `L L^H` the loaded noise covariance), mapped back
/// through `L` and scaled so the reference element is 1. Unlike plain PCA on
/// `phi_ss` this discounts noise that leaks into the speech estimate.
pub fn whitened_pca_steering(phi_ss: &CMatrix, phi_nn: &CMatrix, reference_mic: usize, loading: f64) -> Result<PcaSteering> {
    let m = phi_ss.nrows();
    if phi_ss.ncols() != m || phi_nn.nrows() != m || phi_nn.ncols() != m || m == 0 {
        return Err(Error::Shape("speech and noise covariances differ in size".into()));
    }
    let trace: f64 = (0..m).map(|i| phi_nn[(i, i)].re).sum();
    let mut a = (phi_nn + phi_nn.adjoint()) * Complex64::new(0.5, 0.0);
    let delta = loading.max(0.0) * trace / m as f64;
    for i in 0..m {
        a[(i, i)] += Complex64::new(delta, 0.0);
    }
    let l = a.cholesky().ok_or(Error::Singular(0))?.l();
    let white = l
        .solve_lower_triangular(&l.solve_lower_triangular(phi_ss).ok_or(Error::Singular(0))?.adjoint())
        .ok_or(Error::Singular(0))?;
    let p = pca_steering(&white, reference_mic)?;
    let mut v = &l * &p.vector;
    let norm = v.norm();
    if norm > 0.0 {
        v /= Complex64::new(norm, 0.0);
    }
    let r = v[reference_mic];
    if r.norm() > 0.0 {
        v *= r.conj() / r.norm();
        v[reference_mic] = Complex64::new(v[reference_mic].norm(), 0.0);
    }
    Ok(PcaSteering {
        vector: v,
        degenerate: p.degenerate,
    })
}

/// `w = A^-1 a / (a^H A^-1 a)` with `A = phi_nn + loading * (trace / M) I`,
/// solved through a Hermitian (Cholesky) factorisation.
pub fn mvdr_weights(phi_nn: &CMatrix, steering: &CVector, loading: f64) -> Result<CVector> {
    mvdr_weights_at(phi_nn, steering, loading, 0)
}

fn mvdr_weights_at(phi_nn: &CMatrix, steering: &CVector, loading: f64, bin: usize) -> Result<CVector> {
    let m = phi_nn.nrows();
    if phi_nn.ncols() != m || steering.len() != m {
        return Err(Error::Shape(format!(
            "{}x{} covariance with {}-element steering",
            m,
            phi_nn.ncols(),
            steering.len()
        )));
    }
    if steering.norm() == 0.0 {
        return Err(Error::InvalidArgument("zero steering vector".into()));
    }
    if !(loading >= 0.0) {
        return Err(Error::InvalidArgument(format!("loading factor {loading}")));
    }
    let trace: f64 = (0..m).map(|i| phi_nn[(i, i)].re).sum();
    let mut a = (phi_nn + phi_nn.adjoint()) * Complex64::new(0.5, 0.0);
    let delta = loading * trace / m as f64;
    for i in 0..m {
        a[(i, i)] += Complex64::new(delta, 0.0);
    }
    let chol = a.cholesky().ok_or(Error::Singular(bin))?;
    let x = chol.solve(steering);
    let denom = steering.dotc(&x);
    if !(denom.norm() > 0.0) || !denom.re.is_finite() {
        return Err(Error::Singular(bin));
    }
    let w = x / denom;
    if w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Singular(bin));
    }
    Ok(w)
}

/// Complex weights `[T x F x M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    pub weights: Array3<Complex64>,
}

impl BeamWeights {
    /// Repeats one weight vector per frequency across `frames`.
    pub fn broadcast(per_freq: &[CVector], frames: usize) -> Result<Self> {
        let m = per_freq.first().map_or(0, |w| w.len());
        if per_freq.iter().any(|w| w.len() != m) {
            return Err(Error::Shape("ragged weight vectors".into()));
        }
        let weights = Array3::from_shape_fn((frames, per_freq.len(), m), |(_, f, k)| per_freq[f][k]);
        Ok(Self { weights })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.weights.dim()
    }

    pub fn at(&self, t: usize, f: usize) -> CVector {
        let m = self.weights.dim().2;
        CVector::from_iterator(m, (0..m).map(|k| self.weights[[t, f, k]]))
    }
}

/// MVDR per frequency from an utterance-level noise covariance.
pub fn mvdr_field(phi_nn: &CovarianceField, steering: &[CVector], loading: f64, frames: usize) -> Result<BeamWeights> {
    if steering.len() != phi_nn.freqs() {
        return Err(Error::Shape(format!(
            "{} steering vectors for {} frequencies",
            steering.len(),
            phi_nn.freqs()
        )));
    }
    let per_freq = (0..phi_nn.freqs())
        .map(|f| mvdr_weights_at(phi_nn.at(0, f), &steering[f], loading, f))
        .collect::<Result<Vec<_>>>()?;
    BeamWeights::broadcast(&per_freq, frames)
}

/// `w(t,f)^H y(t,f)` as a single-channel spectrogram.
pub fn apply_beamformer(weights: &BeamWeights, spec: &Spectrogram) -> Result<Spectrogram> {
    let (t_n, f_n, m) = weights.dim();
    if t_n != spec.frames() || f_n != spec.freqs() || m != spec.channels() {
        return Err(Error::Shape(format!(
            "weights {:?} vs spectrogram (T, F, M) = {:?}",
            weights.dim(),
            (spec.frames(), spec.freqs(), spec.channels())
        )));
    }
    let y = spec.bins();
    let w = &weights.weights;
    let out = Array3::from_shape_fn((1, t_n, f_n), |(_, t, f)| {
        (0..m).map(|k| w[[t, f, k]].conj() * y[[k, t, f]]).sum()
    });
    spec.with_bins(out)
}

/// Linear array gain per look angle, one row per frame or segment.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPattern {
    pub angle_grid: Vec<f64>,
    pub gains: Vec<Vec<f64>>,
}

impl BeamPattern {
    /// Averages rows over each frame range.
    pub fn segment_average(&self, segments: &[Range<usize>]) -> Result<BeamPattern> {
        let gains = segments
            .iter()
            .map(|r| {
                if r.is_empty() || r.end > self.gains.len() {
                    return Err(Error::InvalidArgument(format!("segment {r:?}")));
                }
                let n = r.len() as f64;
                Ok((0..self.angle_grid.len())
                    .map(|a| self.gains[r.clone()].iter().map(|row| row[a]).sum::<f64>() / n)
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BeamPattern {
            angle_grid: self.angle_grid.clone(),
            gains,
        })
    }

    pub fn time_average(&self) -> Result<BeamPattern> {
        self.segment_average(&[0..self.gains.len()])
    }

    /// Header row of angles, then one row of linear gains per segment.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = self.angle_grid.iter().map(|a| format!("{a}")).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for row in &self.gains {
            let cells: Vec<String> = row.iter().map(|g| format!("{g:.9e}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    /// Angle of the largest gain in `row`.
    pub fn argmax(&self, row: usize) -> f64 {
        let (i, _) = self.gains[row]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty grid");
        self.angle_grid[i]
    }
}

/// Bins whose centre frequency lies in `[lo, hi]` Hz, paired with that frequency.
pub fn band_bins(cfg: &StftConfig, sample_rate: u32, lo: f64, hi: f64) -> Vec<(usize, f64)> {
    (0..cfg.num_bins())
        .map(|k| (k, cfg.bin_frequency(k, sample_rate)))
        .filter(|(_, f)| *f >= lo && *f <= hi)
        .collect()
}

/// `mean_f |w(t,f)^H a(theta,f)|` over the listed `(bin, Hz)` pairs.
pub fn beam_pattern(
    weights: &BeamWeights,
    array: &ArrayGeometry,
    angle_grid: &[f64],
    bins: &[(usize, f64)],
    speed_of_sound: f64,
) -> Result<BeamPattern> {
    if angle_grid.is_empty() {
        return Err(Error::InvalidArgument("empty angle grid".into()));
    }
    if bins.is_empty() {
        return Err(Error::InvalidArgument("no frequency bins selected".into()));
    }
    if let Some(a) = angle_grid.iter().find(|a| !(0.0..=180.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!("angle {a} outside [0, 180]")));
    }
    let (t_n, f_n, m) = weights.dim();
    if let Some((k, _)) = bins.iter().find(|(k, _)| *k >= f_n) {
        return Err(Error::Shape(format!("bin {k} beyond {f_n} weight bins")));
    }
    let single_mic;
    let array = if m == 1 {
        single_mic = ArrayGeometry {
            mic_positions: vec![[0.0; 3]],
            pairs: vec![],
            reference_mic: 0,
        };
        &single_mic
    } else {
        array
    };
    let steer: Vec<Vec<CVector>> = angle_grid
        .iter()
        .map(|theta| {
            bins.iter()
                .map(|(_, hz)| {
                    if m == 1 {
                        Ok(CVector::from_element(1, Complex64::new(1.0, 0.0)))
                    } else {
                        steering_vector(*theta, *hz, array, speed_of_sound).map(|s| s.values)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if m > 1 && array.num_mics() != m {
        return Err(Error::Shape(format!("{m}-channel weights for {}-mic array", array.num_mics())));
    }
    let w = &weights.weights;
    let gains = (0..t_n)
        .map(|t| {
            steer
                .iter()
                .map(|per_bin| {
                    bins.iter()
                        .zip(per_bin)
                        .map(|((k, _), a)| {
                            (0..m)
                                .map(|i| w[[t, *k, i]].conj() * a[i])
                                .sum::<Complex64>()
                                .norm()
                        })
                        .sum::<f64>()
                        / bins.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(BeamPattern {
        angle_grid: angle_grid.to_vec(),
        gains,
    })
}
