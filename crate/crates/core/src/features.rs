//! Stacked network inputs: reference magnitude, cosine inter-channel phase
//! differences and the target angle feature.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::room::ArrayGeometry;
use crate::signal::Spectrogram;

/// Real feature planes `[N x F x T]`: magnitude, one cosIPD plane per pair,
/// then the angle feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub data: Array3<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub target_doa: f64,
}

impl FeatureStack {
    pub fn num_planes(&self) -> usize {
        self.data.dim().0
    }

    pub fn plane_names(&self) -> Vec<String> {
        let mut names = vec!["magnitude".to_string()];
        names.extend(self.pairs.iter().map(|(i, j)| format!("cos_ipd_{i}_{j}")));
        names.push("angle_feature".into());
        names
    }

    /// cosIPD planes followed by the angle feature, `[P + 1, F, T]`.
    pub fn spatial(&self) -> Array3<f64> {
        self.data.slice(s![1.., .., ..]).to_owned()
    }
}

fn phase(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        0.0
    } else {
        c.arg()
    }
}

fn check_channel(spec: &Spectrogram, m: usize) -> Result<()> {
    if m >= spec.channels() {
        return Err(Error::InvalidArgument(format!(
            "channel {m} out of range for {} channels",
            spec.channels()
        )));
    }
    Ok(())
}

/// `|Y_ref(t, f)|` as an `[F x T]` plane.
pub fn magnitude_ref(spec: &Spectrogram, reference_mic: usize) -> Result<Array2<f64>> {
    check_channel(spec, reference_mic)?;
    Ok(spec.channel(reference_mic).t().mapv(|c| c.norm()))
}

/// Observed phase difference `angle(Y_i) - angle(Y_j)`; zero-magnitude bins
/// count as phase 0.
fn ipd(spec: &Spectrogram, i: usize, j: usize) -> Array2<f64> {
    let yi = spec.channel(i);
    let yj = spec.channel(j);
    Array2::from_shape_fn((spec.freqs(), spec.frames()), |(f, t)| {
        phase(yi[[t, f]]) - phase(yj[[t, f]])
    })
}

/// `cos(IPD)` per pair, `[P x F x T]`.
pub fn cos_ipd(spec: &Spectrogram, pairs: &[(usize, usize)]) -> Result<Array3<f64>> {
    for &(i, j) in pairs {
        check_channel(spec, i)?;
        check_channel(spec, j)?;
    }
    let mut out = Array3::zeros((pairs.len(), spec.freqs(), spec.frames()));
    for (p, &(i, j)) in pairs.iter().enumerate() {
        out.index_axis_mut(Axis(0), p).assign(&ipd(spec, i, j).mapv(f64::cos));
    }
    Ok(out)
}

/// Mean over pairs of `cos(IPD_p - 2 pi f d_p cos(theta) / c)`, `[F x T]`.
/// Divided by the pair count so a perfect match scores 1.
pub fn angle_feature(
    spec: &Spectrogram,
    pairs: &[(usize, usize)],
    theta_deg: f64,
    array: &ArrayGeometry,
    speed_of_sound: f64,
) -> Result<Array2<f64>> {
    if !(0.0..=180.0).contains(&theta_deg) {
        return Err(Error::InvalidArgument(format!("theta {theta_deg} outside [0, 180]")));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("angle feature needs at least one pair".into()));
    }
    let x = array.axial_coordinates()?;
    let cos_theta = theta_deg.to_radians().cos();
    let mut out = Array2::zeros((spec.freqs(), spec.frames()));
    for &(i, j) in pairs {
        check_channel(spec, i)?;
        check_channel(spec, j)?;
        if i >= x.len() || j >= x.len() {
            return Err(Error::Shape(format!("pair ({i}, {j}) outside array geometry")));
        }
        let d = x[j] - x[i];
        let obs = ipd(spec, i, j);
        for f in 0..spec.freqs() {
            let expected = 2.0 * PI * spec.bin_frequency(f) * d * cos_theta / speed_of_sound;
            for t in 0..spec.frames() {
                out[[f, t]] += (obs[[f, t]] - expected).cos();
            }
        }
    }
    out.mapv_inplace(|v| v / pairs.len() as f64);
    Ok(out)
}

/// Stacks along the channel axis in the order magnitude, cosIPD, AF.
pub fn stack_features(
    magnitude: &Array2<f64>,
    cos_ipd: &Array3<f64>,
    af: &Array2<f64>,
    pairs: &[(usize, usize)],
    target_doa: f64,
) -> Result<FeatureStack> {
    let (f, t) = magnitude.dim();
    let (p, fc, tc) = cos_ipd.dim();
    if (fc, tc) != (f, t) || af.dim() != (f, t) {
        return Err(Error::Shape(format!(
            "planes disagree: magnitude {:?}, cos_ipd {:?}, af {:?}",
            magnitude.dim(),
            (fc, tc),
            af.dim()
        )));
    }
    if p != pairs.len() {
        return Err(Error::Shape(format!("{p} cosIPD planes for {} pairs", pairs.len())));
    }
    let mut data = Array3::zeros((p + 2, f, t));
    data.index_axis_mut(Axis(0), 0).assign(magnitude);
    data.slice_mut(s![1..=p, .., ..]).assign(cos_ipd);
    data.index_axis_mut(Axis(0), p + 1).assign(af);
    Ok(FeatureStack {
        data,
        pairs: pairs.to_vec(),
        target_doa,
    })
}

/// All three feature groups for a mixture spectrogram.
pub fn extract_features(
    spec: &Spectrogram,
    array: &ArrayGeometry,
    target_doa: f64,
    speed_of_sound: f64,
) -> Result<FeatureStack> {
    let mag = magnitude_ref(spec, array.reference_mic)?;
    let cos = cos_ipd(spec, &array.pairs)?;
    let af = angle_feature(spec, &array.pairs, target_doa, array, speed_of_sound)?;
    stack_features(&mag, &cos, &af, &array.pairs, target_doa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::StftConfig;

    fn spec_from(bins: Array3<Complex64>) -> Spectrogram {
        let cfg = StftConfig::toy();
        Spectrogram::new(bins, cfg, 1000, 16000).unwrap()
    }

    fn random_bins(m: usize, t: usize, seed: u64) -> Array3<Complex64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((m, t, 65), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn magnitude_examples() {
        let mut bins = Array3::zeros((2, 3, 65));
        assert!(magnitude_ref(&spec_from(bins.clone()), 0).unwrap().iter().all(|v| *v == 0.0));
        bins[[0, 1, 4]] = Complex64::new(3.0, 4.0);
        let mag = magnitude_ref(&spec_from(bins), 0).unwrap();
        assert_eq!(mag[[4, 1]], 5.0);
        assert!(magnitude_ref(&spec_from(Array3::zeros((2, 3, 65))), 2).is_err());
    }

    #[test]
    fn magnitude_ignores_phase_rotation() {
        let bins = random_bins(1, 4, 1);
        let rotated = bins.mapv(|c| c * Complex64::from_polar(1.0, 0.7));
        let a = magnitude_ref(&spec_from(bins), 0).unwrap();
        let b = magnitude_ref(&spec_from(rotated), 0).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cos_ipd_identical_and_opposite_channels() {
        let one = random_bins(1, 5, 2);
        let mut same = Array3::zeros((2, 5, 65));
        same.index_axis_mut(Axis(0), 0).assign(&one.index_axis(Axis(0), 0));
        same.index_axis_mut(Axis(0), 1).assign(&one.index_axis(Axis(0), 0));
        let c = cos_ipd(&spec_from(same.clone()), &[(0, 1)]).unwrap();
        assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let mut opposite = same;
        opposite.index_axis_mut(Axis(0), 1).mapv_inplace(|c| -c);
        let c = cos_ipd(&spec_from(opposite), &[(0, 1)]).unwrap();
        assert!(c.iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_bins_have_zero_phase() {
        let mut bins = Array3::zeros((2, 1, 65));
        bins[[1, 0, 3]] = Complex64::new(0.0, 2.0);
        let c = cos_ipd(&spec_from(bins), &[(0, 1)]).unwrap();
        assert!((c[[0, 3, 0]] - 0.0).abs() < 1e-12);
        assert_eq!(c[[0, 4, 0]], 1.0);
    }

    #[test]
    fn broadside_angle_feature_is_mean_cos_ipd() {
        let spec = spec_from(random_bins(4, 6, 3));
        let array = ArrayGeometry::default();
        let af = angle_feature(&spec, &array.pairs, 90.0, &array, 343.0).unwrap();
        let c = cos_ipd(&spec, &array.pairs).unwrap();
        let mean = c.mean_axis(Axis(0)).unwrap();
        for (a, b) in af.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stack_order_and_shape_checks() {
        let mag = Array2::from_shape_fn((65, 4), |(f, t)| (f * 10 + t) as f64);
        let cos = Array3::from_elem((3, 65, 4), 0.5);
        let af = Array2::from_elem((65, 4), -0.25);
        let stack = stack_features(&mag, &cos, &af, &[(0, 1), (0, 2), (0, 3)], 40.0).unwrap();
        assert_eq!(stack.num_planes(), 5);
        assert_eq!(stack.data.index_axis(Axis(0), 0), mag);
        assert_eq!(stack.data[[4, 2, 2]], -0.25);
        assert_eq!(stack.plane_names()[1], "cos_ipd_0_1");
        let short_af = Array2::from_elem((65, 3), 0.0);
        assert!(stack_features(&mag, &cos, &short_af, &[(0, 1), (0, 2), (0, 3)], 40.0).is_err());
    }

    #[test]
    fn angle_feature_rejects_bad_theta() {
        let spec = spec_from(random_bins(4, 2, 4));
        let array = ArrayGeometry::default();
        assert!(angle_feature(&spec, &array.pairs, 181.0, &array, 343.0).is_err());
    }
}
