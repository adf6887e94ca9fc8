use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

/// Microphone positions plus the pairs used for phase-difference features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<Point3>,
    pub pairs: Vec<(usize, usize)>,
    pub reference_mic: usize,
}

impl Default for ArrayGeometry {
    /// Four microphones on the x axis at 3 cm spacing, pairs (0,1), (0,2), (0,3).
    fn default() -> Self {
        Self::uniform_linear(4, 0.03)
    }
}

impl ArrayGeometry {
    /// Mics at `x = 0, d, 2d, ...`, paired with mic 0.
    pub fn uniform_linear(mics: usize, spacing: f64) -> Self {
        Self {
            mic_positions: (0..mics).map(|m| [m as f64 * spacing, 0.0, 0.0]).collect(),
            pairs: (1..mics).map(|j| (0, j)).collect(),
            reference_mic: 0,
        }
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_mics();
        if m < 2 {
            return Err(Error::Geometry(format!("need at least 2 mics, got {m}")));
        }
        if self.reference_mic >= m {
            return Err(Error::Geometry(format!(
                "reference mic {} out of range",
                self.reference_mic
            )));
        }
        for &(i, j) in &self.pairs {
            if i == j || i >= m || j >= m {
                return Err(Error::Geometry(format!("invalid mic pair ({i}, {j})")));
            }
        }
        if self.mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mic positions".into()));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.num_mics() as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }

    /// Same shape, moved so that its centroid sits at `center`.
    pub fn centered_at(&self, center: Point3) -> Self {
        let c = self.centroid();
        let shift = sub(center, c);
        Self {
            mic_positions: self
                .mic_positions
                .iter()
                .map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]])
                .collect(),
            ..self.clone()
        }
    }

    /// Unit vector from mic 0 toward the mic farthest from it. Errors unless
    /// every mic lies on that line.
    pub fn axis(&self) -> Result<Point3> {
        self.validate()?;
        let p0 = self.mic_positions[0];
        let far = self
            .mic_positions
            .iter()
            .map(|p| sub(*p, p0))
            .max_by(|a, b| norm(*a).total_cmp(&norm(*b)))
            .expect("at least two mics");
        let len = norm(far);
        if len < 1e-9 {
            return Err(Error::Geometry("coincident microphones".into()));
        }
        let u = [far[0] / len, far[1] / len, far[2] / len];
        for p in &self.mic_positions {
            let d = sub(*p, p0);
            let along = dot(d, u);
            let off = norm([d[0] - along * u[0], d[1] - along * u[1], d[2] - along * u[2]]);
            if off > 1e-6 {
                return Err(Error::Geometry(format!(
                    "array is not linear: a mic sits {off:.2e} m off the axis"
                )));
            }
        }
        Ok(u)
    }

    /// Signed position of each mic along [`Self::axis`], relative to the
    /// reference mic.
    pub fn axial_coordinates(&self) -> Result<Vec<f64>> {
        let u = self.axis()?;
        let r = self.mic_positions[self.reference_mic];
        Ok(self
            .mic_positions
            .iter()
            .map(|p| dot(sub(*p, r), u))
            .collect())
    }

    /// `x_j - x_i` for every pair `(i, j)`.
    pub fn pair_spacings(&self) -> Result<Vec<f64>> {
        let x = self.axial_coordinates()?;
        Ok(self.pairs.iter().map(|&(i, j)| x[j] - x[i]).collect())
    }
}

/// Angle in degrees between the array axis and the source direction seen
/// from the centroid. 0° is on the axis beyond mic 0, 180° beyond the far
/// end, 90° broadside.
pub fn doa_of(source: Point3, array: &ArrayGeometry) -> Result<f64> {
    let u = array.axis()?;
    let d = sub(source, array.centroid());
    let len = norm(d);
    if len < 1e-12 {
        return Err(Error::Geometry("source coincides with array centroid".into()));
    }
    let cos = (-dot(d, u) / len).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_array_matches_reference_layout() {
        let a = ArrayGeometry::default();
        a.validate().unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (0, 2), (0, 3)]);
        let d = a.pair_spacings().unwrap();
        for (got, want) in d.iter().zip([0.03, 0.06, 0.09]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_catches_bad_pairs() {
        let mut a = ArrayGeometry::default();
        a.pairs.push((2, 2));
        assert!(a.validate().is_err());
        a.pairs = vec![(0, 4)];
        assert!(a.validate().is_err());
        let single = ArrayGeometry::uniform_linear(1, 0.03);
        assert!(single.validate().is_err());
    }

    #[test]
    fn doa_axis_broadside_and_diagonal() {
        let a = ArrayGeometry::default();
        let c = a.centroid();
        assert!(doa_of([c[0] - 2.0, 0.0, 0.0], &a).unwrap().abs() < 1e-9);
        assert!((doa_of([c[0] + 2.0, 0.0, 0.0], &a).unwrap() - 180.0).abs() < 1e-9);
        assert!((doa_of([c[0], 1.5, 0.0], &a).unwrap() - 90.0).abs() < 1e-9);
        let r = 1.3;
        let th = 45f64.to_radians();
        let p = [c[0] - r * th.cos(), r * th.sin(), 0.0];
        assert!((doa_of(p, &a).unwrap() - 45.0).abs() < 0.1);
    }

    #[test]
    fn doa_rejects_non_colinear_array() {
        let mut a = ArrayGeometry::default();
        a.mic_positions[2][1] = 0.01;
        assert!(matches!(doa_of([1.0, 1.0, 0.0], &a), Err(Error::Geometry(_))));
    }
}
