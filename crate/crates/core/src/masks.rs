//! Oracle masks, mask application and spatial covariance estimation.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::Spectrogram;

/// Magnitude limit for complex ratio masks.
pub const CRM_BOUND: f64 = 10.0;

pub type CMatrix = DMatrix<Complex64>;

/// Real-valued mask `[F x T]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMask {
    pub values: Array2<f64>,
}

/// Complex ratio mask `[F x T]` held as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMask {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    Real(RealMask),
    Complex(ComplexMask),
}

impl Mask {
    fn dim(&self) -> (usize, usize) {
        match self {
            Mask::Real(m) => m.values.dim(),
            Mask::Complex(m) => m.re.dim(),
        }
    }

    fn at(&self, f: usize, t: usize) -> Complex64 {
        match self {
            Mask::Real(m) => Complex64::new(m.values[[f, t]], 0.0),
            Mask::Complex(m) => Complex64::new(m.re[[f, t]], m.im[[f, t]]),
        }
    }
}

impl From<RealMask> for Mask {
    fn from(m: RealMask) -> Self {
        Mask::Real(m)
    }
}

impl From<ComplexMask> for Mask {
    fn from(m: ComplexMask) -> Self {
        Mask::Complex(m)
    }
}

fn check_pair(target: &Spectrogram, mix: &Spectrogram, reference_mic: usize) -> Result<()> {
    if target.bins().dim() != mix.bins().dim() {
        return Err(Error::Shape(format!(
            "target {:?} vs mixture {:?}",
            target.bins().dim(),
            mix.bins().dim()
        )));
    }
    if reference_mic >= mix.channels() {
        return Err(Error::InvalidArgument(format!("reference mic {reference_mic}")));
    }
    Ok(())
}

/// `|X| / |Y|` on the reference channel, clamped to `[0, 1]`; bins where
/// `|Y| = 0` get 0.
pub fn oracle_irm(target: &Spectrogram, mix: &Spectrogram, reference_mic: usize) -> Result<RealMask> {
    check_pair(target, mix, reference_mic)?;
    let x = target.channel(reference_mic);
    let y = mix.channel(reference_mic);
    let values = Array2::from_shape_fn((mix.freqs(), mix.frames()), |(f, t)| {
        let ym = y[[t, f]].norm();
        if ym == 0.0 {
            0.0
        } else {
            (x[[t, f]].norm() / ym).clamp(0.0, 1.0)
        }
    });
    Ok(RealMask { values })
}

/// Complex ratio `X / Y` on the reference channel with its magnitude clipped
/// to [`CRM_BOUND`]; bins where `|Y| = 0` get 0.
pub fn oracle_crm(target: &Spectrogram, mix: &Spectrogram, reference_mic: usize) -> Result<ComplexMask> {
    check_pair(target, mix, reference_mic)?;
    let x = target.channel(reference_mic);
    let y = mix.channel(reference_mic);
    let (f_n, t_n) = (mix.freqs(), mix.frames());
    let mut re = Array2::zeros((f_n, t_n));
    let mut im = Array2::zeros((f_n, t_n));
    for f in 0..f_n {
        for t in 0..t_n {
            let yv = y[[t, f]];
            if yv.norm() == 0.0 {
                continue;
            }
            let mut ratio = x[[t, f]] / yv;
            let mag = ratio.norm();
            if mag > CRM_BOUND {
                ratio *= CRM_BOUND / mag;
            }
            re[[f, t]] = ratio.re;
            im[[f, t]] = ratio.im;
        }
    }
    Ok(ComplexMask { re, im })
}

/// Multiplies every channel bin by the mask value at the same `(f, t)`.
pub fn apply_mask(mask: &Mask, spec: &Spectrogram) -> Result<Spectrogram> {
    if mask.dim() != (spec.freqs(), spec.frames()) {
        return Err(Error::Shape(format!(
            "mask {:?} vs spectrogram (F, T) = {:?}",
            mask.dim(),
            (spec.freqs(), spec.frames())
        )));
    }
    let y = spec.bins();
    let bins = Array3::from_shape_fn(y.dim(), |(m, t, f)| mask.at(f, t) * y[[m, t, f]]);
    spec.with_bins(bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Speech,
    Noise,
}

/// Hermitian `M x M` matrices per frequency, or per `(frame, frequency)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceField {
    matrices: Vec<CMatrix>,
    frames: Option<usize>,
    freqs: usize,
    pub kind: CovarianceKind,
}

impl CovarianceField {
    pub fn per_frequency(matrices: Vec<CMatrix>, kind: CovarianceKind) -> Self {
        let freqs = matrices.len();
        Self {
            matrices,
            frames: None,
            freqs,
            kind,
        }
    }

    pub fn freqs(&self) -> usize {
        self.freqs
    }

    /// `None` for utterance-level fields.
    pub fn frames(&self) -> Option<usize> {
        self.frames
    }

    pub fn mics(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }

    /// Utterance-level matrix at frequency `f`.
    pub fn at_freq(&self, f: usize) -> &CMatrix {
        assert!(self.frames.is_none(), "frame-level field indexed by frequency only");
        &self.matrices[f]
    }

    pub fn at(&self, t: usize, f: usize) -> &CMatrix {
        match self.frames {
            Some(_) => &self.matrices[t * self.freqs + f],
            None => &self.matrices[f],
        }
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }
}

fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn column(spec: &Spectrogram, t: usize, f: usize) -> nalgebra::DVector<Complex64> {
    nalgebra::DVector::from_iterator(spec.channels(), (0..spec.channels()).map(|m| spec.bins()[[m, t, f]]))
}

/// `sum_t M(t,f)^2 Y Y^H / sum_t M(t,f)^2` per frequency.
pub fn covariance_utterance(mask: &RealMask, mix: &Spectrogram, kind: CovarianceKind) -> Result<CovarianceField> {
    if mask.values.dim() != (mix.freqs(), mix.frames()) {
        return Err(Error::Shape(format!(
            "mask {:?} vs spectrogram (F, T) = {:?}",
            mask.values.dim(),
            (mix.freqs(), mix.frames())
        )));
    }
    let m = mix.channels();
    let mut out = Vec::with_capacity(mix.freqs());
    for f in 0..mix.freqs() {
        let mut acc = CMatrix::zeros(m, m);
        let mut weight = 0.0;
        for t in 0..mix.frames() {
            let w = mask.values[[f, t]].powi(2);
            if w == 0.0 {
                continue;
            }
            let y = column(mix, t, f);
            acc += &y * y.adjoint() * Complex64::new(w, 0.0);
            weight += w;
        }
        if weight == 0.0 {
            return Err(Error::EmptyMask(f));
        }
        out.push(hermitian_part(&(acc / Complex64::new(weight, 0.0))));
    }
    Ok(CovarianceField::per_frequency(out, kind))
}

/// Plain average of `X X^H` over frames, for already-masked spectrograms.
pub fn covariance_average(masked: &Spectrogram, kind: CovarianceKind) -> CovarianceField {
    let m = masked.channels();
    let scale = Complex64::new(1.0 / masked.frames() as f64, 0.0);
    let out = (0..masked.freqs())
        .map(|f| {
            let mut acc = CMatrix::zeros(m, m);
            for t in 0..masked.frames() {
                let x = column(masked, t, f);
                acc += &x * x.adjoint();
            }
            hermitian_part(&(acc * scale))
        })
        .collect();
    CovarianceField::per_frequency(out, kind)
}

/// Rank-one `X(t,f) X(t,f)^H` for every bin.
pub fn covariance_framewise(masked: &Spectrogram, kind: CovarianceKind) -> CovarianceField {
    let mut matrices = Vec::with_capacity(masked.frames() * masked.freqs());
    for t in 0..masked.frames() {
        for f in 0..masked.freqs() {
            let x = column(masked, t, f);
            matrices.push(&x * x.adjoint());
        }
    }
    CovarianceField {
        matrices,
        frames: Some(masked.frames()),
        freqs: masked.freqs(),
        kind,
    }
}
