//! Level alignment by multi-frame linear filtering in the STFT domain.
//!
//! For every frequency bin a causal `L`-tap complex filter `h(f)` is fitted
//! so that `h(f)^H [S2(t,f), .., S2(t-L+1,f)]` predicts the far-field STFT
//! `Y(t,f)` in the weighted least-squares sense, with per-unit weights
//! `1 / lambda(t,f)`. The filtered close-talk signal is the pseudo label.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{Spectrogram, Stft, StftConfig};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Spectrogram the weighting term is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// The far-field target `Y`.
    Target,
    /// The close-talk predictor `S2`.
    Predictor,
    /// Constant weights; `xi` is unused.
    Uniform,
}

impl std::str::FromStr for WeightSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(WeightSource::Target),
            "predictor" => Ok(WeightSource::Predictor),
            "uniform" => Ok(WeightSource::Uniform),
            other => Err(Error::InvalidParameter(format!(
                "unknown weight source `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MflfConfig {
    /// Filter length in frames; the current frame is tap 0.
    pub taps: usize,
    /// Floor of the weighting term, relative to its peak power.
    pub xi: f64,
    /// Diagonal loading relative to `trace(A) / taps`.
    pub diag_load: f64,
    /// Source of the per-unit weights. Weights taken from the noisy target
    /// correlate with its noise and bias the fitted gain low; weights from
    /// the predictor are unbiased but amplify noise in weak units.
    pub weight_source: WeightSource,
}

impl Default for MflfConfig {
    fn default() -> Self {
        Self {
            taps: 2,
            xi: 1e-4,
            diag_load: 1e-6,
            weight_source: WeightSource::Uniform,
        }
    }
}

impl MflfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(Error::InvalidParameter("taps must be at least 1".into()));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "xi must be positive, got {}",
                self.xi
            )));
        }
        if !(self.diag_load >= 0.0 && self.diag_load.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "diag_load must be nonnegative, got {}",
                self.diag_load
            )));
        }
        Ok(())
    }
}

/// `S2` with `taps` causally delayed copies per T-F unit, layout `[t][f][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFrames {
    data: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
    taps: usize,
    config: StftConfig,
}

impl StackedFrames {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    /// The tap vector of one T-F unit.
    #[inline]
    pub fn at(&self, t: usize, f: usize) -> &[Complex64] {
        let i = (t * self.n_bins + f) * self.taps;
        &self.data[i..i + self.taps]
    }
}

/// Tap `k` at frame `t` is `S2(t - k, f)`; frames before the start are zero.
pub fn stack_frames(s2: &Spectrogram, taps: usize) -> Result<StackedFrames> {
    if taps == 0 {
        return Err(Error::InvalidParameter("taps must be at least 1".into()));
    }
    let (n_frames, n_bins) = (s2.n_frames(), s2.n_bins());
    let mut data = vec![ZERO; n_frames * n_bins * taps];
    for t in 0..n_frames {
        for f in 0..n_bins {
            let base = (t * n_bins + f) * taps;
            for k in 0..taps.min(t + 1) {
                data[base + k] = s2.get(t - k, f);
            }
        }
    }
    Ok(StackedFrames {
        data,
        n_frames,
        n_bins,
        taps,
        config: *s2.config(),
    })
}

/// Per T-F unit weighting term, layout `[t][f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcpWeights {
    data: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
}

impl FcpWeights {
    /// All-ones weights, i.e. ordinary least squares.
    pub fn uniform(n_frames: usize, n_bins: usize) -> Self {
        Self {
            data: vec![1.0; n_frames * n_bins],
            n_frames,
            n_bins,
        }
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.n_bins + f]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }
}

/// `lambda(t,f) = xi * max |Y|^2 + |Y(t,f)|^2`.
pub fn fcp_weights(y: &Spectrogram, xi: f64) -> Result<FcpWeights> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "xi must be positive, got {xi}"
        )));
    }
    let peak = y
        .as_slice()
        .iter()
        .map(|c| c.norm_sqr())
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::ZeroEnergy("far-field spectrogram"));
    }
    let floor = xi * peak;
    Ok(FcpWeights {
        data: y.as_slice().iter().map(|c| floor + c.norm_sqr()).collect(),
        n_frames: y.n_frames(),
        n_bins: y.n_bins(),
    })
}

/// Per-bin filters `h(f)`, layout `[f][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSet {
    h: Vec<Complex64>,
    n_bins: usize,
    taps: usize,
    /// Bins whose normal equations were singular; their filter is zero.
    pub singular_bins: Vec<usize>,
}

impl FilterSet {
    pub fn zeros(n_bins: usize, taps: usize) -> Self {
        Self {
            h: vec![ZERO; n_bins * taps],
            n_bins,
            taps,
            singular_bins: Vec::new(),
        }
    }

    pub fn from_taps(n_bins: usize, taps: usize, h: Vec<Complex64>) -> Result<Self> {
        if h.len() != n_bins * taps {
            return Err(Error::ShapeMismatch(format!(
                "{} filter values for {n_bins} bins x {taps} taps",
                h.len()
            )));
        }
        Ok(Self {
            h,
            n_bins,
            taps,
            singular_bins: Vec::new(),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn bin(&self, f: usize) -> &[Complex64] {
        &self.h[f * self.taps..(f + 1) * self.taps]
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut [Complex64] {
        let taps = self.taps;
        &mut self.h[f * taps..(f + 1) * taps]
    }
}

/// Dense row-major Hermitian system for one bin.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
    pub dim: usize,
}

impl NormalEquations {
    pub fn residual_norm(&self, h: &[Complex64]) -> f64 {
        let n = self.dim;
        (0..n)
            .map(|i| {
                let ah: Complex64 = (0..n).map(|j| self.a[i * n + j] * h[j]).sum();
                (ah - self.b[i]).norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn rhs_norm(&self) -> f64 {
        self.b.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

fn check_shapes(stacked: &StackedFrames, y: &Spectrogram, weights: &FcpWeights) -> Result<()> {
    if stacked.n_frames != y.n_frames() || stacked.n_bins != y.n_bins() {
        return Err(Error::ShapeMismatch(format!(
            "stacked S2 is {}x{}, Y is {}x{}",
            stacked.n_frames,
            stacked.n_bins,
            y.n_frames(),
            y.n_bins()
        )));
    }
    if weights.shape() != (y.n_frames(), y.n_bins()) {
        return Err(Error::ShapeMismatch("weight grid does not match Y".into()));
    }
    Ok(())
}

/// `A = sum_t x x^H / lambda + load * I`, `b = sum_t x Y^* / lambda` for bin `f`,
/// with `load = diag_load * trace / taps`.
pub fn normal_equations(
    stacked: &StackedFrames,
    y: &Spectrogram,
    weights: &FcpWeights,
    f: usize,
    diag_load: f64,
) -> NormalEquations {
    let n = stacked.taps;
    let mut a = vec![ZERO; n * n];
    let mut b = vec![ZERO; n];
    for t in 0..stacked.n_frames {
        let x = stacked.at(t, f);
        let w = 1.0 / weights.get(t, f);
        let yc = y.get(t, f).conj();
        for i in 0..n {
            b[i] += x[i] * yc * w;
            for j in 0..n {
                a[i * n + j] += x[i] * x[j].conj() * w;
            }
        }
    }
    let trace: f64 = (0..n).map(|i| a[i * n + i].re).sum();
    let load = diag_load * trace / n as f64;
    for i in 0..n {
        a[i * n + i] += load;
    }
    NormalEquations { a, b, dim: n }
}

/// Cholesky solve of a Hermitian positive definite system with one step of
/// iterative refinement. `None` if the matrix is not numerically positive
/// definite.
fn solve_hermitian(sys: &NormalEquations) -> Option<Vec<Complex64>> {
    let n = sys.dim;
    let max_diag = (0..n).map(|i| sys.a[i * n + i].re).fold(0.0, f64::max);
    if !(max_diag > 0.0) {
        return None;
    }
    let tol = max_diag * n as f64 * f64::EPSILON;
    // lower-triangular factor, A = L L^H
    let mut l = vec![ZERO; n * n];
    for j in 0..n {
        let mut d = sys.a[j * n + j].re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if !(d > tol) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = sys.a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / d;
        }
    }
    let substitute = |rhs: &[Complex64]| {
        let mut z = rhs.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = l[i * n + k] * z[k];
                z[i] -= v;
            }
            z[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let v = l[k * n + i].conj() * z[k];
                z[i] -= v;
            }
            z[i] /= l[i * n + i];
        }
        z
    };
    let mut h = substitute(&sys.b);
    let r: Vec<Complex64> = (0..n)
        .map(|i| sys.b[i] - (0..n).map(|j| sys.a[i * n + j] * h[j]).sum::<Complex64>())
        .collect();
    for (hi, di) in h.iter_mut().zip(substitute(&r)) {
        *hi += di;
    }
    h.iter()
        .all(|c| c.re.is_finite() && c.im.is_finite())
        .then_some(h)
}

/// Solves the weighted least-squares filter for every bin.
pub fn solve_mflf(
    stacked: &StackedFrames,
    y: &Spectrogram,
    weights: &FcpWeights,
    diag_load: f64,
) -> Result<FilterSet> {
    check_shapes(stacked, y, weights)?;
    if weights.as_slice().iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter(
            "weights must be strictly positive".into(),
        ));
    }
    let solved: Vec<Option<Vec<Complex64>>> = (0..stacked.n_bins)
        .into_par_iter()
        .map(|f| solve_hermitian(&normal_equations(stacked, y, weights, f, diag_load)))
        .collect();

    let mut filters = FilterSet::zeros(stacked.n_bins, stacked.taps);
    for (f, h) in solved.into_iter().enumerate() {
        match h {
            Some(h) => filters.bin_mut(f).copy_from_slice(&h),
            None => filters.singular_bins.push(f),
        }
    }
    if !filters.singular_bins.is_empty() {
        log::debug!("{} singular bins zeroed", filters.singular_bins.len());
    }
    Ok(filters)
}

/// `out(t,f) = sum_k conj(h(f,k)) * S2(t-k,f)`.
pub fn apply_mflf(filters: &FilterSet, stacked: &StackedFrames) -> Result<Spectrogram> {
    if filters.taps != stacked.taps || filters.n_bins != stacked.n_bins {
        return Err(Error::ShapeMismatch(format!(
            "filters are {}x{}, stacked frames are {}x{}",
            filters.n_bins, filters.taps, stacked.n_bins, stacked.taps
        )));
    }
    let mut out = Spectrogram::zeros(stacked.config, stacked.n_frames);
    for t in 0..stacked.n_frames {
        for f in 0..stacked.n_bins {
            let v = filters
                .bin(f)
                .iter()
                .zip(stacked.at(t, f))
                .map(|(h, x)| h.conj() * x)
                .sum();
            out.set(t, f, v);
        }
    }
    Ok(out)
}

/// Weighted prediction error of filter `h` on bin `f`.
pub fn bin_objective(
    h: &[Complex64],
    stacked: &StackedFrames,
    y: &Spectrogram,
    weights: &FcpWeights,
    f: usize,
) -> f64 {
    (0..stacked.n_frames)
        .map(|t| {
            let pred: Complex64 = h
                .iter()
                .zip(stacked.at(t, f))
                .map(|(h, x)| h.conj() * x)
                .sum();
            (y.get(t, f) - pred).norm_sqr() / weights.get(t, f)
        })
        .sum()
}

/// Result of [`level_align_with`].
#[derive(Debug, Clone)]
pub struct LevelAligned {
    pub pseudo_label: Vec<f64>,
    pub filters: FilterSet,
}

/// Full waveform-to-waveform level alignment with a prepared STFT plan.
pub fn level_align_with(
    stft: &Stft,
    s2: &[f64],
    y: &[f64],
    sample_rate: u32,
    mflf: &MflfConfig,
) -> Result<LevelAligned> {
    mflf.validate()?;
    if s2.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: s2.len(),
            right: y.len(),
        });
    }
    let spec_y = stft.forward(y, sample_rate)?;
    let spec_s2 = stft.forward(s2, sample_rate)?;
    let weights = match mflf.weight_source {
        WeightSource::Target => fcp_weights(&spec_y, mflf.xi)?,
        WeightSource::Predictor => fcp_weights(&spec_s2, mflf.xi)?,
        WeightSource::Uniform => FcpWeights::uniform(spec_y.n_frames(), spec_y.n_bins()),
    };
    let stacked = stack_frames(&spec_s2, mflf.taps)?;
    let filters = solve_mflf(&stacked, &spec_y, &weights, mflf.diag_load)?;
    let out = apply_mflf(&filters, &stacked)?;
    Ok(LevelAligned {
        pseudo_label: stft.inverse(&out, y.len())?,
        filters,
    })
}

/// Pseudo label `s3` for an aligned close-talk signal `s2` and far-field
/// reference `y` of equal length.
pub fn level_align(
    s2: &[f64],
    y: &[f64],
    sample_rate: u32,
    stft_cfg: &StftConfig,
    mflf: &MflfConfig,
) -> Result<Vec<f64>> {
    let stft = Stft::new(*stft_cfg)?;
    Ok(level_align_with(&stft, s2, y, sample_rate, mflf)?.pseudo_label)
}
