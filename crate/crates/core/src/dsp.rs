//! Windowing, STFT/ISTFT and magnitude extraction.
//!
//! Everything runs in `f64`. Frames are center-padded by `n_fft / 2` on both
//! sides, so frame `t` is centred on signal sample `t * hop`. Synthesis uses
//! weighted overlap-add normalised by the per-sample window envelope, which
//! makes `istft(stft(x)) == x` up to rounding for any COLA window/hop pair.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum tolerated relative ripple of the overlapped window product.
pub const COLA_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann for both analysis and synthesis.
    Hann,
    /// Square root of periodic Hann for both analysis and synthesis.
    SqrtHann,
}

impl WindowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowKind::Hann => "hann",
            WindowKind::SqrtHann => "sqrt_hann",
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(WindowKind::Hann),
            "sqrt_hann" | "sqrt-hann" => Ok(WindowKind::SqrtHann),
            other => Err(Error::InvalidStftConfig(format!(
                "unsupported window kind `{other}`"
            ))),
        }
    }
}

/// Periodic window of length `n_fft`.
pub fn make_window(kind: WindowKind, n_fft: usize) -> Result<Vec<f64>> {
    if n_fft < 2 {
        return Err(Error::InvalidStftConfig(format!(
            "window length {n_fft} is too short"
        )));
    }
    let hann = (0..n_fft).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / n_fft as f64).cos());
    Ok(match kind {
        WindowKind::Hann => hann.collect(),
        // cos() can undershoot zero by an ulp at n = 0
        WindowKind::SqrtHann => hann.map(|w| w.max(0.0).sqrt()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    /// 32 ms frames with 50% overlap at 16 kHz.
    fn default() -> Self {
        Self {
            n_fft: 512,
            hop: 256,
            window: WindowKind::SqrtHann,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize, window: WindowKind, sample_rate: u32) -> Result<Self> {
        let cfg = Self {
            n_fft,
            hop,
            window,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidStftConfig(msg));
        if self.n_fft < 16 || !self.n_fft.is_power_of_two() {
            return bad(format!("n_fft {} must be a power of two >= 16", self.n_fft));
        }
        if self.hop == 0 || self.hop > self.n_fft || !self.n_fft.is_multiple_of(self.hop) {
            return bad(format!("hop {} must divide n_fft {}", self.hop, self.n_fft));
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        let ripple = self.cola_ripple()?;
        if ripple > COLA_TOLERANCE {
            return bad(format!(
                "{} window with n_fft {} and hop {} violates constant overlap-add (ripple {ripple:.3e})",
                self.window, self.n_fft, self.hop
            ));
        }
        Ok(())
    }

    /// Relative ripple `(max - min) / mean` of the overlapped
    /// analysis*synthesis window product.
    pub fn cola_ripple(&self) -> Result<f64> {
        let w = make_window(self.window, self.n_fft)?;
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| (n..self.n_fft).step_by(self.hop).map(|i| w[i] * w[i]).sum())
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        Ok((max - min) / mean)
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + 1
    }
}

/// Complex onesided spectrogram, row-major `[frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
    config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(config: StftConfig, n_frames: usize) -> Self {
        let n_bins = config.n_bins();
        Self {
            data: vec![Complex64::new(0.0, 0.0); n_frames * n_bins],
            n_frames,
            n_bins,
            config,
        }
    }

    pub fn from_data(config: StftConfig, n_frames: usize, data: Vec<Complex64>) -> Result<Self> {
        let n_bins = config.n_bins();
        if data.len() != n_frames * n_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n_frames} frames x {n_bins} bins",
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidParameter(
                "spectrogram contains non-finite values".into(),
            ));
        }
        Ok(Self {
            data,
            n_frames,
            n_bins,
            config,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.n_bins + f]
    }

    #[inline]
    pub fn set(&mut self, t: usize, f: usize, value: Complex64) {
        self.data[t * self.n_bins + f] = value;
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.n_frames == other.n_frames && self.n_bins == other.n_bins
    }
}

/// Nonnegative real grid `[frame][bin]`.
///
/// `config` is `None` for grids loaded from dumps that carry no STFT metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    data: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
    config: Option<StftConfig>,
}

impl MagnitudeSpectrogram {
    pub fn new(
        n_frames: usize,
        n_bins: usize,
        data: Vec<f64>,
        config: Option<StftConfig>,
    ) -> Result<Self> {
        if data.len() != n_frames * n_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n_frames} frames x {n_bins} bins",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "magnitude entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self {
            data,
            n_frames,
            n_bins,
            config,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    pub fn config(&self) -> Option<&StftConfig> {
        self.config.as_ref()
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.n_bins + f]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Elementwise complex modulus.
pub fn magnitude(spec: &Spectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        data: spec.data.iter().map(|c| c.norm()).collect(),
        n_frames: spec.n_frames,
        n_bins: spec.n_bins,
        config: Some(spec.config),
    }
}

/// Planned analysis/synthesis pair for one [`StftConfig`].
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft")
            .field("config", &self.config)
            .finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: make_window(config.window, config.n_fft)?,
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn forward(&self, signal: &[f64], sample_rate: u32) -> Result<Spectrogram> {
        let cfg = &self.config;
        if signal.is_empty() {
            return Err(Error::SignalTooShort {
                min: cfg.n_fft,
                actual: 0,
            });
        }
        if sample_rate != cfg.sample_rate {
            return Err(Error::RateMismatch {
                expected: cfg.sample_rate,
                actual: sample_rate,
            });
        }
        if signal.len() < cfg.n_fft {
            return Err(Error::SignalTooShort {
                min: cfg.n_fft,
                actual: signal.len(),
            });
        }

        let n = cfg.n_fft;
        let pad = n / 2;
        let n_frames = cfg.n_frames(signal.len());
        let mut spec = Spectrogram::zeros(*cfg, n_frames);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];

        for t in 0..n_frames {
            let start = (t * cfg.hop) as isize - pad as isize;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let x = if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(x * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            spec.frame_mut(t).copy_from_slice(&buf[..cfg.n_bins()]);
        }
        Ok(spec)
    }

    pub fn inverse(&self, spec: &Spectrogram, target_len: usize) -> Result<Vec<f64>> {
        if target_len == 0 {
            return Err(Error::InvalidTargetLength(target_len));
        }
        let cfg = &self.config;
        if spec.n_bins() != cfg.n_bins() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram has {} bins, config expects {}",
                spec.n_bins(),
                cfg.n_bins()
            )));
        }
        let n = cfg.n_fft;
        let pad = n / 2;
        let n_frames = spec.n_frames();
        let total = if n_frames == 0 {
            0
        } else {
            (n_frames - 1) * cfg.hop + n
        };
        let mut out = vec![0.0; total];
        let mut envelope = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;

        for t in 0..n_frames {
            let frame = spec.frame(t);
            buf[..frame.len()].copy_from_slice(frame);
            // DC and Nyquist of a real signal are real
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            for k in 1..n / 2 {
                buf[n - k] = frame[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let offset = t * cfg.hop;
            for i in 0..n {
                let w = self.window[i];
                out[offset + i] += buf[i].re * scale * w;
                envelope[offset + i] += w * w;
            }
        }

        let floor = envelope.iter().cloned().fold(0.0, f64::max) * 1e-10;
        let mut signal = vec![0.0; target_len];
        for (i, s) in signal.iter_mut().enumerate() {
            let j = i + pad;
            if j < total && envelope[j] > floor {
                *s = out[j] / envelope[j];
            }
        }
        Ok(signal)
    }
}

pub fn stft(signal: &[f64], sample_rate: u32, config: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*config)?.forward(signal, sample_rate)
}

pub fn istft(spec: &Spectrogram, target_len: usize) -> Result<Vec<f64>> {
    Stft::new(*spec.config())?.inverse(spec, target_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hann_closed_form() {
        let w = make_window(WindowKind::Hann, 4).unwrap();
        let expected = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = make_window(WindowKind::SqrtHann, 4).unwrap();
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn window_peaks_at_center() {
        for kind in [WindowKind::Hann, WindowKind::SqrtHann] {
            let w = make_window(kind, 8).unwrap();
            assert_eq!(w[0], 0.0);
            let argmax = (0..8).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
            assert_eq!(argmax, 4);
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn unknown_window_kind_rejected() {
        assert!("blackman".parse::<WindowKind>().is_err());
        assert_eq!(
            "sqrt_hann".parse::<WindowKind>().unwrap(),
            WindowKind::SqrtHann
        );
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::default().validate().is_ok());
        assert!(StftConfig::new(500, 250, WindowKind::SqrtHann, 16000).is_err());
        assert!(StftConfig::new(512, 384, WindowKind::SqrtHann, 16000).is_err());
        assert!(StftConfig::new(8, 4, WindowKind::SqrtHann, 16000).is_err());
        // Hann*Hann is not COLA at 50% overlap, only at 75%
        assert!(StftConfig::new(512, 256, WindowKind::Hann, 16000).is_err());
        assert!(StftConfig::new(512, 128, WindowKind::Hann, 16000).is_ok());
        assert!(StftConfig::new(512, 128, WindowKind::SqrtHann, 16000).is_ok());
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let cfg = StftConfig::default();
        let spec = stft(&vec![0.0; 4000], 16000, &cfg).unwrap();
        assert!(spec.as_slice().iter().all(|c| c.norm() == 0.0));
        let y = istft(&Spectrogram::zeros(cfg, 10), 2000).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_at_frame_center() {
        let cfg = StftConfig::default();
        let mut x = vec![0.0; 4096];
        let t = 4;
        x[t * cfg.hop] = 1.0;
        let spec = stft(&x, 16000, &cfg).unwrap();
        let w = make_window(cfg.window, cfg.n_fft).unwrap();
        for f in 0..spec.n_bins() {
            assert!((spec.get(t, f).norm() - w[cfg.n_fft / 2]).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_lands_on_expected_bin() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..16000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let mag = magnitude(&stft(&x, 16000, &cfg).unwrap());
        // skip the half-empty edge frames
        for t in 2..mag.n_frames() - 2 {
            let argmax = (0..mag.n_bins())
                .max_by(|&a, &b| mag.get(t, a).total_cmp(&mag.get(t, b)))
                .unwrap();
            assert_eq!(argmax, 32);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = StftConfig::default();
        assert!(matches!(
            stft(&[], 16000, &cfg),
            Err(Error::SignalTooShort { .. })
        ));
        assert!(matches!(
            stft(&[0.0; 1000], 8000, &cfg),
            Err(Error::RateMismatch { .. })
        ));
        assert!(matches!(
            istft(&Spectrogram::zeros(cfg, 4), 0),
            Err(Error::InvalidTargetLength(0))
        ));
    }

    #[test]
    fn round_trip_white_noise() {
        let cfg = StftConfig::default();
        let x = noise(16000, 7);
        let y = istft(&stft(&x, 16000, &cfg).unwrap(), x.len()).unwrap();
        let err: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-9);
    }

    #[test]
    fn magnitude_is_modulus() {
        let cfg = StftConfig::new(16, 8, WindowKind::SqrtHann, 16000).unwrap();
        let mut spec = Spectrogram::zeros(cfg, 2);
        spec.set(0, 0, Complex64::new(3.0, 4.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in 0..spec.n_bins() {
            spec.set(
                1,
                f,
                Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            );
        }
        let mag = magnitude(&spec);
        assert_eq!(mag.get(0, 0), 5.0);
        assert_eq!(mag.get(0, 1), 0.0);
        for f in 0..spec.n_bins() {
            let c = spec.get(1, f);
            assert!((mag.get(1, f) - (c.re * c.re + c.im * c.im).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::default();
        let x = noise(8192, 11);
        let spec = stft(&x, 16000, &cfg).unwrap();
        let w = make_window(cfg.window, cfg.n_fft).unwrap();
        let n = cfg.n_fft;
        let mut spec_energy = 0.0;
        let mut time_energy = 0.0;
        for t in 0..spec.n_frames() {
            for f in 0..spec.n_bins() {
                let weight = if f == 0 || f == n / 2 { 1.0 } else { 2.0 };
                spec_energy += weight * spec.get(t, f).norm_sqr();
            }
            let start = (t * cfg.hop) as isize - (n / 2) as isize;
            for i in 0..n {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < x.len() {
                    time_energy += (x[idx as usize] * w[i]).powi(2);
                }
            }
        }
        assert!((spec_energy / n as f64 - time_energy).abs() / time_energy < 1e-6);
    }
}
