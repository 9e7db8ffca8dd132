//! Time alignment by GCC-PHAT.
//!
//! Sign convention: if `y(t) = a * s1(t - d)` the estimated offset is `-d`,
//! and `apply_shift(s1, offset, ..)` produces `s1(t + offset) = s1(t - d)`,
//! i.e. a close-talk signal aligned with `y`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GccPhatOptions {
    /// Search range in samples, symmetric around zero lag.
    pub max_lag: usize,
    /// Floor of the PHAT denominator, relative to the largest cross-spectral
    /// magnitude.
    pub eps: f64,
    /// Also report a parabolic sub-sample refinement of the peak.
    pub interpolate: bool,
}

impl Default for GccPhatOptions {
    fn default() -> Self {
        Self {
            max_lag: 8000,
            eps: 1e-12,
            interpolate: false,
        }
    }
}

impl GccPhatOptions {
    pub fn with_max_lag(max_lag: usize) -> Self {
        Self {
            max_lag,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub offset_samples: i64,
    /// Height of the PHAT correlation peak.
    pub peak_value: f64,
    /// Peak height over the next highest local maximum in the search range.
    pub peak_ratio: f64,
    /// Sub-sample offset, diagnostics only.
    pub refined_offset: Option<f64>,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// PHAT-weighted cross-correlation of `s1` against `y`.
///
/// Returns the correlation indexed by lag together with the smallest lag;
/// `corr[i]` holds lag `min_lag + i`.
pub fn phat_correlation(
    s1: &[f64],
    y: &[f64],
    max_lag: usize,
    eps: f64,
) -> Result<(Vec<f64>, i64)> {
    if s1.is_empty() || energy(s1) == 0.0 {
        return Err(Error::ZeroEnergy("close-talk signal"));
    }
    if y.is_empty() || energy(y) == 0.0 {
        return Err(Error::ZeroEnergy("far-field signal"));
    }
    let n = (s1.len() + y.len() - 1).next_power_of_two();
    if max_lag >= n {
        return Err(Error::InvalidParameter(format!(
            "max_lag {max_lag} must be below the padded correlation length {n}"
        )));
    }

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let to_buf = |x: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (slot, &v) in b.iter_mut().zip(x) {
            slot.re = v;
        }
        b
    };
    let mut a = to_buf(s1);
    let mut b = to_buf(y);
    fft.process(&mut a);
    fft.process(&mut b);

    let mut cross: Vec<Complex64> = a.iter().zip(&b).map(|(p, q)| p * q.conj()).collect();
    let max_mag = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = eps * max_mag;
    for c in cross.iter_mut() {
        let m = c.norm().max(floor);
        if m > 0.0 {
            *c /= m;
        }
    }
    ifft.process(&mut cross);

    // correlation at lag tau sums s1(t + tau) * y(t)
    let lo = max_lag.min(y.len() - 1) as i64;
    let hi = max_lag.min(s1.len() - 1) as i64;
    let scale = 1.0 / n as f64;
    let corr = (-lo..=hi)
        .map(|tau| {
            let idx = if tau >= 0 {
                tau as usize
            } else {
                n - (-tau) as usize
            };
            cross[idx].re * scale
        })
        .collect();
    Ok((corr, -lo))
}

pub fn gcc_phat(s1: &[f64], y: &[f64], opts: &GccPhatOptions) -> Result<AlignmentResult> {
    let (corr, min_lag) = phat_correlation(s1, y, opts.max_lag, opts.eps)?;

    let mut best = 0;
    for (i, &v) in corr.iter().enumerate() {
        if v > corr[best] {
            best = i;
        }
    }
    let peak = corr[best];

    let is_local_max = |i: usize| {
        let left = if i > 0 {
            corr[i - 1]
        } else {
            f64::NEG_INFINITY
        };
        let right = corr.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        corr[i] >= left && corr[i] >= right
    };
    let second = (0..corr.len())
        .filter(|&i| i != best && is_local_max(i))
        .map(|i| corr[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let peak_ratio = if second > 0.0 {
        (peak / second).max(1.0)
    } else {
        f64::INFINITY
    };

    let refined_offset = if opts.interpolate && best > 0 && best + 1 < corr.len() {
        let (l, c, r) = (corr[best - 1], corr[best], corr[best + 1]);
        let denom = l - 2.0 * c + r;
        let delta = if denom.abs() > f64::EPSILON {
            0.5 * (l - r) / denom
        } else {
            0.0
        };
        Some(min_lag as f64 + best as f64 + delta)
    } else {
        None
    };

    Ok(AlignmentResult {
        offset_samples: min_lag + best as i64,
        peak_value: peak,
        peak_ratio,
        refined_offset,
    })
}

/// `s2(t) = s1(t + offset)` for `t` in `0..target_len`, zero outside `s1`.
pub fn apply_shift(s1: &[f64], offset: i64, target_len: usize) -> Vec<f64> {
    (0..target_len as i64)
        .map(|t| {
            let src = t + offset;
            if src >= 0 && (src as usize) < s1.len() {
                s1[src as usize]
            } else {
                0.0
            }
        })
        .collect()
}
