//! Training-side math on magnitude spectrograms: the MSE + cosine-similarity
//! ("MCA") loss and its gradient, ideal amplitude mask targets, and input
//! feature stacking.

use serde::Serialize;

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Lower bound on `|A| |B|` in the cosine term.
pub const COSSIM_EPS: f64 = 1e-24;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_IAM_CLIP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McaReport {
    pub mse: f64,
    pub cossim_loss: f64,
    pub mca: f64,
    pub alpha: f64,
}

fn check_pair(a: &MagnitudeSpectrogram, b: &MagnitudeSpectrogram) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let zero = |m: &MagnitudeSpectrogram| m.as_slice().iter().all(|&v| v == 0.0);
    if zero(a) && zero(b) {
        return Err(Error::ZeroEnergy("both magnitude spectrograms"));
    }
    Ok(())
}

struct Moments {
    dot: f64,
    norm_a: f64,
    norm_b: f64,
}

fn moments(a: &[f64], b: &[f64]) -> Moments {
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    Moments {
        dot,
        norm_a: aa.sqrt(),
        norm_b: bb.sqrt(),
    }
}

/// Loss of prediction `b` against oracle `a`.
pub fn mca_loss(
    a: &MagnitudeSpectrogram,
    b: &MagnitudeSpectrogram,
    alpha: f64,
) -> Result<McaReport> {
    check_pair(a, b)?;
    let (xa, xb) = (a.as_slice(), b.as_slice());
    let n = xa.len() as f64;
    let mse = xa
        .iter()
        .zip(xb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    let m = moments(xa, xb);
    let cos = (m.dot / (m.norm_a * m.norm_b).max(COSSIM_EPS)).clamp(-1.0, 1.0);
    let cossim_loss = 1.0 - cos;
    Ok(McaReport {
        mse,
        cossim_loss,
        mca: mse + alpha * cossim_loss,
        alpha,
    })
}

/// Gradient of [`mca_loss`] with respect to the prediction `b`, shaped like `b`.
///
/// The cosine term contributes nothing when either grid is all zero, where
/// the loss is constant (oracle silent) or not differentiable (prediction
/// silent).
pub fn mca_grad(a: &MagnitudeSpectrogram, b: &MagnitudeSpectrogram, alpha: f64) -> Result<Grid> {
    check_pair(a, b)?;
    let (xa, xb) = (a.as_slice(), b.as_slice());
    let n = xa.len() as f64;
    let m = moments(xa, xb);
    let (ca, cb) = if m.norm_a > 0.0 && m.norm_b > 0.0 {
        let ab = m.norm_a * m.norm_b;
        (-1.0 / ab, m.dot / (ab * m.norm_b * m.norm_b))
    } else {
        (0.0, 0.0)
    };
    let grad = xa
        .iter()
        .zip(xb)
        .map(|(&x, &y)| 2.0 * (y - x) / n + alpha * (ca * x + cb * y))
        .collect();
    Grid::new(vec![b.n_frames(), b.n_bins()], grad)
}

/// `min(|S| / max(|Y|, eps), clip_max)` with `eps = 1e-12 * max |Y|`.
pub fn iam_target(
    mag_s: &MagnitudeSpectrogram,
    mag_y: &MagnitudeSpectrogram,
    clip_max: f64,
) -> Result<Grid> {
    if mag_s.shape() != mag_y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            mag_s.shape(),
            mag_y.shape()
        )));
    }
    if !(clip_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "clip_max must be positive, got {clip_max}"
        )));
    }
    let peak = mag_y.as_slice().iter().cloned().fold(0.0, f64::max);
    let eps = (1e-12 * peak).max(f64::MIN_POSITIVE);
    let mask = mag_s
        .as_slice()
        .iter()
        .zip(mag_y.as_slice())
        .map(|(&s, &y)| (s / y.max(eps)).min(clip_max))
        .collect();
    Grid::new(vec![mag_s.n_frames(), mag_s.n_bins()], mask)
}

/// `[channel][t][f]` model input: the GSS magnitude first, then each array
/// channel in the given order.
pub fn stack_features(
    gss_mag: &MagnitudeSpectrogram,
    array_mags: &[MagnitudeSpectrogram],
) -> Result<Grid> {
    if let Some((i, m)) = array_mags
        .iter()
        .enumerate()
        .find(|(_, m)| m.shape() != gss_mag.shape())
    {
        return Err(Error::ShapeMismatch(format!(
            "array channel {i} is {:?}, GSS is {:?}",
            m.shape(),
            gss_mag.shape()
        )));
    }
    let mut data = Vec::with_capacity(gss_mag.as_slice().len() * (1 + array_mags.len()));
    data.extend_from_slice(gss_mag.as_slice());
    for m in array_mags {
        data.extend_from_slice(m.as_slice());
    }
    Grid::new(
        vec![1 + array_mags.len(), gss_mag.n_frames(), gss_mag.n_bins()],
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: usize, f: usize, v: &[f64]) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram::new(t, f, v.to_vec(), None).unwrap()
    }

    #[test]
    fn identical_grids_have_zero_loss() {
        let a = grid(2, 2, &[0.3, 1.2, 0.0, 4.0]);
        let r = mca_loss(&a, &a, 0.7).unwrap();
        assert_eq!(r.mse, 0.0);
        assert!(r.cossim_loss.abs() < 1e-15);
        assert!(r.mca.abs() < 1e-15);
    }

    #[test]
    fn parallel_grids() {
        let a = grid(2, 2, &[1.0; 4]);
        let b = grid(2, 2, &[2.0; 4]);
        let r = mca_loss(&a, &b, 3.0).unwrap();
        assert_eq!(r.mse, 1.0);
        assert!(r.cossim_loss.abs() < 1e-15);
        assert!((r.mca - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_support() {
        let a = grid(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = grid(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let r = mca_loss(&a, &b, 0.5).unwrap();
        assert_eq!(r.mse, 0.5);
        assert_eq!(r.cossim_loss, 1.0);
        assert_eq!(r.mca, 1.0);
    }

    #[test]
    fn loss_errors() {
        let a = grid(2, 2, &[1.0; 4]);
        let b = grid(1, 4, &[1.0; 4]);
        assert!(matches!(
            mca_loss(&a, &b, 1.0),
            Err(Error::ShapeMismatch(_))
        ));
        let z = grid(2, 2, &[0.0; 4]);
        assert!(matches!(mca_loss(&z, &z, 1.0), Err(Error::ZeroEnergy(_))));
        assert!(mca_grad(&z, &z, 1.0).is_err());
        // one silent side is still defined
        assert_eq!(mca_loss(&a, &z, 1.0).unwrap().cossim_loss, 1.0);
    }

    #[test]
    fn equal_grids_leave_only_cosine_gradient() {
        let a = grid(2, 2, &[0.5, 1.0, 2.0, 0.1]);
        let g = mca_grad(&a, &a, 2.0).unwrap();
        let only_cos = mca_grad(&a, &a, 0.0).unwrap();
        assert!(only_cos.as_slice().iter().all(|&v| v == 0.0));
        // at B = A the cosine gradient itself vanishes
        assert!(g.as_slice().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn iam_cases() {
        let y = grid(1, 3, &[1.0, 2.0, 0.5]);
        let ones = iam_target(&y, &y, 2.0).unwrap();
        assert!(ones.as_slice().iter().all(|&v| v == 1.0));
        let zeros = iam_target(&grid(1, 3, &[0.0; 3]), &y, 2.0).unwrap();
        assert!(zeros.as_slice().iter().all(|&v| v == 0.0));
        let s = grid(1, 3, &[3.0, 6.0, 1.5]);
        let clipped = iam_target(&s, &y, 2.0).unwrap();
        assert!(clipped.as_slice().iter().all(|&v| v == 2.0));
        assert!(iam_target(&s, &grid(3, 1, &[1.0; 3]), 2.0).is_err());
        assert!(iam_target(&s, &y, 0.0).is_err());
    }

    #[test]
    fn features_single_channel_without_array() {
        let g = grid(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = stack_features(&g, &[]).unwrap();
        assert_eq!(f.dims(), &[1, 2, 3]);
        assert_eq!(f.as_slice(), g.as_slice());
    }

    #[test]
    fn features_reject_mismatched_channel() {
        let g = grid(2, 3, &[1.0; 6]);
        let bad = grid(3, 2, &[1.0; 6]);
        assert!(stack_features(&g, &[g.clone(), bad]).is_err());
    }
}
