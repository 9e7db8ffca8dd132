//! Segment SNR estimated from the pseudo label, and the keep/discard rule.

use crate::error::{Error, Result};
use crate::manifest::{PseudoLabelRecord, Status};

/// Pairs estimated below this are discarded.
pub const DEFAULT_SNR_THRESHOLD_DB: f64 = -10.0;

/// `10 log10(|s3|^2 / |s3 - y|^2)` over the whole segment.
///
/// A zero residual gives `+inf`; a zero pseudo label gives `-inf`.
pub fn estimate_snr(s3: &[f64], y: &[f64]) -> Result<f64> {
    if s3.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: s3.len(),
            right: y.len(),
        });
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroEnergy("far-field reference"));
    }
    let signal: f64 = s3.iter().map(|v| v * v).sum();
    let residual: f64 = s3.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if residual == 0.0 {
        f64::INFINITY
    } else if signal == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (signal / residual).log10()
    })
}

/// Inclusive threshold: exactly `threshold_db` is kept.
pub fn passes(snr_db: f64, threshold_db: f64) -> bool {
    snr_db >= threshold_db
}

/// Splits records into (kept, discarded) by their `snr_db`, preserving
/// order. Records without an SNR (failed segments) land in `discarded`.
/// `kept` and `status` are rewritten to match the partition.
pub fn filter_pairs(
    records: Vec<PseudoLabelRecord>,
    threshold_db: f64,
) -> (Vec<PseudoLabelRecord>, Vec<PseudoLabelRecord>) {
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for mut rec in records {
        match rec.snr_db {
            Some(snr) if passes(snr.0, threshold_db) => {
                rec.kept = true;
                rec.status = Status::Kept;
                kept.push(rec);
            }
            Some(_) => {
                rec.kept = false;
                rec.status = Status::Discarded;
                discarded.push(rec);
            }
            None => {
                rec.kept = false;
                discarded.push(rec);
            }
        }
    }
    (kept, discarded)
}
