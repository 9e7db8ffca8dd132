//! Deterministic inputs shared by the stage benchmarks.

use tlsprep_core::synth::speech_like;
use tlsprep_core::{apply_shift, gen_noise, NoiseKind};

pub const SAMPLE_RATE: u32 = 16_000;

/// A far-field segment and its delayed, attenuated close-talk source.
pub struct Segment {
    pub close_talk: Vec<f64>,
    pub farfield: Vec<f64>,
    pub delay: i64,
}

/// `seconds` of speech-like audio with the far field delayed by `delay`
/// samples, scaled by 0.5 and mixed with white noise at 10 dB.
pub fn segment(seconds: f64, delay: i64, seed: u64) -> Segment {
    let len = (seconds * SAMPLE_RATE as f64).round() as usize;
    let close_talk = speech_like(len, SAMPLE_RATE, seed);
    let direct: Vec<f64> = apply_shift(&close_talk, -delay, len)
        .iter()
        .map(|v| 0.5 * v)
        .collect();
    let noise = gen_noise(NoiseKind::White, len, seed + 1);
    let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let scale = (energy(&direct) / energy(&noise) / 10.0).sqrt();
    let farfield = direct
        .iter()
        .zip(&noise)
        .map(|(d, n)| d + scale * n)
        .collect();
    Segment {
        close_talk,
        farfield,
        delay,
    }
}
