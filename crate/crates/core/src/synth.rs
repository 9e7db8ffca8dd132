//! Synthetic close-talk / far-field pairs with known ground truth.
//!
//! The far-field model is `y = (gain * clean(t - delay)) * rir + noise`,
//! where the first RIR tap is the direct path. The direct sound (what a
//! perfect pseudo label would be) is the same signal filtered by the direct
//! tap alone.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioClip, WavEncoding};
use crate::error::{Error, Result};
use crate::manifest::{write_segments, SegmentRecord};

/// Direct-to-reverberant energy ratio of tails from [`gen_rir`].
pub const DEFAULT_RIR_DRR_DB: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            other => Err(Error::InvalidParameter(format!(
                "unknown noise kind `{other}`"
            ))),
        }
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn normalize_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (energy(&x) / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Unit-RMS noise. Pink noise is white noise with its spectrum shaped by
/// `1/sqrt(f)` (DC removed).
pub fn gen_noise(kind: NoiseKind, len: usize, seed: u64) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    match kind {
        NoiseKind::White => normalize_rms(white),
        NoiseKind::Pink => {
            let mut planner = FftPlanner::new();
            let mut buf: Vec<Complex64> = white.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            planner.plan_fft_forward(len).process(&mut buf);
            buf[0] = Complex64::new(0.0, 0.0);
            for k in 1..len {
                // frequency index folded onto 0..=len/2 keeps the spectrum Hermitian
                let freq = k.min(len - k) as f64;
                buf[k] /= freq.sqrt();
            }
            planner.plan_fft_inverse(len).process(&mut buf);
            normalize_rms(buf.iter().map(|c| c.re).collect())
        }
    }
}

/// Tail envelope `level * exp(-(n / rate) / decay)` at tap `n`.
pub fn rir_envelope(n: usize, decay_ms: f64, sample_rate: u32, level: f64) -> f64 {
    level * (-(n as f64 / sample_rate as f64) / (decay_ms * 1e-3)).exp()
}

/// Exponentially decaying Gaussian tail behind a unit direct tap.
///
/// The tail level is set so the expected tail energy sits `drr_db` below the
/// direct tap.
pub fn gen_rir_with_drr(
    decay_ms: f64,
    len_taps: usize,
    seed: u64,
    sample_rate: u32,
    drr_db: f64,
) -> Result<Vec<f64>> {
    if len_taps == 0 {
        return Err(Error::InvalidParameter(
            "an RIR needs at least one tap".into(),
        ));
    }
    if len_taps == 1 {
        return Ok(vec![1.0]);
    }
    if !(decay_ms > 0.0 && decay_ms.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "decay must be positive, got {decay_ms} ms"
        )));
    }
    let shape_energy: f64 = (1..len_taps)
        .map(|n| rir_envelope(n, decay_ms, sample_rate, 1.0).powi(2))
        .sum();
    let level = (10f64.powf(-drr_db / 10.0) / shape_energy).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rir = Vec::with_capacity(len_taps);
    rir.push(1.0);
    for n in 1..len_taps {
        let g: f64 = StandardNormal.sample(&mut rng);
        rir.push(g * rir_envelope(n, decay_ms, sample_rate, level));
    }
    Ok(rir)
}

pub fn gen_rir(decay_ms: f64, len_taps: usize, seed: u64, sample_rate: u32) -> Result<Vec<f64>> {
    gen_rir_with_drr(decay_ms, len_taps, seed, sample_rate, DEFAULT_RIR_DRR_DB)
}

/// Linear convolution truncated to `out_len` samples.
pub fn convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    if h.len() <= 64 {
        let mut out = vec![0.0; out_len];
        for (i, o) in out.iter_mut().enumerate() {
            let lo = (i + 1).saturating_sub(x.len());
            for (k, hk) in h.iter().enumerate().take(i + 1).skip(lo) {
                *o += hk * x[i - k];
            }
        }
        return out;
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let pad = |v: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (s, &x) in b.iter_mut().zip(v) {
            s.re = x;
        }
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fft.process(&mut a);
    fft.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    planner.plan_fft_inverse(n).process(&mut a);
    let mut out: Vec<f64> = a.iter().take(out_len).map(|c| c.re / n as f64).collect();
    out.resize(out_len, 0.0);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScenario {
    /// Far-field lag behind the close-talk signal, in samples.
    pub delay: usize,
    pub gain: f64,
    /// Optional impulse response; tap 0 is the direct path.
    pub rir_taps: Option<Vec<f64>>,
    pub noise_kind: NoiseKind,
    /// Noise level against the direct sound; `+inf` means no noise.
    pub noise_snr_db: f64,
    /// Optional independent noise on the close-talk channel.
    #[serde(default)]
    pub close_talk_snr_db: Option<f64>,
    pub seed: u64,
}

impl SynthScenario {
    pub fn anechoic(delay: usize, gain: f64, noise_snr_db: f64, seed: u64) -> Self {
        Self {
            delay,
            gain,
            rir_taps: None,
            noise_kind: NoiseKind::White,
            noise_snr_db,
            close_talk_snr_db: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gain must be positive, got {}",
                self.gain
            )));
        }
        if let Some(rir) = &self.rir_taps {
            if rir.first().is_none_or(|&d| d == 0.0) {
                return Err(Error::InvalidParameter(
                    "RIR direct tap must be nonzero".into(),
                ));
            }
        }
        if self.noise_snr_db.is_nan() {
            return Err(Error::InvalidParameter("noise SNR is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub close_talk: Vec<f64>,
    pub far_mixture: Vec<f64>,
    pub direct_sound: Vec<f64>,
    /// `10 log10(|direct|^2 / |mixture - direct|^2)`, `+inf` when noiseless
    /// and anechoic.
    pub true_snr_db: f64,
}

fn scaled_noise(
    kind: NoiseKind,
    len: usize,
    seed: u64,
    reference_energy: f64,
    snr_db: f64,
) -> Vec<f64> {
    let noise = gen_noise(kind, len, seed);
    let scale = (reference_energy / (10f64.powf(snr_db / 10.0) * energy(&noise))).sqrt();
    noise.into_iter().map(|v| v * scale).collect()
}

/// `10 log10(|reference|^2 / |signal - reference|^2)`.
pub fn snr_db(signal: &[f64], reference: &[f64]) -> f64 {
    let residual: f64 = signal
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    10.0 * (energy(reference) / residual).log10()
}

/// Builds one pair of the same length as `clean`.
pub fn synth_pair(clean: &[f64], scenario: &SynthScenario) -> Result<SynthPair> {
    scenario.validate()?;
    if energy(clean) == 0.0 {
        return Err(Error::ZeroEnergy("clean signal"));
    }
    let len = clean.len();
    let mut delayed = vec![0.0; len];
    if scenario.delay < len {
        for (d, c) in delayed[scenario.delay..].iter_mut().zip(clean) {
            *d = scenario.gain * c;
        }
    }
    let (direct, reverberant) = match &scenario.rir_taps {
        Some(rir) => (
            delayed.iter().map(|v| v * rir[0]).collect::<Vec<_>>(),
            convolve(&delayed, rir, len),
        ),
        None => (delayed.clone(), delayed),
    };

    let mut far = reverberant;
    if scenario.noise_snr_db.is_finite() {
        let noise = scaled_noise(
            scenario.noise_kind,
            len,
            scenario.seed,
            energy(&direct),
            scenario.noise_snr_db,
        );
        far.iter_mut().zip(&noise).for_each(|(f, n)| *f += n);
    }

    let mut close = clean.to_vec();
    if let Some(ct_snr) = scenario.close_talk_snr_db {
        let noise = scaled_noise(
            NoiseKind::White,
            len,
            scenario.seed ^ 0x5eed,
            energy(clean),
            ct_snr,
        );
        close.iter_mut().zip(&noise).for_each(|(c, n)| *c += n);
    }

    Ok(SynthPair {
        true_snr_db: snr_db(&far, &direct),
        close_talk: close,
        far_mixture: far,
        direct_sound: direct,
    })
}

/// Speech-like test signal: harmonic "syllables" with gliding pitch and a
/// breathy noise component, separated by short pauses. Peak RMS about 0.1.
pub fn speech_like(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let breath = gen_noise(NoiseKind::Pink, len.max(1), seed.wrapping_add(1));
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(0.0..0.05) * fs) as usize;
    while pos < len {
        let dur = (rng.random_range(0.08..0.30) * fs) as usize;
        let f0_start: f64 = rng.random_range(90.0..220.0);
        let f0_end = f0_start * rng.random_range(0.8..1.25);
        let breathiness = rng.random_range(0.05..0.3);
        let n_harm = (3800.0 / f0_start.max(f0_end)) as usize;
        let amps: Vec<f64> = (1..=n_harm)
            .map(|k| rng.random_range(0.3..1.0) / k as f64)
            .collect();
        let mut phase = 0.0;
        for i in 0..dur.min(len - pos) {
            let frac = i as f64 / dur as f64;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            phase += 2.0 * PI * f0 / fs;
            let env = (PI * frac).sin().powi(2);
            let voiced: f64 = amps
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
                .sum();
            out[pos + i] = env * (voiced + breathiness * breath[pos + i]);
        }
        pos += dur + (rng.random_range(0.02..0.2) * fs) as usize;
    }
    let peak_rms = (energy(&out) / len.max(1) as f64).sqrt();
    if peak_rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.1 / peak_rms);
    }
    out
}

/// Ranges for randomly drawn simulation scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub count: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub segment_s: f64,
    /// Silence before and after the utterance in each recording.
    pub margin_s: f64,
    pub max_delay: usize,
    pub gain_range: (f64, f64),
    pub snr_range_db: (f64, f64),
    /// Upper bound of the tail decay; 0 gives anechoic scenarios only.
    pub max_decay_ms: f64,
    /// Direct-to-reverberant ratio of the generated tails.
    pub drr_db: f64,
    pub noise_kind: NoiseKind,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            sample_rate: 16_000,
            segment_s: 3.0,
            margin_s: 0.5,
            max_delay: 4000,
            gain_range: (0.1, 1.0),
            snr_range_db: (0.0, 20.0),
            max_decay_ms: 50.0,
            drr_db: DEFAULT_RIR_DRR_DB,
            noise_kind: NoiseKind::White,
        }
    }
}

impl SimulationSpec {
    /// Draws `count` scenarios deterministically from `seed`. Roughly a
    /// quarter are anechoic when `max_decay_ms > 0`.
    pub fn scenarios(&self) -> Result<Vec<(SynthScenario, f64)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|i| {
                let delay = rng.random_range(0..=self.max_delay);
                let gain = rng.random_range(self.gain_range.0..=self.gain_range.1);
                let snr = rng.random_range(self.snr_range_db.0..=self.snr_range_db.1);
                let decay = if self.max_decay_ms > 0.0 && rng.random_bool(0.75) {
                    rng.random_range(5.0..=self.max_decay_ms)
                } else {
                    0.0
                };
                let seed = self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let rir_taps = if decay > 0.0 {
                    let len = (4.0 * decay * 1e-3 * self.sample_rate as f64) as usize;
                    Some(gen_rir_with_drr(
                        decay,
                        len.max(2),
                        seed,
                        self.sample_rate,
                        self.drr_db,
                    )?)
                } else {
                    None
                };
                Ok((
                    SynthScenario {
                        delay,
                        gain,
                        rir_taps,
                        noise_kind: self.noise_kind,
                        noise_snr_db: snr,
                        close_talk_snr_db: None,
                        seed,
                    },
                    decay,
                ))
            })
            .collect()
    }
}

/// Ground truth for one simulated segment, measured inside the segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub session_id: String,
    pub delay: usize,
    pub gain: f64,
    pub decay_ms: f64,
    pub requested_snr_db: f64,
    pub true_snr_db: f64,
    pub direct_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SimulatedCorpus {
    pub manifest_path: PathBuf,
    pub truth_path: PathBuf,
    pub segments: Vec<SegmentRecord>,
    pub truth: Vec<TruthRecord>,
}

/// Writes one close-talk/far-field/direct-sound WAV triple per scenario plus
/// `manifest.jsonl` and `truth.jsonl` into `dir`. Manifest paths are relative
/// to `dir`.
pub fn simulate_corpus(dir: impl AsRef<Path>, spec: &SimulationSpec) -> Result<SimulatedCorpus> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("audio"))?;
    let rate = spec.sample_rate;
    let margin = (spec.margin_s * rate as f64).round() as usize;
    let seg_len = (spec.segment_s * rate as f64).round() as usize;
    if seg_len == 0 {
        return Err(Error::InvalidParameter(
            "segment length must be positive".into(),
        ));
    }

    let mut segments = Vec::with_capacity(spec.count);
    let mut truth = Vec::with_capacity(spec.count);
    for (i, (scenario, decay_ms)) in spec.scenarios()?.into_iter().enumerate() {
        let mut clean = vec![0.0; margin];
        clean.extend(speech_like(seg_len, rate, scenario.seed));
        clean.resize(2 * margin + seg_len, 0.0);
        let pair = synth_pair(&clean, &scenario)?;

        let session = format!("sim{i:04}");
        let ct = PathBuf::from(format!("audio/{session}_close.wav"));
        let ff = PathBuf::from(format!("audio/{session}_far.wav"));
        let direct = PathBuf::from(format!("audio/{session}_direct.wav"));
        write_wav(
            dir.join(&ct),
            &AudioClip::mono(pair.close_talk, rate)?,
            WavEncoding::Float32,
        )?;
        write_wav(
            dir.join(&ff),
            &AudioClip::mono(pair.far_mixture.clone(), rate)?,
            WavEncoding::Float32,
        )?;
        write_wav(
            dir.join(&direct),
            &AudioClip::mono(pair.direct_sound.clone(), rate)?,
            WavEncoding::Float32,
        )?;

        let window = margin..margin + seg_len;
        truth.push(TruthRecord {
            session_id: session.clone(),
            delay: scenario.delay,
            gain: scenario.gain,
            decay_ms,
            requested_snr_db: scenario.noise_snr_db,
            true_snr_db: snr_db(
                &pair.far_mixture[window.clone()],
                &pair.direct_sound[window],
            ),
            direct_path: direct,
        });
        segments.push(SegmentRecord {
            session_id: session,
            speaker_id: "spk0".into(),
            start_s: margin as f64 / rate as f64,
            end_s: (margin + seg_len) as f64 / rate as f64,
            close_talk_path: ct,
            farfield_path: ff,
        });
    }

    let manifest_path = dir.join("manifest.jsonl");
    let truth_path = dir.join("truth.jsonl");
    write_segments(&manifest_path, &segments)?;
    let mut text = String::new();
    for t in &truth {
        text.push_str(&serde_json::to_string(t)?);
        text.push('\n');
    }
    fs::write(&truth_path, text)?;
    Ok(SimulatedCorpus {
        manifest_path,
        truth_path,
        segments,
        truth,
    })
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
