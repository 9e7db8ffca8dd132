//! Batch TLS flow over a segment manifest: cut, time-align, level-align,
//! estimate SNR, filter, write pseudo labels.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use crate::align::{apply_shift, gcc_phat, GccPhatOptions};
use crate::audio::{read_wav_window, segment_range, wav_info, write_wav, AudioClip, WavEncoding};
use crate::dsp::{Stft, StftConfig};
use crate::error::{Error, Result};
use crate::level::{level_align_with, MflfConfig};
use crate::manifest::{
    parse_segments, write_records, PseudoLabelRecord, SegmentRecord, SnrDb, Status,
};
use crate::snr::{estimate_snr, passes, DEFAULT_SNR_THRESHOLD_DB};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const LABELS_DIR: &str = "labels";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    pub mflf: MflfConfig,
    pub max_lag_s: f64,
    pub snr_threshold_db: f64,
    pub worker_count: usize,
    pub output_dir: PathBuf,
    /// Relative manifest paths are resolved against this directory.
    pub input_root: Option<PathBuf>,
    pub encoding: WavEncoding,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            mflf: MflfConfig::default(),
            max_lag_s: 0.5,
            snr_threshold_db: DEFAULT_SNR_THRESHOLD_DB,
            worker_count: 1,
            output_dir: PathBuf::from("out"),
            input_root: None,
            encoding: WavEncoding::Float32,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.mflf.validate()?;
        if self.worker_count == 0 {
            return Err(Error::Config("worker_count must be at least 1".into()));
        }
        if !(self.max_lag_s >= 0.0 && self.max_lag_s.is_finite()) {
            return Err(Error::Config(format!(
                "max_lag_s must be nonnegative, got {}",
                self.max_lag_s
            )));
        }
        if self.snr_threshold_db.is_nan() {
            return Err(Error::Config("snr_threshold_db is NaN".into()));
        }
        Ok(())
    }

    pub fn max_lag_samples(&self) -> usize {
        (self.max_lag_s * self.stft.sample_rate as f64).round() as usize
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "n_fft" => self.stft.n_fft = num(key, value)?,
            "hop" => self.stft.hop = num(key, value)?,
            "window" => self.stft.window = value.parse()?,
            "sample_rate" => self.stft.sample_rate = num(key, value)?,
            "taps" => self.mflf.taps = num(key, value)?,
            "xi" => self.mflf.xi = num(key, value)?,
            "diag_load" => self.mflf.diag_load = num(key, value)?,
            "weight_source" => self.mflf.weight_source = value.parse()?,
            "max_lag_s" => self.max_lag_s = num(key, value)?,
            "snr_threshold_db" => self.snr_threshold_db = num(key, value)?,
            "worker_count" | "workers" => self.worker_count = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "input_root" => self.input_root = Some(PathBuf::from(value)),
            "encoding" => self.encoding = value.parse()?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn load_kv_config(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_kv_config(&text)
}

fn resolve(root: Option<&Path>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Relative output path of segment `index`.
pub fn label_path(index: usize, seg: &SegmentRecord) -> PathBuf {
    PathBuf::from(LABELS_DIR).join(format!(
        "{index:06}_{}_{}.wav",
        sanitize(&seg.session_id),
        sanitize(&seg.speaker_id)
    ))
}

/// Everything TLS computes for one segment, before any file is written.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub offset_samples: i64,
    pub snr_db: f64,
    pub kept: bool,
    pub clamped: bool,
    pub pseudo_label: Vec<f64>,
    pub farfield: Vec<f64>,
}

/// Runs TLS on one segment using file-backed audio.
pub fn process_segment(
    seg: &SegmentRecord,
    config: &PipelineConfig,
    stft: &Stft,
) -> Result<SegmentOutcome> {
    seg.validate().map_err(Error::InvalidParameter)?;
    let root = config.input_root.as_deref();
    let ct_path = resolve(root, &seg.close_talk_path);
    let ff_path = resolve(root, &seg.farfield_path);
    let rate = config.stft.sample_rate;

    let (ct_rate, _) = wav_info(&ct_path)?;
    let (ff_rate, ff_len) = wav_info(&ff_path)?;
    for r in [ct_rate, ff_rate] {
        if r != rate {
            return Err(Error::RateMismatch {
                expected: rate,
                actual: r,
            });
        }
    }

    let range = segment_range(ff_len, rate, seg.start_s, seg.end_s)?;
    let len = range.len();
    let y = read_wav_window(&ff_path, range.start as i64, len)?.into_mono();

    // Close-talk context on both sides so the shift fills from real audio.
    let max_lag = config.max_lag_samples().min(len.saturating_sub(1));
    let padded = read_wav_window(
        &ct_path,
        range.start as i64 - max_lag as i64,
        len + 2 * max_lag,
    )?
    .into_mono();
    let s1 = &padded[max_lag..max_lag + len];

    let alignment = gcc_phat(s1, &y, &GccPhatOptions::with_max_lag(max_lag))?;
    let s2 = apply_shift(&padded, alignment.offset_samples + max_lag as i64, len);
    let aligned = level_align_with(stft, &s2, &y, rate, &config.mflf)?;
    let snr_db = estimate_snr(&aligned.pseudo_label, &y)?;

    Ok(SegmentOutcome {
        offset_samples: alignment.offset_samples,
        snr_db,
        kept: passes(snr_db, config.snr_threshold_db),
        clamped: range.clamped,
        pseudo_label: aligned.pseudo_label,
        farfield: y,
    })
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn run_one(
    index: usize,
    seg: &SegmentRecord,
    config: &PipelineConfig,
    stft: &Stft,
) -> PseudoLabelRecord {
    let mut rec = PseudoLabelRecord {
        segment: seg.clone(),
        offset_samples: None,
        snr_db: None,
        kept: false,
        status: Status::Failed,
        clamped: false,
        output_path: None,
        error: None,
        processed_at_ms: 0,
    };
    let result = process_segment(seg, config, stft).and_then(|out| {
        rec.offset_samples = Some(out.offset_samples);
        rec.snr_db = Some(SnrDb(out.snr_db));
        rec.clamped = out.clamped;
        if out.kept {
            let rel = label_path(index, seg);
            let clip = AudioClip::mono(out.pseudo_label, config.stft.sample_rate)?;
            write_wav(config.output_dir.join(&rel), &clip, config.encoding)?;
            rec.output_path = Some(rel);
        }
        Ok(out.kept)
    });
    match result {
        Ok(kept) => {
            rec.kept = kept;
            rec.status = if kept {
                Status::Kept
            } else {
                Status::Discarded
            };
        }
        Err(e) => {
            log::warn!(
                "segment {index} ({} / {}): {e}",
                seg.session_id,
                seg.speaker_id
            );
            rec.error = Some(e.to_string());
        }
    }
    rec.processed_at_ms = now_ms();
    rec
}

/// Processes every segment; per-segment failures become `failed` rows.
/// Rows come back in manifest order regardless of `worker_count`.
pub fn run_tls(
    manifest: &[SegmentRecord],
    config: &PipelineConfig,
) -> Result<Vec<PseudoLabelRecord>> {
    config.validate()?;
    fs::create_dir_all(config.output_dir.join(LABELS_DIR))?;
    let stft = Stft::new(config.stft)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| {
        manifest
            .par_iter()
            .enumerate()
            .map(|(i, seg)| run_one(i, seg, config, &stft))
            .collect()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub total: usize,
    pub kept: usize,
    pub discarded: usize,
    pub failed: usize,
}

impl RunSummary {
    pub fn of(records: &[PseudoLabelRecord]) -> Self {
        let count = |s| records.iter().filter(|r| r.status == s).count();
        Self {
            total: records.len(),
            kept: count(Status::Kept),
            discarded: count(Status::Discarded),
            failed: count(Status::Failed),
        }
    }
}

/// Parses `manifest_path`, runs TLS and writes `results.jsonl` into the
/// output directory. Relative segment paths resolve against the manifest's
/// directory unless `input_root` is set.
pub fn run_manifest_file(
    manifest_path: impl AsRef<Path>,
    config: &PipelineConfig,
) -> Result<(PathBuf, Vec<PseudoLabelRecord>)> {
    let manifest_path = manifest_path.as_ref();
    let segments = parse_segments(manifest_path)?;
    let mut config = config.clone();
    if config.input_root.is_none() {
        config.input_root = manifest_path.parent().map(Path::to_path_buf);
    }
    let records = run_tls(&segments, &config)?;
    let out = config.output_dir.join(RESULTS_FILE);
    write_records(&out, &records)?;
    Ok((out, records))
}
