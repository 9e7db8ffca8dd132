//! JSONL segment manifests (input) and pseudo-label manifests (output).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One diarized single-speaker segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub session_id: String,
    pub speaker_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub close_talk_path: PathBuf,
    /// Far-field reference, normally the GSS output for this speaker.
    pub farfield_path: PathBuf,
}

impl SegmentRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.start_s.is_finite() && self.end_s.is_finite()) {
            return Err("start_s and end_s must be finite".into());
        }
        if self.start_s < 0.0 {
            return Err(format!("start_s {} is negative", self.start_s));
        }
        if self.start_s >= self.end_s {
            return Err(format!(
                "start_s {} must be before end_s {}",
                self.start_s, self.end_s
            ));
        }
        if self.close_talk_path.as_os_str().is_empty() {
            return Err("close_talk_path is empty".into());
        }
        if self.farfield_path.as_os_str().is_empty() {
            return Err("farfield_path is empty".into());
        }
        Ok(())
    }
}

pub fn parse_segments_str(text: &str, origin: &Path) -> Result<Vec<SegmentRecord>> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Manifest {
            path: origin.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: SegmentRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        record.validate().map_err(err)?;
        records.push(record);
    }
    Ok(records)
}

pub fn parse_segments(path: impl AsRef<Path>) -> Result<Vec<SegmentRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_segments_str(&text, path)
}

pub fn write_segments(path: impl AsRef<Path>, records: &[SegmentRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

/// Outcome of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Kept,
    Discarded,
    Failed,
}

/// Segment SNR in dB. Infinite values are legal sentinels (zero residual or
/// zero pseudo label) and serialise as the strings `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SnrDb(pub f64);

impl Serialize for SnrDb {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            v if v == f64::INFINITY => s.serialize_str("inf"),
            v if v == f64::NEG_INFINITY => s.serialize_str("-inf"),
            v => s.serialize_f64(v),
        }
    }
}

impl<'de> Deserialize<'de> for SnrDb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(SnrDb(v)),
            Raw::Str(s) => match s.as_str() {
                "inf" | "+inf" => Ok(SnrDb(f64::INFINITY)),
                "-inf" => Ok(SnrDb(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("bad snr_db `{other}`"))),
            },
        }
    }
}

/// Output manifest row: the input segment plus everything TLS derived for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    #[serde(flatten)]
    pub segment: SegmentRecord,
    pub offset_samples: Option<i64>,
    pub snr_db: Option<SnrDb>,
    pub kept: bool,
    pub status: Status,
    /// Segment end ran past one of the recordings.
    #[serde(default)]
    pub clamped: bool,
    /// Relative to the output directory; only set for kept segments.
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub error: Option<String>,
    /// Wall-clock milliseconds since the Unix epoch. Not part of the result
    /// proper; ignore it when comparing runs.
    #[serde(default)]
    pub processed_at_ms: u64,
}

impl PseudoLabelRecord {
    pub fn eq_ignoring_timestamp(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.processed_at_ms = other.processed_at_ms;
        &a == other
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[PseudoLabelRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<PseudoLabelRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
