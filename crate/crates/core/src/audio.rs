//! WAV I/O and diarization-driven segment cutting.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::str::FromStr;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multichannel waveform in `f64`, nominally within [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter(
                "sample rate must be positive".into(),
            ));
        }
        if channels.is_empty() {
            return Err(Error::InvalidParameter(
                "clip needs at least one channel".into(),
            ));
        }
        let len = channels[0].len();
        if let Some(other) = channels.iter().find(|c| c.len() != len) {
            return Err(Error::LengthMismatch {
                left: len,
                right: other.len(),
            });
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn into_mono(mut self) -> Vec<f64> {
        self.channels.swap_remove(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    Pcm16,
    Pcm24,
    Pcm32,
    #[default]
    Float32,
}

impl WavEncoding {
    fn spec(self, channels: u16, sample_rate: u32) -> WavSpec {
        let (bits_per_sample, sample_format) = match self {
            WavEncoding::Pcm16 => (16, SampleFormat::Int),
            WavEncoding::Pcm24 => (24, SampleFormat::Int),
            WavEncoding::Pcm32 => (32, SampleFormat::Int),
            WavEncoding::Float32 => (32, SampleFormat::Float),
        };
        WavSpec {
            channels,
            sample_rate,
            bits_per_sample,
            sample_format,
        }
    }
}

impl FromStr for WavEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcm16" => Ok(WavEncoding::Pcm16),
            "pcm24" => Ok(WavEncoding::Pcm24),
            "pcm32" => Ok(WavEncoding::Pcm32),
            "float32" | "f32" => Ok(WavEncoding::Float32),
            other => Err(Error::UnsupportedEncoding(other.to_string())),
        }
    }
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<WavReader<BufReader<File>>> {
    let reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16 | 24 | 32) | (SampleFormat::Float, 32) => Ok(reader),
        (fmt, bits) => Err(Error::UnsupportedEncoding(format!(
            "{}: {bits}-bit {fmt:?}",
            path.display()
        ))),
    }
}

/// Reads `frames` interleaved frames from the reader's current position.
fn read_frames(
    reader: &mut WavReader<BufReader<File>>,
    path: &Path,
    frames: usize,
) -> Result<Vec<Vec<f64>>> {
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    let total = frames * n_ch;
    match spec.sample_format {
        SampleFormat::Float => {
            for (i, s) in reader.samples::<f32>().take(total).enumerate() {
                channels[i % n_ch].push(s.map_err(wav_err(path))? as f64);
            }
        }
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            for (i, s) in reader.samples::<i32>().take(total).enumerate() {
                channels[i % n_ch].push(s.map_err(wav_err(path))? as f64 * scale);
            }
        }
    }
    if channels[0].len() != frames {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            source: hound::Error::FormatError("truncated sample data"),
        });
    }
    Ok(channels)
}

/// Reads a whole WAV file. Integer PCM is scaled by `1 / 2^(bits-1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let frames = reader.duration() as usize;
    let rate = reader.spec().sample_rate;
    AudioClip::new(read_frames(&mut reader, path, frames)?, rate)
}

/// Sample rate and length in frames without reading sample data.
pub fn wav_info(path: impl AsRef<Path>) -> Result<(u32, usize)> {
    let path = path.as_ref();
    let reader = open(path)?;
    Ok((reader.spec().sample_rate, reader.duration() as usize))
}

/// Reads frames `[start, start + len)` where `start` may be negative or the
/// range may run past the end of the file; out-of-file samples are zero.
pub fn read_wav_window(path: impl AsRef<Path>, start: i64, len: usize) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let spec = reader.spec();
    let file_len = reader.duration() as i64;
    let mut channels = vec![vec![0.0; len]; spec.channels as usize];

    let from = start.max(0);
    let to = (start + len as i64).min(file_len);
    if from < to {
        reader.seek(from as u32).map_err(Error::Io)?;
        let chunk = read_frames(&mut reader, path, (to - from) as usize)?;
        let offset = (from - start) as usize;
        for (dst, src) in channels.iter_mut().zip(chunk) {
            dst[offset..offset + src.len()].copy_from_slice(&src);
        }
    }
    AudioClip::new(channels, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    if clip.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "refusing to write empty clip to {}",
            path.display()
        )));
    }
    let spec = encoding.spec(clip.n_channels() as u16, clip.sample_rate());
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for i in 0..clip.len() {
        for ch in clip.channels() {
            let x = ch[i];
            match encoding {
                WavEncoding::Float32 => writer.write_sample(x as f32),
                _ => {
                    let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
                    let q = (x * full).round().clamp(-full, full - 1.0) as i32;
                    writer.write_sample(q)
                }
            }
            .map_err(wav_err(path))?;
        }
    }
    writer.finalize().map_err(wav_err(path))
}

/// Sample range selected by a `[start_s, end_s)` interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRange {
    pub start: usize,
    pub end: usize,
    /// The requested end ran past the clip and was pulled back.
    pub clamped: bool,
}

impl SampleRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// `[round(start_s * rate), round(end_s * rate))`, with the end clamped to
/// `len_samples`.
pub fn segment_range(
    len_samples: usize,
    sample_rate: u32,
    start_s: f64,
    end_s: f64,
) -> Result<SampleRange> {
    if !(start_s.is_finite() && end_s.is_finite() && start_s >= 0.0 && start_s < end_s) {
        return Err(Error::InvalidParameter(format!(
            "segment [{start_s}, {end_s}) is not a valid interval"
        )));
    }
    let rate = sample_rate as f64;
    let start = (start_s * rate).round() as usize;
    let end = (end_s * rate).round() as usize;
    if start >= len_samples {
        return Err(Error::SegmentOutOfRange {
            start_s,
            duration_s: len_samples as f64 / rate,
        });
    }
    Ok(SampleRange {
        start,
        end: end.min(len_samples),
        clamped: end > len_samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub clip: AudioClip,
    pub clamped: bool,
}

/// Sample-exact slice of every channel.
pub fn cut_segment(clip: &AudioClip, start_s: f64, end_s: f64) -> Result<Cut> {
    let range = segment_range(clip.len(), clip.sample_rate(), start_s, end_s)?;
    if range.clamped {
        log::warn!(
            "segment end {end_s} s exceeds clip duration {:.3} s; clamped",
            clip.duration_s()
        );
    }
    let channels = clip
        .channels()
        .iter()
        .map(|c| c[range.start..range.end].to_vec())
        .collect();
    Ok(Cut {
        clip: AudioClip::new(channels, clip.sample_rate())?,
        clamped: range.clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    /// Multiples of 1/1024, exact in float32.
    fn ramp(len: usize) -> Vec<f64> {
        (0..len).map(|i| (i % 1024) as f64 / 1024.0).collect()
    }

    #[test]
    fn cut_full_clip_is_identity() {
        let clip = AudioClip::mono(ramp(160_000), 16000).unwrap();
        let cut = cut_segment(&clip, 0.0, 10.0).unwrap();
        assert_eq!(cut.clip, clip);
        assert!(!cut.clamped);
    }

    #[test]
    fn cut_one_second() {
        let clip = AudioClip::mono(ramp(160_000), 16000).unwrap();
        let cut = cut_segment(&clip, 1.0, 2.0).unwrap();
        assert_eq!(cut.clip.len(), 16000);
        assert_eq!(cut.clip.channel(0)[0], clip.channel(0)[16000]);
    }

    #[test]
    fn cut_clamps_overshoot() {
        let clip = AudioClip::mono(ramp(160_000), 16000).unwrap();
        let cut = cut_segment(&clip, 9.5, 11.0).unwrap();
        assert!(cut.clamped);
        assert_eq!(cut.clip.len(), 8000);
    }

    #[test]
    fn cut_rejects_start_past_end() {
        let clip = AudioClip::mono(ramp(16000), 16000).unwrap();
        assert!(matches!(
            cut_segment(&clip, 1.5, 2.0),
            Err(Error::SegmentOutOfRange { .. })
        ));
        assert!(cut_segment(&clip, 0.5, 0.5).is_err());
    }

    #[test]
    fn clip_invariants() {
        assert!(AudioClip::new(vec![vec![0.0; 3], vec![0.0; 4]], 16000).is_err());
        assert!(AudioClip::mono(vec![0.0], 0).is_err());
    }

    #[test]
    fn pcm16_zeros_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.wav");
        write_wav(
            &path,
            &AudioClip::mono(vec![0.0; 16000], 16000).unwrap(),
            WavEncoding::Pcm16,
        )
        .unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.len(), 16000);
        assert_eq!(clip.sample_rate(), 16000);
        assert!(clip.channel(0).iter().all(|&x| x == 0.0));
    }

    /// Hand-assembled RIFF bytes, independent of the writer.
    #[test]
    fn pcm16_full_scale_square_fixture() {
        let samples: [i16; 4] = [32767, 32767, -32767, -32767];
        let data: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
        bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&(data.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&data);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("square.wav");
        File::create(&path).unwrap().write_all(&bytes).unwrap();
        let clip = read_wav(&path).unwrap();
        let v = 32767.0 / 32768.0;
        assert_eq!(clip.channel(0), &[v, v, -v, -v]);

        // and the writer reproduces the same payload
        let again = dir.path().join("again.wav");
        write_wav(&again, &clip, WavEncoding::Pcm16).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), bytes);
    }

    #[test]
    fn read_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_wav(dir.path().join("nope.wav")),
            Err(Error::Wav { .. })
        ));
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFF1234WAVEjunk").unwrap();
        assert!(read_wav(&junk).is_err());

        let path = dir.path().join("u8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(Error::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn window_read_zero_fills() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.wav");
        let clip = AudioClip::new(vec![ramp(100), ramp(100)], 8000).unwrap();
        write_wav(&path, &clip, WavEncoding::Float32).unwrap();
        let w = read_wav_window(&path, -10, 30).unwrap();
        assert_eq!(w.n_channels(), 2);
        assert!(w.channel(1)[..10].iter().all(|&x| x == 0.0));
        assert_eq!(w.channel(1)[10..], clip.channel(1)[..20]);
        let tail = read_wav_window(&path, 90, 20).unwrap();
        assert_eq!(tail.channel(0)[..10], clip.channel(0)[90..]);
        assert!(tail.channel(0)[10..].iter().all(|&x| x == 0.0));
        assert!(read_wav_window(&path, 500, 5)
            .unwrap()
            .channel(0)
            .iter()
            .all(|&x| x == 0.0));
    }
}
