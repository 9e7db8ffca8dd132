//! Dense row-major `f64` tensors and their binary dump format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "TGRD"
//! version u8       1
//! dtype   u8       1 = float64
//! ndim    u16
//! dims    ndim x u64
//! payload prod(dims) x f64, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TGRD";
pub const VERSION: u8 = 1;
pub const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(DTYPE_F64);
        out.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Grid(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::Grid(format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F64 {
            return Err(Error::Grid(format!("unsupported dtype tag {}", bytes[5])));
        }
        let ndim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let header = 8 + 8 * ndim;
        if bytes.len() < header {
            return Err(bad("truncated header"));
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dimension overflow"))?;
        if bytes.len() - header
            != count
                .checked_mul(8)
                .ok_or_else(|| bad("dimension overflow"))?
        {
            return Err(Error::Grid(format!(
                "payload has {} bytes, dims {dims:?} need {}",
                bytes.len() - header,
                count * 8
            )));
        }
        let data = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Grid::new(dims, data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        out.write_all(&self.to_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Interprets a 2-D grid as a magnitude spectrogram.
    pub fn into_magnitude(self) -> Result<MagnitudeSpectrogram> {
        match self.dims[..] {
            [t, f] => MagnitudeSpectrogram::new(t, f, self.data, None),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a 2-D grid, got dims {:?}",
                self.dims
            ))),
        }
    }
}

impl From<&MagnitudeSpectrogram> for Grid {
    fn from(m: &MagnitudeSpectrogram) -> Self {
        Grid {
            dims: vec![m.n_frames(), m.n_bins()],
            data: m.as_slice().to_vec(),
        }
    }
}
