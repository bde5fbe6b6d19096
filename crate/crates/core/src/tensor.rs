//! Dense feature maps and the `FARP` tensor file format.
//!
//! Layout is row-major with the channel index fastest:
//! `data[(row * width + col) * channels + channel]`. Feature cell `(row, col)`
//! sits at feature coordinate `(x = col, y = row)`, i.e. image position
//! `(col * stride, row * stride)`.
//!
//! File layout, all little-endian:
//!
//! | offset | type | field |
//! |--------|------|-------|
//! | 0      | 4 B  | magic `FARP` |
//! | 4      | u32  | version (1) |
//! | 8      | u32  | height |
//! | 12     | u32  | width |
//! | 16     | u32  | channels |
//! | 20     | f32  | stride |
//! | 24     | f32 x h*w*c | values |
//!
//! Values are held as `f64` in memory and stored as `f32`; maps whose values
//! are `f32`-representable round-trip exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FARP";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const DEFAULT_STRIDE: f64 = 16.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    stride: f64,
    data: Vec<f64>,
}

/// One in-grid neighbour of a bilinear sample: flat cell offset (without the
/// channel term) and its interpolation weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub cell: usize,
    pub weight: f64,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize, stride: f64) -> Result<Self> {
        let len = checked_len(height, width, channels)?;
        Self::from_vec(height, width, channels, stride, vec![0.0; len])
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, stride: f64, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(height, width, channels)?;
        if data.len() != len {
            return Err(Error::InvalidMap(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if !(stride.is_finite() && stride > 0.0) {
            return Err(Error::InvalidMap(format!("stride must be positive, got {stride}")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMap(format!("non-finite value at index {pos}")));
        }
        Ok(Self { height, width, channels, stride, data })
    }

    /// Builds a map by evaluating `f(row, col, channel)` at every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        stride: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let len = checked_len(height, width, channels)?;
        let mut data = Vec::with_capacity(len);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::from_vec(height, width, channels, stride, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the raw values. Callers must keep them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.data[i] = value;
    }

    /// The in-grid bilinear neighbours of feature point `(x, y)`.
    ///
    /// Returns up to four taps; neighbours outside the grid are omitted,
    /// which is the zero-padding convention.
    #[inline]
    pub fn taps(&self, x: f64, y: f64) -> ([Tap; 4], usize) {
        let mut out = [Tap { cell: 0, weight: 0.0 }; 4];
        let mut n = 0;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let (w, h) = (self.width as i64, self.height as i64);
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            let r = yi + dy;
            if wy == 0.0 || r < 0 || r >= h {
                continue;
            }
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                let c = xi + dx;
                if wx == 0.0 || c < 0 || c >= w {
                    continue;
                }
                out[n] = Tap { cell: (r * w + c) as usize * self.channels, weight: wy * wx };
                n += 1;
            }
        }
        (out, n)
    }

    /// Bilinear interpolation at feature coordinates `(x, y)` in `channel`.
    ///
    /// Cells outside the grid read as zero.
    pub fn bilinear_sample(&self, x: f64, y: f64, channel: usize) -> Result<f64> {
        if channel >= self.channels {
            return Err(Error::InvalidChannel { channel, channels: self.channels });
        }
        Ok(self.sample_unchecked(x, y, channel))
    }

    #[inline]
    pub(crate) fn sample_unchecked(&self, x: f64, y: f64, channel: usize) -> f64 {
        let (taps, n) = self.taps(x, y);
        taps[..n].iter().map(|t| t.weight * self.data[t.cell + channel]).sum()
    }

    /// Serializes into the `FARP` byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = |d: usize| u32::try_from(d).map_err(|_| Error::InvalidMap(format!("dimension {d} exceeds u32")));
        let (h, w, c) = (dim(self.height)?, dim(self.width)?, dim(self.channels)?);
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&h.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        out.extend_from_slice(&c.to_le_bytes());
        out.extend_from_slice(&(self.stride as f32).to_le_bytes());
        for v in &self.data {
            let f = *v as f32;
            if !f.is_finite() {
                return Err(Error::InvalidMap(format!("value {v} not representable as f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses the `FARP` byte layout.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated { expected: HEADER_LEN as u64, actual: bytes.len() as u64 });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated { expected: HEADER_LEN as u64, actual: bytes.len() as u64 });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (h, w, c) = (u32_at(8), u32_at(12), u32_at(16));
        let stride = f32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes")) as f64;
        let overflow = Error::DimensionOverflow { height: h, width: w, channels: c };
        let count = (h as u64).checked_mul(w as u64).and_then(|v| v.checked_mul(c as u64)).ok_or(overflow)?;
        let payload = count.checked_mul(4).filter(|p| usize::try_from(*p).is_ok()).ok_or(Error::DimensionOverflow {
            height: h,
            width: w,
            channels: c,
        })?;
        let actual = (bytes.len() - HEADER_LEN) as u64;
        if actual < payload {
            return Err(Error::Truncated { expected: payload, actual });
        }
        if actual > payload {
            return Err(Error::InvalidMap(format!("{} trailing bytes after payload", actual - payload)));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        Self::from_vec(h as usize, w as usize, c as usize, stride, data)
    }
}

fn checked_len(height: usize, width: usize, channels: usize) -> Result<usize> {
    height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::InvalidMap(format!("{height}x{width}x{channels} overflows")))
}

pub fn write_tensor(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, map.to_bytes()?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMap> {
    FeatureMap::from_bytes(&fs::read(path)?)
}
