//! Dense per-pixel embedding maps.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 4] = b"LSEM";
pub const LSEM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LseMapError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an embedding map or unsupported version: {0}")]
    Version(String),
    #[error("truncated embedding map: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// Row-major, pixel-interleaved raw embeddings. A pixel without a value has
/// every channel set to NaN.
#[derive(Debug, Clone)]
pub struct LseMap {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl PartialEq for LseMap {
    /// Bitwise comparison, so NaN sentinels compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl LseMap {
    pub fn empty(width: u32, height: u32, channels: u32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![f32::NAN; width as usize * height as usize * channels as usize],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f32] {
        let c = self.channels as usize;
        &self.data[index * c..(index + 1) * c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f32] {
        let c = self.channels as usize;
        &mut self.data[index * c..(index + 1) * c]
    }

    pub fn at(&self, x: u32, y: u32) -> &[f32] {
        self.pixel(y as usize * self.width as usize + x as usize)
    }

    /// True when every channel of the pixel is finite.
    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.pixel(index).iter().all(|v| v.is_finite())
    }

    pub fn clear_pixel(&mut self, index: usize) {
        self.pixel_mut(index).iter_mut().for_each(|v| *v = f32::NAN);
    }

    pub fn valid_count(&self) -> usize {
        (0..self.pixel_count()).filter(|&i| self.is_valid(i)).count()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), LseMapError> {
        let mut buf = Vec::with_capacity(20 + self.data.len() * 4);
        buf.extend_from_slice(MAGIC);
        for v in [LSEM_VERSION, self.width, self.height, self.channels] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, LseMapError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 20 {
            return Err(LseMapError::Truncated {
                expected: 20,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(LseMapError::Version("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != LSEM_VERSION {
            return Err(LseMapError::Version(format!("version {version}")));
        }
        let (width, height, channels) = (word(8), word(12), word(16));
        let n = width as usize * height as usize * channels as usize;
        let body = &bytes[20..];
        if body.len() != n * 4 {
            return Err(LseMapError::Truncated {
                expected: 20 + n * 4,
                found: bytes.len(),
            });
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), LseMapError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self, LseMapError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_nan_sentinels() {
        let mut map = LseMap::empty(3, 2, 11);
        map.pixel_mut(4).iter_mut().enumerate().for_each(|(c, v)| *v = c as f32 * -0.5);
        let mut buf = Vec::new();
        map.write_to(&mut buf).unwrap();
        let back = LseMap::read_from(&buf[..]).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.valid_count(), 1);
        assert!(back.is_valid(4) && !back.is_valid(0));

        assert!(matches!(LseMap::read_from(&buf[..buf.len() - 3]), Err(LseMapError::Truncated { .. })));
        let mut wrong = buf.clone();
        wrong[4] = 9;
        assert!(matches!(LseMap::read_from(&wrong[..]), Err(LseMapError::Version(_))));
    }
}
