use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EGOI";

/// Synthetic image: `height x width x channels` floats, row-major.
///
/// File layout: `EGOI`, then `H`, `W`, `C` as u32 LE, then `H*W*C` f32 LE.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl ToyImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Format(format!(
                "{} pixels for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite pixel value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.pixels.len() * 4);
        buf.extend_from_slice(MAGIC);
        for d in [self.height, self.width, self.channels] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for p in &self.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not an EGOI image".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let expected = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
        if bytes.len() - 16 != expected {
            return Err(Error::Format(format!(
                "EGOI header says {h}x{w}x{c} but payload has {} bytes",
                bytes.len() - 16
            )));
        }
        let pixels = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(h, w, c, pixels)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let img = ToyImage::new(1, 2, 1, vec![1.5, -2.0]).unwrap();
        let b = img.to_bytes();
        assert_eq!(&b[..4], b"EGOI");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.5f32.to_le_bytes());
        assert_eq!(ToyImage::from_bytes(&b).unwrap(), img);
    }

    #[test]
    fn header_must_match_payload() {
        let mut b = ToyImage::filled(2, 2, 1, 0.0).to_bytes();
        b.pop();
        assert!(ToyImage::from_bytes(&b).is_err());
        assert!(ToyImage::from_bytes(b"EGOX").is_err());
    }
}
