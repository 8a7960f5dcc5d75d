//! 8-bit RGB images (binary PPM) and multi-channel feature images.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed image: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn black(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; width as usize * height as usize * 3] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0;
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Format("truncated PPM header".into()));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if tokens[0] != "P6" {
            return Err(ImageError::Format(format!("expected P6, got {}", tokens[0])));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| ImageError::Format(format!("bad number '{s}'")));
        let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
        if maxval != 255 {
            return Err(ImageError::Format(format!("unsupported maxval {maxval}")));
        }
        let len = width as usize * height as usize * 3;
        let data = bytes
            .get(pos..pos + len)
            .ok_or_else(|| ImageError::Format("truncated PPM raster".into()))?
            .to_vec();
        Ok(Self { width, height, data })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::File::create(path)?.write_all(&self.encode_ppm())?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode_ppm(&bytes)
    }
}

const FEATURE_MAGIC: &[u8] = b"SKLF-FEAT v1";

/// Pixel-major feature image: `data[(y * width + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureImage {
    pub fn new(width: u32, height: u32, channels: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width as usize * height as usize * channels {
            return Err(ImageError::Format(format!(
                "feature payload has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_f64(width: u32, height: u32, channels: usize, data: &[f64]) -> Result<Self, ImageError> {
        Self::new(width, height, channels, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Layout: magic, then little-endian u32 width, height, channels, then f32 payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = FEATURE_MAGIC.to_vec();
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let rest = bytes
            .strip_prefix(FEATURE_MAGIC)
            .ok_or_else(|| ImageError::Format("bad feature image magic".into()))?;
        if rest.len() < 12 {
            return Err(ImageError::Format("truncated feature header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(rest[4 * i..4 * i + 4].try_into().unwrap());
        let (width, height, channels) = (word(0), word(1), word(2) as usize);
        let payload = &rest[12..];
        let n = width as usize * height as usize * channels;
        if payload.len() != 4 * n {
            return Err(ImageError::Format("feature payload length mismatch".into()));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(width, height, channels, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Fixed linear map from feature channels to RGB used for previews.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewMap {
    /// 3 rows of `channels` weights.
    pub matrix: Vec<[f64; 3]>,
    pub offset: [f64; 3],
}

impl PreviewMap {
    /// First three channels read as RGB; any further channels are ignored.
    pub fn identity(channels: usize) -> Self {
        let matrix = (0..channels)
            .map(|c| {
                let mut col = [0.0; 3];
                if c < 3 {
                    col[c] = 1.0;
                }
                col
            })
            .collect();
        Self { matrix, offset: [0.0; 3] }
    }

    pub fn decode(&self, features: &[f64], width: u32, height: u32) -> RgbImage {
        let c = self.matrix.len();
        let mut img = RgbImage::black(width, height);
        for (px, chunk) in features.chunks_exact(c).enumerate() {
            let mut rgb = self.offset;
            for (col, &f) in self.matrix.iter().zip(chunk) {
                for k in 0..3 {
                    rgb[k] += col[k] * f;
                }
            }
            let q = rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            img.data[3 * px..3 * px + 3].copy_from_slice(&q);
        }
        img
    }
}
