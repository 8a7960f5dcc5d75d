//! SDS wire protocol, version 1. All integers and floats are little-endian.
//!
//! Request: `"SKLF-SDS1"`, u16 protocol (1), u32 timestep, f32 guidance scale,
//! u16 channels, u16 height, u16 width, u16 prompt length, prompt (UTF-8),
//! `z_t` as `C*H*W` f32 in planar channel-major order, then the conditioning
//! map as `H*W` interleaved RGB byte triples, row-major.
//!
//! Response: `"SKLF-SDS1"`, u16 status (0 ok, 1 bad request, 2 model error),
//! then `C*H*W` f32 noise predictions (planar) when the status is 0.

use super::GuidanceError;

pub const SDS_MAGIC: &[u8; 9] = b"SKLF-SDS1";
pub const PROTOCOL_VERSION: u16 = 1;
pub const STATUS_OK: u16 = 0;
pub const STATUS_BAD_REQUEST: u16 = 1;
pub const STATUS_MODEL_ERROR: u16 = 2;
pub const PREDICT_PATH: &str = "/v1/predict_noise";

#[derive(Debug, Clone, PartialEq)]
pub struct SdsRequest {
    pub timestep: u32,
    pub guidance_scale: f32,
    pub channels: u16,
    pub height: u16,
    pub width: u16,
    pub prompt: String,
    /// Planar `C x H x W`.
    pub z_t: Vec<f32>,
    /// Interleaved RGB, `H x W x 3`.
    pub conditioning: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdsResponse {
    pub status: u16,
    pub eps_hat: Vec<f32>,
}

impl SdsRequest {
    fn plane(&self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn encode(&self) -> Result<Vec<u8>, GuidanceError> {
        let n = self.channels as usize * self.plane();
        if self.z_t.len() != n || self.conditioning.len() != 3 * self.plane() {
            return Err(GuidanceError::Shape(format!(
                "payload sizes {}/{} do not match {}x{}x{}",
                self.z_t.len(),
                self.conditioning.len(),
                self.channels,
                self.height,
                self.width
            )));
        }
        let prompt_len = u16::try_from(self.prompt.len()).map_err(|_| GuidanceError::Shape("prompt longer than 65535 bytes".into()))?;
        let mut out = Vec::with_capacity(32 + self.prompt.len() + 4 * n + self.conditioning.len());
        out.extend(SDS_MAGIC);
        out.extend(PROTOCOL_VERSION.to_le_bytes());
        out.extend(self.timestep.to_le_bytes());
        out.extend(self.guidance_scale.to_le_bytes());
        out.extend(self.channels.to_le_bytes());
        out.extend(self.height.to_le_bytes());
        out.extend(self.width.to_le_bytes());
        out.extend(prompt_len.to_le_bytes());
        out.extend(self.prompt.as_bytes());
        for v in &self.z_t {
            out.extend(v.to_le_bytes());
        }
        out.extend(&self.conditioning);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GuidanceError> {
        let mut r = Cursor { b: bytes, pos: 0 };
        if r.take(9)? != SDS_MAGIC {
            return Err(GuidanceError::Malformed("bad request magic".into()));
        }
        let version = r.u16()?;
        if version != PROTOCOL_VERSION {
            return Err(GuidanceError::ProtocolMismatch(format!("request protocol {version}")));
        }
        let timestep = r.u32()?;
        let guidance_scale = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let (channels, height, width) = (r.u16()?, r.u16()?, r.u16()?);
        let prompt_len = r.u16()? as usize;
        let prompt = String::from_utf8(r.take(prompt_len)?.to_vec()).map_err(|_| GuidanceError::Malformed("prompt is not UTF-8".into()))?;
        let plane = height as usize * width as usize;
        let z_t = r.take(4 * channels as usize * plane)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let conditioning = r.take(3 * plane)?.to_vec();
        if r.pos != bytes.len() {
            return Err(GuidanceError::Malformed("trailing request bytes".into()));
        }
        Ok(Self { timestep, guidance_scale, channels, height, width, prompt, z_t, conditioning })
    }
}

impl SdsResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = SDS_MAGIC.to_vec();
        out.extend(self.status.to_le_bytes());
        if self.status == STATUS_OK {
            for v in &self.eps_hat {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a response to a request with `expected` predicted values.
    pub fn decode(bytes: &[u8], expected: usize) -> Result<Self, GuidanceError> {
        if bytes.len() < 9 {
            return Err(GuidanceError::Malformed(format!("response of {} bytes", bytes.len())));
        }
        if &bytes[..9] != SDS_MAGIC {
            if bytes.starts_with(b"SKLF-SDS") {
                return Err(GuidanceError::ProtocolMismatch(String::from_utf8_lossy(&bytes[..9]).into_owned()));
            }
            return Err(GuidanceError::Malformed("bad response magic".into()));
        }
        let mut r = Cursor { b: bytes, pos: 9 };
        let status = r.u16()?;
        match status {
            STATUS_OK => {}
            STATUS_BAD_REQUEST => return Err(GuidanceError::BadRequest),
            STATUS_MODEL_ERROR => return Err(GuidanceError::ModelError),
            s => return Err(GuidanceError::Malformed(format!("unknown status {s}"))),
        }
        let payload = &bytes[r.pos..];
        if payload.len() != 4 * expected {
            return Err(GuidanceError::Malformed(format!("payload of {} bytes, expected {}", payload.len(), 4 * expected)));
        }
        let eps_hat = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { status, eps_hat })
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GuidanceError> {
        if self.b.len() - self.pos < n {
            return Err(GuidanceError::Malformed(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, GuidanceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, GuidanceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Converts pixel-major `H*W x C` values to planar `C x H*W`.
pub fn to_planar(values: &[f64], channels: usize) -> Vec<f32> {
    let n = values.len() / channels;
    let mut out = vec![0f32; values.len()];
    for i in 0..n {
        for c in 0..channels {
            out[c * n + i] = values[i * channels + c] as f32;
        }
    }
    out
}

pub fn from_planar(values: &[f32], channels: usize) -> Vec<f64> {
    let n = values.len() / channels;
    let mut out = vec![0f64; values.len()];
    for i in 0..n {
        for c in 0..channels {
            out[i * channels + c] = values[c * n + i] as f64;
        }
    }
    out
}
