//! Diffusion noise schedule, noising, score-distillation gradients and
//! noise-prediction backends.

pub mod protocol;

use std::io::Read;
use std::time::Duration;

use thiserror::Error;

use crate::image::RgbImage;
use crate::rng::{mix64, CounterRng};
use protocol::{from_planar, to_planar, SdsRequest, SdsResponse, PREDICT_PATH};

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("protocol version mismatch: {0}")]
    ProtocolMismatch(String),
    #[error("server rejected the request")]
    BadRequest,
    #[error("server model error")]
    ModelError,
    #[error("http status {0}")]
    Http(u16),
}

/// Linear-beta DDPM schedule with 1-based timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, GuidanceError> {
        if steps == 0 {
            return Err(GuidanceError::Schedule("at least one timestep required".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(GuidanceError::Schedule(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    /// 1000 steps, beta from 1e-4 to 2e-2.
    pub fn ddpm_default() -> Self {
        Self::new(1000, 1e-4, 2e-2).expect("valid default schedule")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize, GuidanceError> {
        if t == 0 || t > self.steps() {
            return Err(GuidanceError::Timestep { t, max: self.steps() });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64, GuidanceError> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64, GuidanceError> {
        Ok(self.alphas[self.check(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, GuidanceError> {
        Ok(self.alpha_bars[self.check(t)?])
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, GuidanceError> {
    NoiseSchedule::new(steps, beta_start, beta_end)
}

/// `z_t = sqrt(abar_t) x + sqrt(1 - abar_t) eps`.
pub fn add_noise(x: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>, GuidanceError> {
    if x.len() != eps.len() {
        return Err(GuidanceError::Shape(format!("x has {} values, eps {}", x.len(), eps.len())));
    }
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w(t) = 1`.
    Constant,
    /// `w(t) = 1 - abar_t`.
    OneMinusAlphaBar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdsGradient {
    /// Per-pixel gradient with respect to the rendered image.
    pub grad: Vec<f64>,
    pub timestep: usize,
    pub weight: f64,
}

/// `w(t) * sqrt(abar_t) * (eps_hat - eps)`; the `sqrt(abar_t)` factor
/// (`dz_t/dx`) is dropped when `include_sqrt_alpha_bar` is false.
pub fn sds_gradient(
    eps_hat: &[f64],
    eps: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    mode: WeightMode,
    include_sqrt_alpha_bar: bool,
) -> Result<SdsGradient, GuidanceError> {
    if eps_hat.len() != eps.len() {
        return Err(GuidanceError::Shape(format!("eps_hat has {} values, eps {}", eps_hat.len(), eps.len())));
    }
    let ab = schedule.alpha_bar(t)?;
    let weight = match mode {
        WeightMode::Constant => 1.0,
        WeightMode::OneMinusAlphaBar => 1.0 - ab,
    };
    let k = weight * if include_sqrt_alpha_bar { ab.sqrt() } else { 1.0 };
    let grad = eps_hat.iter().zip(eps).map(|(h, e)| k * (h - e)).collect();
    Ok(SdsGradient { grad, timestep: t, weight })
}

/// Inclusive timestep range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimestepRange {
    pub min: usize,
    pub max: usize,
}

impl TimestepRange {
    /// `[round(0.02 T), round(0.98 T)]`, clamped to `[1, T]`.
    pub fn default_for(steps: usize) -> Self {
        let min = ((0.02 * steps as f64).round() as usize).clamp(1, steps);
        let max = ((0.98 * steps as f64).round() as usize).clamp(min, steps);
        Self { min, max }
    }
}

/// Uniform integer in the range, a pure function of `(rng seed, draw)`.
pub fn sample_timestep(rng: &CounterRng, draw: u64, range: TimestepRange) -> usize {
    let span = (range.max - range.min + 1) as u64;
    // multiply-shift keeps the bias below 2^-32 for any practical span
    let r = ((rng.bits(0x7715_7e57, draw) >> 32) * span) >> 32;
    range.min + r as usize
}

/// Standard-normal noise for one iteration, keyed by (iteration, element).
pub fn sample_noise(rng: &CounterRng, iteration: u64, len: usize) -> Vec<f64> {
    rng.normal_vec(0x5d5_0000_0000 ^ iteration, len)
}

/// Everything a backend may look at for one prediction.
#[derive(Debug, Clone, Copy)]
pub struct NoiseRequest<'a> {
    /// Pixel-major `H*W x C`.
    pub z_t: &'a [f64],
    pub timestep: usize,
    pub channels: usize,
    pub width: u32,
    pub height: u32,
    pub conditioning: &'a RgbImage,
    /// The clean render `x`.
    pub render: &'a [f64],
    /// The injected noise.
    pub noise: &'a [f64],
    /// Index of the sampled pose within the trainer's pose set, if any.
    pub pose_index: Option<usize>,
}

pub trait NoisePredictor {
    fn predict(&mut self, request: &NoiseRequest<'_>) -> Result<Vec<f64>, GuidanceError>;
}

/// Analytic stand-in: `eps_hat = eps + sqrt(abar)/sqrt(1 - abar) (x - x*)`,
/// so the SDS direction is exactly `x - x*`.
#[derive(Debug, Clone)]
pub struct MockPredictor {
    schedule: NoiseSchedule,
    /// One target per pose index; index 0 is used when no pose is given.
    targets: Vec<Vec<f64>>,
}

impl MockPredictor {
    pub fn new(schedule: NoiseSchedule, targets: Vec<Vec<f64>>) -> Result<Self, GuidanceError> {
        if targets.is_empty() {
            return Err(GuidanceError::Shape("mock predictor needs a target".into()));
        }
        Ok(Self { schedule, targets })
    }

    pub fn target(&self, pose_index: Option<usize>) -> &[f64] {
        &self.targets[pose_index.unwrap_or(0).min(self.targets.len() - 1)]
    }
}

impl NoisePredictor for MockPredictor {
    fn predict(&mut self, req: &NoiseRequest<'_>) -> Result<Vec<f64>, GuidanceError> {
        let target = self.target(req.pose_index);
        if target.len() != req.render.len() || req.noise.len() != req.render.len() {
            return Err(GuidanceError::Shape(format!("target has {} values, render {}", target.len(), req.render.len())));
        }
        let ab = self.schedule.alpha_bar(req.timestep)?;
        let k = ab.sqrt() / (1.0 - ab).sqrt();
        Ok(req.noise.iter().zip(req.render).zip(target).map(|((e, x), xs)| e + k * (x - xs)).collect())
    }
}

/// Returns the injected noise unchanged (`eps_hat = eps`).
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoPredictor;

impl NoisePredictor for EchoPredictor {
    fn predict(&mut self, req: &NoiseRequest<'_>) -> Result<Vec<f64>, GuidanceError> {
        Ok(req.noise.to_vec())
    }
}

/// HTTP client for the SDS wire protocol.
#[derive(Debug, Clone)]
pub struct RemotePredictor {
    pub endpoint: String,
    pub prompt: String,
    pub guidance_scale: f32,
    pub timeout: Duration,
}

impl RemotePredictor {
    pub fn build_request(&self, req: &NoiseRequest<'_>) -> Result<SdsRequest, GuidanceError> {
        let dim = |v: u32, what: &str| u16::try_from(v).map_err(|_| GuidanceError::Shape(format!("{what} {v} exceeds 65535")));
        Ok(SdsRequest {
            timestep: req.timestep as u32,
            guidance_scale: self.guidance_scale,
            channels: u16::try_from(req.channels).map_err(|_| GuidanceError::Shape("too many channels".into()))?,
            height: dim(req.height, "height")?,
            width: dim(req.width, "width")?,
            prompt: self.prompt.clone(),
            z_t: to_planar(req.z_t, req.channels),
            conditioning: req.conditioning.data.clone(),
        })
    }

    fn url(&self) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), PREDICT_PATH)
    }
}

fn transport_error(e: ureq::Transport) -> GuidanceError {
    let timed_out = std::error::Error::source(&e)
        .and_then(|s| s.downcast_ref::<std::io::Error>())
        .is_some_and(|io| matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock));
    if timed_out {
        GuidanceError::Timeout
    } else {
        GuidanceError::Connection(e.to_string())
    }
}

impl NoisePredictor for RemotePredictor {
    fn predict(&mut self, req: &NoiseRequest<'_>) -> Result<Vec<f64>, GuidanceError> {
        let body = self.build_request(req)?.encode()?;
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let resp = match agent.post(&self.url()).set("Content-Type", "application/octet-stream").send_bytes(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => return Err(GuidanceError::Http(code)),
            Err(ureq::Error::Transport(t)) => return Err(transport_error(t)),
        };
        let mut bytes = Vec::new();
        resp.into_reader().read_to_end(&mut bytes).map_err(|e| match e.kind() {
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => GuidanceError::Timeout,
            _ => GuidanceError::Connection(e.to_string()),
        })?;
        let n = req.channels * req.width as usize * req.height as usize;
        let resp = SdsResponse::decode(&bytes, n)?;
        Ok(from_planar(&resp.eps_hat, req.channels))
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Predictions of a fake-mode server for the given request bytes: with
/// `s = fnv1a64(request)` and `r_k = mix64(s + k * 0x9e3779b97f4a7c15)`, value
/// `i` is `sqrt(-2 ln(1 - u1)) cos(2 pi u2)` with `u1 = (r_{2i+1} >> 11) / 2^53`
/// and `u2 = (r_{2i+2} >> 11) / 2^53`, rounded to f32.
pub fn fake_prediction(request: &[u8], count: usize) -> Vec<f32> {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let seed = fnv1a64(request);
    let r = |k: u64| mix64(seed.wrapping_add(k.wrapping_mul(GOLDEN)));
    let unit = |v: u64| (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (0..count as u64)
        .map(|i| {
            let u1 = unit(r(2 * i + 1));
            let u2 = unit(r(2 * i + 2));
            ((-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
        })
        .collect()
}
