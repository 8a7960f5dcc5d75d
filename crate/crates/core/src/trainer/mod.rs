//! Silhouette initialization, static and animatable score-distillation
//! training, the camera and pose samplers, and the optimizer.

mod config;
mod stages;

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub use config::{
    AdamConfig, AnimateConfig, BackendConfig, CameraRanges, GuidanceConfig, PoseMode, PosePriorConfig, RenderConfig,
    StageConfig, TrainConfig,
};
pub use stages::{
    field_bounds, pretrain_init, silhouette_iou, silhouette_target, train_animatable, train_static, StageReport,
};

use crate::animation::{load_motion, AnimationError};
use crate::body::{ArticulatedBody, BodyError};
use crate::camera::{Camera, CameraError};
use crate::field::FieldError;
use crate::geometry::Vec3;
use crate::guidance::GuidanceError;
use crate::rng::CounterRng;
use crate::skeleton::TopologyError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Animation(#[from] AnimationError),
    #[error("guidance: {0}")]
    Schedule(#[from] GuidanceError),
    #[error("guidance backend failed at iteration {iteration}: {source}")]
    Backend { iteration: usize, source: GuidanceError },
    #[error("non-finite {what} at iteration {iteration}; last iterations:\n{history}")]
    NonFinite { iteration: usize, what: &'static str, history: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Static,
    Animate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Static => "static",
            Stage::Animate => "animate",
        })
    }
}

/// One training iteration as it appears in the log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationSummary {
    pub stage: Stage,
    pub iteration: usize,
    /// Silhouette MSE for pretraining, mean squared noise residual otherwise.
    pub loss: f64,
    pub timestep: Option<usize>,
    pub pose_index: Option<usize>,
    /// Render camera, which is also the conditioning camera.
    pub camera: Camera,
}

impl fmt::Display for IterationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        write!(
            f,
            "stage={} iter={} loss={:.6e} t={} pose={} camera=[{}]",
            self.stage,
            self.iteration,
            self.loss,
            opt(self.timestep),
            opt(self.pose_index),
            self.camera
        )
    }
}

/// The last ten summaries, dumped when the NaN guard fires.
#[derive(Debug, Default)]
pub(crate) struct History(VecDeque<IterationSummary>);

impl History {
    pub(crate) fn push(&mut self, s: IterationSummary) {
        if self.0.len() == 10 {
            self.0.pop_front();
        }
        self.0.push_back(s);
    }

    pub(crate) fn dump(&self) -> String {
        self.0.iter().map(|s| format!("  {s}\n")).collect()
    }
}

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn optimize_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamConfig) -> Result<(), TrainError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::Config(format!(
            "optimizer shape mismatch: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - hyper.beta1.powi(state.step as i32);
    let c2 = 1.0 - hyper.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

const STREAM_CAMERA: u64 = 0xc0ffee;
const STREAM_POSE: u64 = 0x9053;
const STREAM_LIBRARY: u64 = 0x11b;
const STREAM_MIXTURE: u64 = 0x313;
const STREAM_JITTER: u64 = 0x717;

fn lerp(r: [f64; 2], u: f64) -> f64 {
    r[0] + (r[1] - r[0]) * u
}

/// Camera on a sphere around `center` with radius, elevation, azimuth and fov
/// drawn uniformly from `ranges`; a pure function of `(rng, draw)`.
pub fn sample_camera(
    ranges: &CameraRanges,
    center: Vec3,
    resolution: (u32, u32),
    rng: &CounterRng,
    draw: u64,
) -> Result<Camera, CameraError> {
    let u = |k: u64| rng.uniform(STREAM_CAMERA, 4 * draw + k);
    let radius = lerp(ranges.radius, u(0));
    let elevation = lerp(ranges.elevation, u(1)).to_radians();
    let azimuth = lerp(ranges.azimuth, u(2)).to_radians();
    let fov = lerp(ranges.fov, u(3)).to_radians();
    Camera::orbit(center, radius, azimuth, elevation, fov, resolution)
}

/// Pose distribution used by the animatable stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePrior {
    pub mode: PoseMode,
    /// Per joint, per axis `(lo, hi)` in radians.
    pub bounds: Vec<[(f64, f64); 3]>,
    pub library: Vec<Vec<Vec3>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub pose: Vec<Vec3>,
    /// Library entry the pose came from.
    pub library_index: Option<usize>,
}

impl PosePrior {
    pub fn canonical(joints: usize) -> Self {
        Self { mode: PoseMode::Canonical, bounds: vec![[(0.0, 0.0); 3]; joints], library: Vec::new() }
    }

    pub fn bounded(bounds: Vec<[(f64, f64); 3]>) -> Result<Self, TrainError> {
        let p = Self { mode: PoseMode::BoundedRandom, bounds, library: Vec::new() };
        p.validate()?;
        Ok(p)
    }

    pub fn library(poses: Vec<Vec<Vec3>>) -> Result<Self, TrainError> {
        let joints = poses.first().map_or(0, |p| p.len());
        let p = Self { mode: PoseMode::Library, bounds: vec![[(0.0, 0.0); 3]; joints], library: poses };
        p.validate()?;
        Ok(p)
    }

    pub fn joint_count(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (k, b) in self.bounds.iter().enumerate() {
            if b.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
                return Err(TrainError::Config(format!("pose bounds of joint {k} need lo <= hi")));
            }
        }
        if self.mode == PoseMode::Library {
            if self.library.is_empty() {
                return Err(TrainError::Config("pose library is empty".into()));
            }
            if self.library.iter().any(|p| p.len() != self.joint_count()) {
                return Err(TrainError::Config("pose library entries differ in joint count".into()));
            }
        }
        Ok(())
    }

    /// Builds the prior described by `cfg` for `body`; a library path is
    /// resolved against `base`.
    pub fn from_config(cfg: &PosePriorConfig, body: &ArticulatedBody, base: &Path) -> Result<Self, TrainError> {
        let k = body.joint_count();
        match cfg.mode {
            PoseMode::Canonical => Ok(Self::canonical(k)),
            PoseMode::BoundedRandom => {
                let bounds = if cfg.bounds.is_empty() {
                    let a = cfg.max_angle.abs();
                    (0..k).map(|j| if j == 0 { [(0.0, 0.0); 3] } else { [(-a, a); 3] }).collect()
                } else {
                    if cfg.bounds.len() != 3 * k {
                        return Err(TrainError::Config(format!("pose_prior.bounds needs {} entries, got {}", 3 * k, cfg.bounds.len())));
                    }
                    cfg.bounds.chunks_exact(3).map(|c| [(c[0][0], c[0][1]), (c[1][0], c[1][1]), (c[2][0], c[2][1])]).collect()
                };
                Self::bounded(bounds)
            }
            PoseMode::Library => {
                let path = cfg.library.as_ref().ok_or_else(|| TrainError::Config("pose library path missing".into()))?;
                let clip = load_motion(&base.join(path), body)?;
                Self::library(clip.frames.into_iter().map(|f| f.pose).collect())
            }
        }
    }
}

/// Draws a pose from `prior`; a pure function of `(rng, draw)`.
pub fn sample_pose(prior: &PosePrior, rng: &CounterRng, draw: u64) -> PoseSample {
    match prior.mode {
        PoseMode::Canonical => PoseSample { pose: vec![Vec3::zeros(); prior.joint_count()], library_index: None },
        PoseMode::BoundedRandom => {
            let k = prior.joint_count() as u64;
            let pose = prior
                .bounds
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    let v = |a: usize| {
                        let (lo, hi) = b[a];
                        lo + (hi - lo) * rng.uniform(STREAM_POSE, draw * 3 * k + 3 * j as u64 + a as u64)
                    };
                    Vec3::new(v(0), v(1), v(2))
                })
                .collect();
            PoseSample { pose, library_index: None }
        }
        PoseMode::Library => {
            let n = prior.library.len() as u64;
            let i = (((rng.bits(STREAM_LIBRARY, draw) >> 32) * n) >> 32) as usize;
            PoseSample { pose: prior.library[i].clone(), library_index: Some(i) }
        }
    }
}
