//! Posed rendering of trained avatars, motion clips, frame sequences and
//! multi-item scene composition. Nothing here writes parameters.

mod motion;
mod scene;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use motion::{load_motion, save_motion, MotionClip, MotionFrame};
pub use scene::{
    load_obj, render_composed, ItemSpec, MeshAsset, Placement, Scene, SceneItem, SceneItemKind, SceneSpec,
};

use crate::articulation::{build_vertex_index, render_bounds, ArticulatedDeformation, DensityWeightNet, DrnConfig};
use crate::body::{load_body_archive, skin, ArticulatedBody, BodyError, BodyParams};
use crate::camera::{Camera, CameraError};
use crate::field::{generate_rays, load_checkpoint, render, Checkpoint, FieldError, RadianceField, Sampling};
use crate::geometry::Vec3;
use crate::image::{ImageError, PreviewMap, RgbImage};

#[derive(Debug, Error)]
pub enum AnimationError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("frame {frame} has {got} joints, expected {expected}")]
    JointCount { frame: usize, expected: usize, got: usize },
    #[error("checkpoint does not fit the body: {0}")]
    Mismatch(String),
    #[error("camera path is empty")]
    EmptyPath,
    #[error("camera path has {cameras} cameras for {frames} frames")]
    PathLength { cameras: usize, frames: usize },
    #[error("mesh asset: {0}")]
    Mesh(String),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trained canonical field bound to its body and weighting network.
#[derive(Debug, Clone)]
pub struct Avatar {
    pub body: ArticulatedBody,
    pub field: RadianceField,
    pub drn: DensityWeightNet,
    /// Shape used for every pose of this avatar.
    pub betas: Vec<f64>,
}

impl Avatar {
    /// Binds a checkpoint to a body. Without a weighting-network block the
    /// network starts at its documented initialization for the body height.
    pub fn new(body: ArticulatedBody, checkpoint: Checkpoint) -> Result<Self, AnimationError> {
        let drn = match &checkpoint.extra {
            Some(block) => DensityWeightNet::from_block(block)?,
            None => DensityWeightNet::new(DrnConfig::for_body_height(body.height()))?,
        };
        let tb = body.template_bounds();
        let fb = checkpoint.field.config().bounds();
        let tol = 1e-6 * (1.0 + tb.extent().norm());
        if (0..3).any(|a| tb.min[a] < fb.min[a] - tol || tb.max[a] > fb.max[a] + tol) {
            return Err(AnimationError::Mismatch("rest-pose body extends beyond the field bounds".into()));
        }
        let betas = vec![0.0; body.shape_count()];
        Ok(Self { body, field: checkpoint.field, drn, betas })
    }

    pub fn load(checkpoint: &Path, body: &Path) -> Result<Self, AnimationError> {
        Self::new(load_body_archive(body)?, load_checkpoint(checkpoint)?)
    }

    pub fn params(&self, pose: Vec<Vec3>) -> BodyParams {
        BodyParams { betas: self.betas.clone(), ..BodyParams::with_pose(&self.body, pose) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub sampling: Sampling,
    /// Padding of the ray bounding sphere around the posed body.
    pub margin: f64,
    /// Per-channel background; empty means zeros.
    pub background: Vec<f64>,
    pub preview: Option<PreviewMap>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { sampling: Sampling::default(), margin: 0.1, background: Vec::new(), preview: None }
    }
}

impl RenderSettings {
    pub(crate) fn background(&self, channels: usize) -> Vec<f64> {
        if self.background.is_empty() {
            vec![0.0; channels]
        } else {
            self.background.clone()
        }
    }

    pub(crate) fn preview(&self, channels: usize) -> PreviewMap {
        self.preview.clone().unwrap_or_else(|| PreviewMap::identity(channels))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    /// Pixel-major `M x C`.
    pub features: Vec<f64>,
    pub opacity: Vec<f64>,
    pub image: RgbImage,
}

/// Renders the avatar deformed to `params`.
pub fn render_posed(
    avatar: &Avatar,
    params: &BodyParams,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<Frame, AnimationError> {
    let mesh = skin(&avatar.body, params)?;
    let index = build_vertex_index(&mesh);
    let eval = avatar.field.evaluator();
    let drn = avatar.drn.evaluator();
    let hook = ArticulatedDeformation {
        mesh: &mesh,
        index: &index,
        drn: &drn,
        canonical_bounds: Some(avatar.field.config().bounds()),
    };
    let mut rays = generate_rays(camera, None);
    rays.clip_to_sphere(&render_bounds(&mesh, settings.margin));
    let c = eval.channels();
    let bg = settings.background(c);
    if bg.len() != c {
        return Err(AnimationError::Mismatch(format!("background has {} values, field has {c} channels", bg.len())));
    }
    let out = render(&eval, &rays, &settings.sampling, &bg, Some(&hook));
    let image = settings.preview(c).decode(&out.features, camera.width, camera.height);
    Ok(Frame { width: camera.width, height: camera.height, channels: c, features: out.features, opacity: out.opacity, image })
}

/// Cameras for a sequence: one per frame, or an orbit around one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraPath {
    PerFrame(Vec<Camera>),
    Orbit { frame: usize, cameras: Vec<Camera> },
}

impl CameraPath {
    /// `count` cameras evenly spaced in azimuth starting at `azimuth` (radians).
    #[allow(clippy::too_many_arguments)]
    pub fn orbit(
        frame: usize,
        count: usize,
        target: Vec3,
        radius: f64,
        azimuth: f64,
        elevation: f64,
        vertical_fov: f64,
        resolution: (u32, u32),
    ) -> Result<Self, AnimationError> {
        let cameras = (0..count)
            .map(|i| {
                let az = azimuth + std::f64::consts::TAU * i as f64 / count as f64;
                Camera::orbit(target, radius, az, elevation, vertical_fov, resolution)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self::Orbit { frame, cameras })
    }

    /// `(clip frame, camera)` per output frame.
    pub fn shots(&self, frames: usize) -> Result<Vec<(usize, &Camera)>, AnimationError> {
        match self {
            CameraPath::PerFrame(c) if c.is_empty() => Err(AnimationError::EmptyPath),
            CameraPath::Orbit { cameras, .. } if cameras.is_empty() => Err(AnimationError::EmptyPath),
            CameraPath::PerFrame(c) if c.len() != frames => Err(AnimationError::PathLength { cameras: c.len(), frames }),
            CameraPath::PerFrame(c) => Ok(c.iter().enumerate().collect()),
            CameraPath::Orbit { frame, cameras } => Ok(cameras.iter().map(|c| (*frame, c)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub clip_frame: usize,
    pub camera: Camera,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

/// One line per frame: `index file clip_frame camera...`.
pub fn manifest_text(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("# index file clip_frame camera\n");
    for e in entries {
        let _ = writeln!(s, "{} {} {} {}", e.index, e.file, e.clip_frame, e.camera);
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, AnimationError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| AnimationError::Parse { line: n + 1, msg };
        let mut parts = line.splitn(4, ' ');
        let mut next = |what: &str| parts.next().ok_or_else(|| err(format!("missing {what}")));
        let index = next("index")?.parse().map_err(|_| err("bad index".into()))?;
        let file = next("file")?.to_string();
        let clip_frame = next("clip frame")?.parse().map_err(|_| err("bad clip frame".into()))?;
        let camera = next("camera")?.parse().map_err(|e: CameraError| err(e.to_string()))?;
        out.push(ManifestEntry { index, file, clip_frame, camera });
    }
    Ok(out)
}

/// Renders every shot of `path` to `out_dir` as numbered PPM frames plus
/// `manifest.txt`. Frames render in parallel; each is deterministic.
pub fn render_sequence(
    scene: &Scene,
    path: &CameraPath,
    out_dir: &Path,
    settings: &RenderSettings,
) -> Result<Vec<PathBuf>, AnimationError> {
    use rayon::prelude::*;
    let shots = path.shots(scene.frame_count())?;
    std::fs::create_dir_all(out_dir)?;
    let files: Vec<PathBuf> = shots
        .par_iter()
        .enumerate()
        .map(|(i, (frame, cam))| {
            let img = render_composed(scene, *frame, cam, settings)?.image;
            let file = out_dir.join(frame_file_name(i));
            img.save_ppm(&file)?;
            Ok(file)
        })
        .collect::<Result<_, AnimationError>>()?;
    let entries: Vec<ManifestEntry> = shots
        .iter()
        .enumerate()
        .map(|(i, (frame, cam))| ManifestEntry { index: i, file: frame_file_name(i), clip_frame: *frame, camera: (*cam).clone() })
        .collect();
    std::fs::write(out_dir.join("manifest.txt"), manifest_text(&entries))?;
    Ok(files)
}
