//! Pose files and camera arguments.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use skelfield_core::body::{ArticulatedBody, BodyParams};
use skelfield_core::camera::Camera;
use skelfield_core::geometry::Vec3;

use crate::View;

/// Pose JSON: either a bare list of per-joint axis-angle triples or an object
/// with `pose`, and optionally `betas`, `translation` and `scale`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PoseFile {
    Bare(Vec<[f64; 3]>),
    Full(FullPose),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FullPose {
    #[serde(default)]
    pose: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    betas: Option<Vec<f64>>,
    #[serde(default)]
    translation: Option<[f64; 3]>,
    #[serde(default)]
    scale: Option<f64>,
}

pub fn load_params(body: &ArticulatedBody, arg: &str) -> Result<BodyParams> {
    let mut params = BodyParams::zero(body);
    if arg == "zero" {
        return Ok(params);
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("reading pose {arg}"))?;
    let file: PoseFile = serde_json::from_str(&text).with_context(|| format!("parsing pose {arg}"))?;
    let triples = |v: Vec<[f64; 3]>| v.into_iter().map(Vec3::from).collect();
    match file {
        PoseFile::Bare(p) => params.pose = triples(p),
        PoseFile::Full(f) => {
            if let Some(p) = f.pose {
                params.pose = triples(p);
            }
            if let Some(b) = f.betas {
                params.betas = b;
            }
            if let Some(t) = f.translation {
                params.translation = Vec3::from(t);
            }
            if let Some(s) = f.scale {
                params.scale = s;
            }
        }
    }
    params.validate(body).with_context(|| format!("pose {arg}"))?;
    Ok(params)
}

/// Named cameras orbit `target` at zero elevation; the body faces +z.
pub fn camera(view: &View, target: Vec3) -> Result<Camera> {
    let azimuth = match view.camera.as_str() {
        "front" => 0.0,
        "left" => 90.0,
        "back" => 180.0,
        "right" => -90.0,
        spec if spec.contains('=') => return spec.parse().context("camera"),
        other => bail!("unknown camera '{other}'; use front, back, left, right or a full spec"),
    };
    Ok(Camera::orbit(target, view.radius, f64::to_radians(azimuth), 0.0, view.fov.to_radians(), (view.width, view.height))?)
}

pub fn camera_lines(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| l.parse::<Camera>().with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}
