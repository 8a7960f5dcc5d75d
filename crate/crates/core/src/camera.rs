//! Pinhole camera shared by skeleton projection, silhouettes and ray generation.
//!
//! Camera space: `right`, true `up`, and `forward` (towards `look_at`). Pixel
//! coordinates are continuous with the origin at the top-left image corner, so
//! pixel `(i, j)` covers `[i, i + 1) x [j, j + 1)` and its center is at
//! `(i + 0.5, j + 0.5)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{Ray, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("near plane {near} must be positive and below far plane {far}")]
    Planes { near: f64, far: f64 },
    #[error("vertical field of view {0} outside (0, pi)")]
    Fov(f64),
    #[error("up vector is parallel to the view direction")]
    DegenerateUp,
    #[error("resolution must be non-zero")]
    Resolution,
    #[error("malformed camera spec: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Radians.
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    /// Distance along the optical axis.
    pub depth: f64,
    /// False when the point lies in front of the near plane (or behind the camera).
    pub valid: bool,
}

impl Camera {
    pub fn new(
        position: Vec3,
        look_at: Vec3,
        up: Vec3,
        vertical_fov: f64,
        (width, height): (u32, u32),
        near: f64,
        far: f64,
    ) -> Result<Self, CameraError> {
        let cam = Self { position, look_at, up, vertical_fov, width, height, near, far };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(CameraError::Planes { near: self.near, far: self.far });
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(CameraError::Fov(self.vertical_fov));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Resolution);
        }
        let view = self.look_at - self.position;
        if view.norm() == 0.0 || self.up.cross(&view).norm() <= 1e-12 * view.norm() * self.up.norm() {
            return Err(CameraError::DegenerateUp);
        }
        Ok(())
    }

    /// Orthonormal `(right, up, forward)` basis.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        (right, up, forward)
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.vertical_fov).tan()
    }

    pub fn with_resolution(&self, width: u32, height: u32) -> Self {
        Self { width, height, ..self.clone() }
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let (r, u, f) = self.basis();
        let rel = p - self.position;
        let (xc, yc, zc) = (rel.dot(&r), rel.dot(&u), rel.dot(&f));
        let focal = self.focal();
        let valid = zc.is_finite() && zc >= self.near;
        let (x, y) = if zc > 0.0 {
            (
                0.5 * self.width as f64 + focal * xc / zc,
                0.5 * self.height as f64 - focal * yc / zc,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        Projection { x, y, depth: zc, valid }
    }

    /// Ray through continuous pixel coordinates `(x, y)`.
    pub fn ray(&self, x: f64, y: f64) -> Ray {
        let (r, u, f) = self.basis();
        let focal = self.focal();
        let a = (x - 0.5 * self.width as f64) / focal;
        let b = (0.5 * self.height as f64 - y) / focal;
        Ray::new(self.position, (f + r * a + u * b).normalize())
    }

    pub fn pixel_ray(&self, i: u32, j: u32) -> Ray {
        self.ray(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Applies `p -> rotation * (p - pivot) + pivot + translation` to the camera frame.
    pub fn transformed(&self, rotation: &Matrix3<f64>, pivot: &Vec3, translation: &Vec3) -> Self {
        let map = |p: &Vec3| rotation * (p - pivot) + pivot + translation;
        Self {
            position: map(&self.position),
            look_at: map(&self.look_at),
            up: rotation * self.up,
            ..self.clone()
        }
    }

    /// Camera on a sphere around `target`; azimuth 0 looks along -z from +z,
    /// elevation is measured from the horizontal plane. Angles in radians.
    pub fn orbit(
        target: Vec3,
        radius: f64,
        azimuth: f64,
        elevation: f64,
        vertical_fov: f64,
        resolution: (u32, u32),
    ) -> Result<Self, CameraError> {
        let dir = Vec3::new(
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
            elevation.cos() * azimuth.cos(),
        );
        let position = target + dir * radius;
        let near = (0.05 * radius).min(0.1);
        Self::new(position, target, Vec3::y(), vertical_fov, resolution, near, radius * 4.0 + 10.0)
    }
}

fn fmt_vec(v: &Vec3) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

/// Lossless text form: `pos=x,y,z look=x,y,z up=x,y,z fov=f res=WxH near=n far=f`.
/// Floats are printed in shortest round-trip form.
impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pos={} look={} up={} fov={} res={}x{} near={} far={}",
            fmt_vec(&self.position),
            fmt_vec(&self.look_at),
            fmt_vec(&self.up),
            self.vertical_fov,
            self.width,
            self.height,
            self.near,
            self.far
        )
    }
}

fn parse_vec(s: &str) -> Result<Vec3, CameraError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CameraError::Parse(format!("bad vector '{s}'")))?;
    match parts.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(CameraError::Parse(format!("expected 3 components in '{s}'"))),
    }
}

impl FromStr for Camera {
    type Err = CameraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut pos = None;
        let mut look = None;
        let mut up = None;
        let mut fov = None;
        let mut res = None;
        let mut near = None;
        let mut far = None;
        for tok in s.split_whitespace() {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| CameraError::Parse(format!("expected key=value, got '{tok}'")))?;
            let num = || value.parse::<f64>().map_err(|_| CameraError::Parse(format!("bad number '{value}'")));
            match key {
                "pos" => pos = Some(parse_vec(value)?),
                "look" => look = Some(parse_vec(value)?),
                "up" => up = Some(parse_vec(value)?),
                "fov" => fov = Some(num()?),
                "near" => near = Some(num()?),
                "far" => far = Some(num()?),
                "res" => {
                    let (w, h) = value
                        .split_once('x')
                        .ok_or_else(|| CameraError::Parse(format!("bad resolution '{value}'")))?;
                    let w = w.parse().map_err(|_| CameraError::Parse(format!("bad width '{w}'")))?;
                    let h = h.parse().map_err(|_| CameraError::Parse(format!("bad height '{h}'")))?;
                    res = Some((w, h));
                }
                other => return Err(CameraError::Parse(format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| CameraError::Parse(format!("missing '{k}'"));
        Camera::new(
            pos.ok_or_else(|| missing("pos"))?,
            look.ok_or_else(|| missing("look"))?,
            up.ok_or_else(|| missing("up"))?,
            fov.ok_or_else(|| missing("fov"))?,
            res.ok_or_else(|| missing("res"))?,
            near.ok_or_else(|| missing("near"))?,
            far.ok_or_else(|| missing("far"))?,
        )
    }
}
