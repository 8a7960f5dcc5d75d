//! Motion clip text format.
//!
//! ```text
//! motion v1
//! fps 30
//! joints 24
//! frames 2
//! <scale> <tx> <ty> <tz> <K axis-angle triples>
//! <scale> <tx> <ty> <tz> <K axis-angle triples>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Numbers are written in
//! shortest round-trip form, so save followed by load is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::body::{ArticulatedBody, BodyParams};
use crate::geometry::Vec3;

use super::AnimationError;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub scale: f64,
    pub translation: Vec3,
    /// Axis-angle per joint, radians.
    pub pose: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub fps: f64,
    pub frames: Vec<MotionFrame>,
}

impl MotionClip {
    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.pose.len())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn check_joints(&self, joints: usize) -> Result<(), AnimationError> {
        match self.frames.iter().position(|f| f.pose.len() != joints) {
            Some(i) => Err(AnimationError::JointCount { frame: i, expected: joints, got: self.frames[i].pose.len() }),
            None => Ok(()),
        }
    }

    /// Body parameters of frame `index` (clamped to the last frame).
    pub fn params(&self, index: usize, betas: &[f64]) -> BodyParams {
        let f = &self.frames[index.min(self.frames.len() - 1)];
        BodyParams { betas: betas.to_vec(), pose: f.pose.clone(), scale: f.scale, translation: f.translation }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "motion v1\nfps {}\njoints {}\nframes {}", self.fps, self.joint_count(), self.frames.len());
        for f in &self.frames {
            let _ = write!(s, "{} {} {} {}", f.scale, f.translation.x, f.translation.y, f.translation.z);
            for r in &f.pose {
                let _ = write!(s, " {} {} {}", r.x, r.y, r.z);
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, AnimationError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, msg: String| AnimationError::Parse { line, msg };
        let mut header = |key: &str| -> Result<(usize, String), AnimationError> {
            let (n, l) = lines.next().ok_or_else(|| err(0, format!("missing '{key}' line")))?;
            match l.split_once(char::is_whitespace) {
                Some((k, v)) if k == key => Ok((n, v.trim().to_string())),
                _ => Err(err(n, format!("expected '{key} ...', got '{l}'"))),
            }
        };
        let (n, magic) = header("motion")?;
        if magic != "v1" {
            return Err(err(n, format!("unsupported motion version '{magic}'")));
        }
        let (n, fps) = header("fps")?;
        let fps: f64 = fps.parse().map_err(|_| err(n, format!("bad fps '{fps}'")))?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(err(n, "fps must be positive".into()));
        }
        let (n, k) = header("joints")?;
        let k: usize = k.parse().map_err(|_| err(n, format!("bad joint count '{k}'")))?;
        let (n, count) = header("frames")?;
        let count: usize = count.parse().map_err(|_| err(n, format!("bad frame count '{count}'")))?;
        if count == 0 {
            return Err(err(n, "a clip needs at least one frame".into()));
        }
        let mut frames = Vec::with_capacity(count);
        for (n, l) in lines {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(n, format!("bad number '{t}'"))))
                .collect::<Result<_, _>>()?;
            if v.len() < 4 || !(v.len() - 4).is_multiple_of(3) {
                return Err(err(n, format!("expected 4 + 3K values, got {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) || v[0] <= 0.0 {
                return Err(err(n, "values must be finite with positive scale".into()));
            }
            let pose: Vec<Vec3> = v[4..].chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            if pose.len() != k {
                return Err(AnimationError::JointCount { frame: frames.len(), expected: k, got: pose.len() });
            }
            frames.push(MotionFrame { scale: v[0], translation: Vec3::new(v[1], v[2], v[3]), pose });
        }
        if frames.len() != count {
            return Err(err(0, format!("header declares {count} frames, found {}", frames.len())));
        }
        Ok(Self { fps, frames })
    }
}

/// Reads a clip and checks it against the body's joint count.
pub fn load_motion(path: &Path, body: &ArticulatedBody) -> Result<MotionClip, AnimationError> {
    let clip = MotionClip::parse(&std::fs::read_to_string(path)?)?;
    clip.check_joints(body.joint_count())?;
    Ok(clip)
}

pub fn save_motion(clip: &MotionClip, path: &Path) -> Result<(), AnimationError> {
    std::fs::write(path, clip.to_text())?;
    Ok(())
}
