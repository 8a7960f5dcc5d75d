//! Drawable skeleton topology and the conditioning image pipeline:
//! keypoint mapping, facial occlusion culling, bone rasterization, silhouettes.

mod raster;
mod visibility;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::body::PosedMesh;
use crate::geometry::Vec3;

pub use raster::{conditioning_map, rasterize_skeleton, ConditioningMap, ProjectedKeypoint, RasterStyle};
pub use visibility::{
    default_occlusion_epsilon, occlusion_cull, occlusion_cull_bvh, render_silhouette, render_silhouette_bvh, Mask,
};

const DEFAULT_TOPOLOGY: &str = include_str!("../../assets/openpose18.topology");
const CONVEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("keypoint '{name}': {msg}")]
    Keypoint { name: String, msg: String },
    #[error("bone {index}: {msg}")]
    Bone { index: usize, msg: String },
    #[error("expected {expected} joints, got {got}")]
    JointCount { expected: usize, got: usize },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub name: String,
    pub facial: bool,
    pub color: [u8; 3],
    /// Sparse row of the joint map: `(joint, weight)`.
    pub map: Vec<(usize, f64)>,
    /// Offset in the local frame of a joint, applied after the linear map.
    pub offset: Option<(Vec3, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub a: usize,
    pub b: usize,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joint_count: usize,
    keypoints: Vec<Keypoint>,
    bones: Vec<Bone>,
}

impl SkeletonTopology {
    pub fn new(joint_count: usize, keypoints: Vec<Keypoint>, bones: Vec<Bone>) -> Result<Self, TopologyError> {
        for (i, kp) in keypoints.iter().enumerate() {
            let err = |msg: String| TopologyError::Keypoint { name: kp.name.clone(), msg };
            if keypoints[..i].iter().any(|o| o.name == kp.name) {
                return Err(err("duplicate name".into()));
            }
            if kp.map.is_empty() {
                return Err(err("empty joint map row".into()));
            }
            let mut sum = 0.0;
            for &(j, w) in &kp.map {
                if j >= joint_count {
                    return Err(err(format!("joint {j} out of range")));
                }
                if !(w.is_finite() && w >= 0.0) {
                    return Err(err(format!("weight {w} is not a convex weight")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > CONVEX_TOLERANCE {
                return Err(err(format!("row sums to {sum}, expected 1")));
            }
            if let Some((off, j)) = &kp.offset {
                if *j >= joint_count || !off.iter().all(|v| v.is_finite()) {
                    return Err(err("invalid offset".into()));
                }
            }
        }
        for (index, bone) in bones.iter().enumerate() {
            if bone.a >= keypoints.len() || bone.b >= keypoints.len() || bone.a == bone.b {
                return Err(TopologyError::Bone { index, msg: format!("invalid endpoints ({}, {})", bone.a, bone.b) });
            }
        }
        Ok(Self { joint_count, keypoints, bones })
    }

    /// The 18-keypoint OpenPose-style layout for 24-joint SMPL skeletons.
    pub fn default_openpose() -> Self {
        Self::parse(DEFAULT_TOPOLOGY).expect("bundled topology is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len()
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn facial_flags(&self) -> Vec<bool> {
        self.keypoints.iter().map(|k| k.facial).collect()
    }

    pub fn keypoint_index(&self, name: &str) -> Option<usize> {
        self.keypoints.iter().position(|k| k.name == name)
    }

    /// Dense `D x K` joint map, row-major.
    pub fn joint_map(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.keypoints.len() * self.joint_count];
        for (d, kp) in self.keypoints.iter().enumerate() {
            for &(j, w) in &kp.map {
                m[d * self.joint_count + j] += w;
            }
        }
        m
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    /// Parses the line-based topology format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut header = false;
        let mut joints = None;
        let mut keypoints = Vec::new();
        let mut bone_lines = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let perr = |msg: String| TopologyError::Parse { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let head = tokens.next().unwrap_or_default();
            if !header {
                if line != "topology v1" {
                    return Err(perr("expected header 'topology v1'".into()));
                }
                header = true;
                continue;
            }
            match head {
                "joints" => {
                    let k = tokens.next().and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| perr("bad joint count".into()))?;
                    joints = Some(k);
                }
                "keypoint" => {
                    let name = tokens.next().ok_or_else(|| perr("missing keypoint name".into()))?.to_string();
                    let mut kp = Keypoint { name, facial: false, color: [255, 255, 255], map: Vec::new(), offset: None };
                    for tok in tokens {
                        let (key, value) = tok.split_once('=').ok_or_else(|| perr(format!("expected key=value, got '{tok}'")))?;
                        match key {
                            "facial" => {
                                kp.facial = match value {
                                    "0" => false,
                                    "1" => true,
                                    _ => return Err(perr(format!("facial must be 0 or 1, got '{value}'"))),
                                }
                            }
                            "color" => kp.color = parse_color(value).map_err(perr)?,
                            "map" => {
                                for entry in value.split(',') {
                                    let (j, w) = entry.split_once(':').ok_or_else(|| perr(format!("bad map entry '{entry}'")))?;
                                    let j = j.parse::<usize>().map_err(|_| perr(format!("bad joint '{j}'")))?;
                                    let w = w.parse::<f64>().map_err(|_| perr(format!("bad weight '{w}'")))?;
                                    kp.map.push((j, w));
                                }
                            }
                            "offset" => {
                                let (v, j) = value.split_once('@').ok_or_else(|| perr("offset needs '@joint'".into()))?;
                                let c: Vec<f64> = v
                                    .split(',')
                                    .map(|x| x.parse::<f64>())
                                    .collect::<Result<_, _>>()
                                    .map_err(|_| perr(format!("bad offset '{v}'")))?;
                                if c.len() != 3 {
                                    return Err(perr("offset needs 3 components".into()));
                                }
                                let j = j.parse::<usize>().map_err(|_| perr(format!("bad joint '{j}'")))?;
                                kp.offset = Some((Vec3::new(c[0], c[1], c[2]), j));
                            }
                            _ => return Err(perr(format!("unknown keypoint field '{key}'"))),
                        }
                    }
                    keypoints.push(kp);
                }
                "bone" => {
                    let a = tokens.next().ok_or_else(|| perr("missing bone endpoint".into()))?.to_string();
                    let b = tokens.next().ok_or_else(|| perr("missing bone endpoint".into()))?.to_string();
                    let mut color = [255, 255, 255];
                    for tok in tokens {
                        match tok.split_once('=') {
                            Some(("color", v)) => color = parse_color(v).map_err(perr)?,
                            _ => return Err(perr(format!("unknown bone field '{tok}'"))),
                        }
                    }
                    bone_lines.push((line_no, a, b, color));
                }
                other => return Err(perr(format!("unknown directive '{other}'"))),
            }
        }
        if !header {
            return Err(TopologyError::Parse { line: 0, msg: "empty topology".into() });
        }
        let joint_count = joints.ok_or(TopologyError::Parse { line: 0, msg: "missing 'joints' line".into() })?;
        let find = |line: usize, name: &str| {
            keypoints
                .iter()
                .position(|k| k.name == name)
                .ok_or_else(|| TopologyError::Parse { line, msg: format!("unknown keypoint '{name}'") })
        };
        let bones = bone_lines
            .iter()
            .map(|(line, a, b, color)| Ok(Bone { a: find(*line, a)?, b: find(*line, b)?, color: *color }))
            .collect::<Result<Vec<_>, TopologyError>>()?;
        Self::new(joint_count, keypoints, bones)
    }

    /// Serializes to the text format accepted by [`SkeletonTopology::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!("topology v1\njoints {}\n", self.joint_count);
        let color = |c: &[u8; 3]| format!("{},{},{}", c[0], c[1], c[2]);
        for kp in &self.keypoints {
            let map: Vec<String> = kp.map.iter().map(|(j, w)| format!("{j}:{w}")).collect();
            let _ = write!(s, "keypoint {} facial={} color={} map={}", kp.name, kp.facial as u8, color(&kp.color), map.join(","));
            if let Some((o, j)) = &kp.offset {
                let _ = write!(s, " offset={},{},{}@{}", o.x, o.y, o.z, j);
            }
            s.push('\n');
        }
        for b in &self.bones {
            let _ = writeln!(s, "bone {} {} color={}", self.keypoints[b.a].name, self.keypoints[b.b].name, color(&b.color));
        }
        s
    }
}

fn parse_color(v: &str) -> Result<[u8; 3], String> {
    let c: Vec<u8> = v
        .split(',')
        .map(|x| x.parse::<u8>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("bad color '{v}'"))?;
    c.try_into().map_err(|_| format!("color needs 3 components: '{v}'"))
}

/// Applies the joint map to posed joint positions. `frames[k]` is the linear
/// part of joint `k`'s posed frame (rotation times global scale) and is only
/// consulted for keypoints with offsets; it may be empty otherwise.
pub fn map_keypoints(topology: &SkeletonTopology, joints: &[Vec3], frames: &[Matrix3<f64>]) -> Result<Vec<Vec3>, TopologyError> {
    if joints.len() != topology.joint_count {
        return Err(TopologyError::JointCount { expected: topology.joint_count, got: joints.len() });
    }
    topology
        .keypoints
        .iter()
        .map(|kp| {
            let mut p = kp.map.iter().fold(Vec3::zeros(), |acc, &(j, w)| acc + joints[j] * w);
            if let Some((off, j)) = &kp.offset {
                let frame = frames.get(*j).ok_or(TopologyError::JointCount { expected: topology.joint_count, got: frames.len() })?;
                p += frame * off;
            }
            Ok(p)
        })
        .collect()
}

/// Keypoints of a posed mesh, with offsets following joint rotation and global scale.
pub fn posed_keypoints(topology: &SkeletonTopology, mesh: &PosedMesh) -> Result<Vec<Vec3>, TopologyError> {
    let frames: Vec<Matrix3<f64>> =
        (0..mesh.joints.len()).map(|k| mesh.joint_rotation(k) * mesh.params.scale).collect();
    map_keypoints(topology, &mesh.joints, &frames)
}
