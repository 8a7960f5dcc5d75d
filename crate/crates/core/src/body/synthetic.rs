//! License-free capsule humanoid in the 24-joint SMPL layout.
//!
//! Every joint owns one body part (a capsule, or a sphere for the head). Each
//! joint is regressed from a ring of vertices centred exactly on it, so joint
//! locations do not depend on the tessellation level. Pose blendshapes are
//! absent.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use super::{ArticulatedBody, BodyData, ROOT_PARENT};
use crate::geometry::Vec3;

pub const SMPL_JOINT_NAMES: [&str; 24] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
    "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
];

pub const SMPL_PARENTS: [u32; 24] = [
    ROOT_PARENT, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

pub const NUM_SHAPE: usize = 10;

/// Proportions of the synthetic body. Lengths are in meters before `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBodyConfig {
    /// Uniform scale; 1.0 gives a body about 1.63 m tall.
    pub scale: f64,
    pub arm_length: f64,
    pub leg_length: f64,
    /// Multiplier on all limb radii.
    pub girth: f64,
    /// Angle of the arms below horizontal, radians.
    pub arm_drop: f64,
    /// Outward tilt of the legs, radians.
    pub leg_spread: f64,
    /// Tessellation level (>= 1).
    pub tessellation: u32,
}

impl Default for SyntheticBodyConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            arm_length: 1.0,
            leg_length: 1.0,
            girth: 1.0,
            arm_drop: 0.5,
            leg_spread: 0.06,
            tessellation: 2,
        }
    }
}

impl SyntheticBodyConfig {
    fn clamped(&self) -> Self {
        let pos = |v: f64, lo: f64, hi: f64| if v.is_finite() { v.clamp(lo, hi) } else { lo };
        Self {
            scale: pos(self.scale, 0.05, 20.0),
            arm_length: pos(self.arm_length, 0.3, 2.0),
            leg_length: pos(self.leg_length, 0.3, 2.0),
            girth: pos(self.girth, 0.3, 2.0),
            arm_drop: pos(self.arm_drop, -FRAC_PI_2 + 0.1, FRAC_PI_2 - 0.1),
            leg_spread: pos(self.leg_spread, 0.0, 0.6),
            tessellation: self.tessellation.clamp(1, 12),
        }
    }
}

enum Shape {
    Capsule { a: Vec3, b: Vec3, radius: f64, anchor_mid: bool },
    Sphere { center: Vec3, radius: f64 },
}

struct Part {
    joint: usize,
    shape: Shape,
    start_blend: Option<usize>,
    end_blend: Option<usize>,
}

struct Builder {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
    weights: Vec<Vec<(usize, f64)>>,
    faces: Vec<[u32; 3]>,
    anchors: Vec<Vec<usize>>,
    around: usize,
    level: usize,
}

const BLEND_ZONE: f64 = 0.3;

fn perpendicular_frame(axis: &Vec3) -> (Vec3, Vec3) {
    let reference = if axis.z.abs() > 0.9 { Vec3::x() } else { Vec3::z() };
    let u = axis.cross(&reference).normalize();
    let v = axis.cross(&u);
    (u, v)
}

impl Builder {
    /// Appends rings (center, radius) along `axis`; consecutive rings are
    /// stitched and optional poles close the ends. Returns ring start indices.
    fn tube(&mut self, rings: &[(Vec3, f64)], axis: &Vec3, poles: (Vec3, Vec3)) -> Vec<usize> {
        let (u, v) = perpendicular_frame(axis);
        let n = self.around;
        let first_pole = self.positions.len();
        self.positions.push(poles.0);
        self.normals.push(-axis);
        let mut starts = Vec::with_capacity(rings.len());
        for (center, radius) in rings {
            starts.push(self.positions.len());
            for a in 0..n {
                let phi = TAU * a as f64 / n as f64;
                let dir = u * phi.cos() + v * phi.sin();
                self.positions.push(center + dir * *radius);
                self.normals.push(dir);
            }
        }
        let last_pole = self.positions.len();
        self.positions.push(poles.1);
        self.normals.push(*axis);
        let idx = |ring: usize, a: usize| (starts[ring] + a % n) as u32;
        for a in 0..n {
            self.faces.push([first_pole as u32, idx(0, a + 1), idx(0, a)]);
        }
        for r in 0..rings.len() - 1 {
            for a in 0..n {
                self.faces.push([idx(r, a), idx(r, a + 1), idx(r + 1, a)]);
                self.faces.push([idx(r, a + 1), idx(r + 1, a + 1), idx(r + 1, a)]);
            }
        }
        let lr = rings.len() - 1;
        for a in 0..n {
            self.faces.push([last_pole as u32, idx(lr, a), idx(lr, a + 1)]);
        }
        starts
    }

    fn add_part(&mut self, part: &Part) {
        let first = self.positions.len();
        let level = self.level;
        let (axis_info, anchor_ring) = match part.shape {
            Shape::Capsule { a, b, radius, anchor_mid } => {
                let axis = (b - a).normalize();
                let len = (b - a).norm();
                let n_axis = 2 * level + 2;
                let caps = level + 2;
                let mut rings = Vec::new();
                for j in 1..=caps {
                    let theta = FRAC_PI_2 * j as f64 / (caps + 1) as f64;
                    rings.push((a - axis * radius * theta.cos(), radius * theta.sin()));
                }
                let cyl_start = rings.len();
                for i in 0..=n_axis {
                    rings.push((a + axis * (len * i as f64 / n_axis as f64), radius));
                }
                for j in (1..=caps).rev() {
                    let theta = FRAC_PI_2 * j as f64 / (caps + 1) as f64;
                    rings.push((b + axis * radius * theta.cos(), radius * theta.sin()));
                }
                let starts = self.tube(&rings, &axis, (a - axis * radius, b + axis * radius));
                let anchor = if anchor_mid { cyl_start + n_axis / 2 } else { cyl_start };
                (Some((a, axis, len)), starts[anchor])
            }
            Shape::Sphere { center, radius } => {
                let axis = -Vec3::y();
                let lat = 2 * level + 5;
                let rings: Vec<(Vec3, f64)> = (1..=lat)
                    .map(|j| {
                        let theta = PI * j as f64 / (lat + 1) as f64;
                        (center - axis * radius * theta.cos(), radius * theta.sin())
                    })
                    .collect();
                let starts = self.tube(&rings, &axis, (center - axis * radius, center + axis * radius));
                (None, starts[level + 2])
            }
        };
        self.anchors[part.joint] = (anchor_ring..anchor_ring + self.around).collect();
        for i in first..self.positions.len() {
            let s = match axis_info {
                Some((a, axis, len)) => ((self.positions[i] - a).dot(&axis) / len).clamp(0.0, 1.0),
                None => 0.5,
            };
            let mut w = vec![(part.joint, 1.0)];
            if let (Some(j), true) = (part.start_blend, s < BLEND_ZONE) {
                let t = 0.5 * (1.0 - s / BLEND_ZONE);
                w[0].1 -= t;
                w.push((j, t));
            }
            if let (Some(j), true) = (part.end_blend, s > 1.0 - BLEND_ZONE) {
                let t = 0.5 * (s - (1.0 - BLEND_ZONE)) / BLEND_ZONE;
                w[0].1 -= t;
                w.push((j, t));
            }
            self.weights.push(w);
        }
    }
}

fn skeleton(cfg: &SyntheticBodyConfig) -> [Vec3; 24] {
    let mut j = [Vec3::zeros(); 24];
    let leg_l = Vec3::new(cfg.leg_spread.sin(), -cfg.leg_spread.cos(), 0.0);
    let leg_r = Vec3::new(-leg_l.x, leg_l.y, 0.0);
    let arm_l = Vec3::new(cfg.arm_drop.cos(), -cfg.arm_drop.sin(), 0.0);
    let arm_r = Vec3::new(-arm_l.x, arm_l.y, 0.0);
    let (thigh, shin) = (0.42 * cfg.leg_length, 0.40 * cfg.leg_length);
    let (upper, fore) = (0.27 * cfg.arm_length, 0.25 * cfg.arm_length);
    j[0] = Vec3::zeros();
    j[1] = Vec3::new(0.09, 0.0, 0.0);
    j[2] = Vec3::new(-0.09, 0.0, 0.0);
    j[3] = Vec3::new(0.0, 0.10, 0.0);
    j[4] = j[1] + leg_l * thigh;
    j[5] = j[2] + leg_r * thigh;
    j[6] = Vec3::new(0.0, 0.22, 0.0);
    j[7] = j[4] + leg_l * shin;
    j[8] = j[5] + leg_r * shin;
    j[9] = Vec3::new(0.0, 0.34, 0.0);
    j[10] = j[7] + Vec3::new(0.0, -0.05, 0.10);
    j[11] = j[8] + Vec3::new(0.0, -0.05, 0.10);
    j[12] = Vec3::new(0.0, 0.48, 0.0);
    j[13] = Vec3::new(0.07, 0.44, 0.0);
    j[14] = Vec3::new(-0.07, 0.44, 0.0);
    j[15] = Vec3::new(0.0, 0.62, 0.0);
    j[16] = Vec3::new(0.17, 0.44, 0.0);
    j[17] = Vec3::new(-0.17, 0.44, 0.0);
    j[18] = j[16] + arm_l * upper;
    j[19] = j[17] + arm_r * upper;
    j[20] = j[18] + arm_l * fore;
    j[21] = j[19] + arm_r * fore;
    j[22] = j[20] + arm_l * 0.07;
    j[23] = j[21] + arm_r * 0.07;
    for p in j.iter_mut() {
        *p *= cfg.scale;
    }
    j
}

fn parts(cfg: &SyntheticBodyConfig, j: &[Vec3; 24]) -> Vec<Part> {
    let s = cfg.scale;
    let g = cfg.girth * s;
    let cap = |joint: usize, a: Vec3, b: Vec3, r: f64, start: Option<usize>, end: Option<usize>| Part {
        joint,
        shape: Shape::Capsule { a, b, radius: r * g, anchor_mid: false },
        start_blend: start,
        end_blend: end,
    };
    let hand_l = (j[22] - j[20]).normalize() * 0.08 * s;
    let hand_r = (j[23] - j[21]).normalize() * 0.08 * s;
    let toe = Vec3::new(0.0, 0.0, 0.07 * s);
    vec![
        Part {
            joint: 0,
            shape: Shape::Capsule { a: j[2], b: j[1], radius: 0.085 * g, anchor_mid: true },
            start_blend: Some(2),
            end_blend: Some(1),
        },
        cap(1, j[1], j[4], 0.07, Some(0), Some(4)),
        cap(2, j[2], j[5], 0.07, Some(0), Some(5)),
        cap(3, j[3], j[6], 0.10, Some(0), Some(6)),
        cap(4, j[4], j[7], 0.05, Some(1), Some(7)),
        cap(5, j[5], j[8], 0.05, Some(2), Some(8)),
        cap(6, j[6], j[9], 0.11, Some(3), Some(9)),
        cap(7, j[7], j[10], 0.04, Some(4), Some(10)),
        cap(8, j[8], j[11], 0.04, Some(5), Some(11)),
        cap(9, j[9], j[12], 0.11, Some(6), Some(12)),
        cap(10, j[10], j[10] + toe, 0.035, Some(7), None),
        cap(11, j[11], j[11] + toe, 0.035, Some(8), None),
        cap(12, j[12], j[15], 0.05, Some(9), Some(15)),
        cap(13, j[13], j[16], 0.05, Some(9), Some(16)),
        cap(14, j[14], j[17], 0.05, Some(9), Some(17)),
        Part { joint: 15, shape: Shape::Sphere { center: j[15], radius: 0.10 * s }, start_blend: None, end_blend: None },
        cap(16, j[16], j[18], 0.05, Some(13), Some(18)),
        cap(17, j[17], j[19], 0.05, Some(14), Some(19)),
        cap(18, j[18], j[20], 0.04, Some(16), Some(20)),
        cap(19, j[19], j[21], 0.04, Some(17), Some(21)),
        cap(20, j[20], j[22], 0.035, Some(18), Some(22)),
        cap(21, j[21], j[23], 0.035, Some(19), Some(23)),
        cap(22, j[22], j[22] + hand_l, 0.03, Some(20), None),
        cap(23, j[23], j[23] + hand_r, 0.03, Some(21), None),
    ]
}

fn shape_direction(s: usize, p: &Vec3, n: &Vec3) -> Vec3 {
    match s {
        0 => p * 0.05,
        1 => n * 0.01,
        2 => Vec3::new(0.0, p.y * 0.04, 0.0),
        3 => Vec3::new(p.x * 0.05, 0.0, 0.0),
        4 => Vec3::new(0.0, 0.0, p.z * 0.1),
        _ => n * (0.005 * ((s as f64 - 4.0) * (4.0 * p.y + 3.0 * p.x)).cos()),
    }
}

pub fn make_synthetic_body(config: &SyntheticBodyConfig) -> ArticulatedBody {
    let cfg = config.clamped();
    let joints = skeleton(&cfg);
    let level = cfg.tessellation as usize;
    let mut b = Builder {
        positions: Vec::new(),
        normals: Vec::new(),
        weights: Vec::new(),
        faces: Vec::new(),
        anchors: vec![Vec::new(); 24],
        around: 8 + 4 * level,
        level,
    };
    for part in parts(&cfg, &joints) {
        b.add_part(&part);
    }
    let n = b.positions.len();
    let k = 24;

    let mut skinning_weights = vec![0.0f32; n * k];
    for (i, w) in b.weights.iter().enumerate() {
        let total: f64 = w.iter().map(|(_, x)| x).sum();
        for &(j, x) in w {
            skinning_weights[i * k + j] += (x / total) as f32;
        }
    }
    let mut joint_regressor = vec![0.0f32; k * n];
    for (j, ring) in b.anchors.iter().enumerate() {
        let w = 1.0 / ring.len() as f64;
        for &i in ring {
            joint_regressor[j * n + i] = w as f32;
        }
    }
    let mut shape_dirs = vec![0.0f32; n * 3 * NUM_SHAPE];
    for i in 0..n {
        for s in 0..NUM_SHAPE {
            let d = shape_direction(s, &b.positions[i], &b.normals[i]);
            for axis in 0..3 {
                shape_dirs[(i * 3 + axis) * NUM_SHAPE + s] = d[axis] as f32;
            }
        }
    }
    let data = BodyData {
        template: b.positions.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect(),
        faces: b.faces,
        shape_dirs,
        num_shape: NUM_SHAPE,
        pose_dirs: Vec::new(),
        num_pose_features: 0,
        joint_regressor,
        skinning_weights,
        parents: SMPL_PARENTS.to_vec(),
    };
    ArticulatedBody::new(data).expect("synthetic body satisfies all invariants")
}
