use nalgebra::{Matrix3, Matrix4};

use super::{ArticulatedBody, BodyError};
use crate::geometry::Vec3;

const SMALL_ANGLE: f64 = 1e-8;

/// Shape, pose, and global placement of a body.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    pub betas: Vec<f64>,
    /// Axis-angle per joint, radians.
    pub pose: Vec<Vec3>,
    pub scale: f64,
    pub translation: Vec3,
}

impl BodyParams {
    pub fn zero(body: &ArticulatedBody) -> Self {
        Self {
            betas: vec![0.0; body.shape_count()],
            pose: vec![Vec3::zeros(); body.joint_count()],
            scale: 1.0,
            translation: Vec3::zeros(),
        }
    }

    pub fn with_pose(body: &ArticulatedBody, pose: Vec<Vec3>) -> Self {
        Self { pose, ..Self::zero(body) }
    }

    pub fn validate(&self, body: &ArticulatedBody) -> Result<(), BodyError> {
        check_betas(body, &self.betas)?;
        check_pose(body, &self.pose)?;
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(BodyError::Params(format!("global scale {} must be positive", self.scale)));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(BodyError::Params("translation is not finite".into()));
        }
        Ok(())
    }
}

fn check_betas(body: &ArticulatedBody, betas: &[f64]) -> Result<(), BodyError> {
    if betas.len() != body.shape_count() {
        return Err(BodyError::Dimension { what: "betas", expected: body.shape_count(), got: betas.len() });
    }
    if !betas.iter().all(|b| b.is_finite()) {
        return Err(BodyError::Params("betas are not finite".into()));
    }
    Ok(())
}

fn check_pose(body: &ArticulatedBody, pose: &[Vec3]) -> Result<(), BodyError> {
    if pose.len() != body.joint_count() {
        return Err(BodyError::Dimension { what: "pose", expected: body.joint_count(), got: pose.len() });
    }
    if !pose.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(BodyError::Params("pose is not finite".into()));
    }
    Ok(())
}

#[inline]
fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of an axis-angle vector. Below a magnitude of 1e-8 the
/// second-order Taylor expansion is used.
pub fn rodrigues(axis_angle: &Vec3) -> Matrix3<f64> {
    let theta = axis_angle.norm();
    let k = skew(axis_angle);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let kn = k / theta;
    Matrix3::identity() + theta.sin() * kn + (1.0 - theta.cos()) * kn * kn
}

/// Concatenated `R(pose_k) - I` entries (row-major) for joints `1..K`.
pub fn pose_features(pose: &[Vec3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(9 * pose.len().saturating_sub(1));
    for aa in pose.iter().skip(1) {
        let r = rodrigues(aa) - Matrix3::identity();
        for row in 0..3 {
            for col in 0..3 {
                out.push(r[(row, col)]);
            }
        }
    }
    out
}

/// Template plus shape and pose blendshape offsets.
pub fn rest_pose(body: &ArticulatedBody, betas: &[f64], pose: &[Vec3]) -> Result<Vec<Vec3>, BodyError> {
    check_betas(body, betas)?;
    check_pose(body, pose)?;
    let d = body.data();
    let s = d.num_shape;
    let p = d.num_pose_features;
    let feats = if p > 0 { pose_features(pose) } else { Vec::new() };
    let use_shape = betas.iter().any(|&b| b != 0.0);
    let use_pose = feats.iter().any(|&f| f != 0.0);
    let mut out = body.template_vertices();
    if !use_shape && !use_pose {
        return Ok(out);
    }
    for (i, v) in out.iter_mut().enumerate() {
        for axis in 0..3 {
            let row = i * 3 + axis;
            let mut offset = 0.0;
            if use_shape {
                let dirs = &d.shape_dirs[row * s..(row + 1) * s];
                offset += dirs.iter().zip(betas).map(|(&w, &b)| w as f64 * b).sum::<f64>();
            }
            if use_pose {
                let dirs = &d.pose_dirs[row * p..(row + 1) * p];
                offset += dirs.iter().zip(&feats).map(|(&w, &f)| w as f64 * f).sum::<f64>();
            }
            v[axis] += offset;
        }
    }
    Ok(out)
}

fn regress(body: &ArticulatedBody, rest: &[Vec3]) -> Vec<Vec3> {
    let n = body.vertex_count();
    (0..body.joint_count())
        .map(|k| {
            let row = &body.data().joint_regressor[k * n..(k + 1) * n];
            row.iter()
                .zip(rest)
                .filter(|(w, _)| **w != 0.0)
                .fold(Vec3::zeros(), |acc, (&w, v)| acc + v * w as f64)
        })
        .collect()
}

/// Rest joint positions `J(beta)`: the regressor applied to the zero-pose rest mesh.
pub fn joint_locations(body: &ArticulatedBody, betas: &[f64]) -> Result<Vec<Vec3>, BodyError> {
    let zero = vec![Vec3::zeros(); body.joint_count()];
    let rest = rest_pose(body, betas, &zero)?;
    Ok(regress(body, &rest))
}

fn rigid(rotation: &Matrix3<f64>, translation: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

fn fk_from_joints(body: &ArticulatedBody, joints: &[Vec3], pose: &[Vec3]) -> Vec<Matrix4<f64>> {
    let k = body.joint_count();
    let mut world = vec![Matrix4::identity(); k];
    for &j in body.joint_order() {
        let r = rodrigues(&pose[j]);
        world[j] = match body.parent(j) {
            None => rigid(&r, &joints[j]),
            Some(p) => world[p] * rigid(&r, &(joints[j] - joints[p])),
        };
    }
    world
        .iter()
        .zip(joints)
        .map(|(a, j)| a * rigid(&Matrix3::identity(), &(-j)))
        .collect()
}

/// Per-joint rigid transforms `G_k` mapping canonical (rest) points to the
/// posed frame. Global scale and translation are not included.
pub fn forward_kinematics(body: &ArticulatedBody, betas: &[f64], pose: &[Vec3]) -> Result<Vec<Matrix4<f64>>, BodyError> {
    check_pose(body, pose)?;
    let joints = joint_locations(body, betas)?;
    Ok(fk_from_joints(body, &joints, pose))
}

#[derive(Debug, Clone)]
pub struct PosedMesh {
    /// Observation-space vertices.
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Rest-pose (canonical) vertices the transforms were applied to.
    pub rest_vertices: Vec<Vec3>,
    /// `G_k`, without global placement.
    pub joint_transforms: Vec<Matrix4<f64>>,
    /// Observation-space joint positions, including global placement.
    pub joints: Vec<Vec3>,
    /// Rest joint positions `J(beta)`.
    pub rest_joints: Vec<Vec3>,
    /// Global placement followed by the blended joint transform.
    pub vertex_transforms: Vec<Matrix4<f64>>,
    pub vertex_transform_inverses: Vec<Matrix4<f64>>,
    pub params: BodyParams,
}

impl PosedMesh {
    pub fn placement(&self) -> Matrix4<f64> {
        placement(self.params.scale, &self.params.translation)
    }

    /// World rotation of joint `k` (placement scale excluded).
    pub fn joint_rotation(&self, k: usize) -> Matrix3<f64> {
        self.joint_transforms[k].fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

fn placement(scale: f64, translation: &Vec3) -> Matrix4<f64> {
    rigid(&(Matrix3::identity() * scale), translation)
}

#[inline]
pub(crate) fn transform_point(m: &Matrix4<f64>, p: &Vec3) -> Vec3 {
    m.fixed_view::<3, 3>(0, 0) * p + m.fixed_view::<3, 1>(0, 3)
}

/// Linear blend skinning with matrix blending: each vertex transform is the
/// placement composed with the weight-blended joint transforms.
pub fn skin(body: &ArticulatedBody, params: &BodyParams) -> Result<PosedMesh, BodyError> {
    params.validate(body)?;
    let k = body.joint_count();
    let rest = rest_pose(body, &params.betas, &params.pose)?;
    let zero = vec![Vec3::zeros(); k];
    let rest_joints = if params.pose.iter().all(|p| *p == Vec3::zeros()) {
        regress(body, &rest)
    } else {
        regress(body, &rest_pose(body, &params.betas, &zero)?)
    };
    let g = fk_from_joints(body, &rest_joints, &params.pose);
    let place = placement(params.scale, &params.translation);

    let mut vertex_transforms = Vec::with_capacity(rest.len());
    let mut inverses = Vec::with_capacity(rest.len());
    let mut vertices = Vec::with_capacity(rest.len());
    for (i, v) in rest.iter().enumerate() {
        let row = &body.data().skinning_weights[i * k..(i + 1) * k];
        let total: f64 = row.iter().map(|&w| w as f64).sum();
        let mut blended = Matrix4::zeros();
        for (j, &w) in row.iter().enumerate() {
            if w != 0.0 {
                blended += g[j] * (w as f64 / total);
            }
        }
        let m = place * blended;
        let inv = m.try_inverse().ok_or(BodyError::SingularTransform { vertex: i })?;
        vertices.push(transform_point(&m, v));
        vertex_transforms.push(m);
        inverses.push(inv);
    }
    let joints = g
        .iter()
        .zip(&rest_joints)
        .map(|(gk, j)| transform_point(&place, &transform_point(gk, j)))
        .collect();
    Ok(PosedMesh {
        vertices,
        faces: body.faces().to_vec(),
        rest_vertices: rest,
        joint_transforms: g,
        joints,
        rest_joints,
        vertex_transforms,
        vertex_transform_inverses: inverses,
        params: params.clone(),
    })
}
