//! Parametric articulated body: template mesh, blendshapes, joint regressor,
//! skinning weights and kinematic tree.
//!
//! Arrays are held in single precision so the archive round-trips bit-exactly;
//! all evaluation happens in `f64`.

mod archive;
mod kinematics;
mod synthetic;

pub use archive::{decode_body, encode_body, encode_body_data, load_body_archive, save_body_archive, BODY_MAGIC};
pub use kinematics::{
    forward_kinematics, joint_locations, pose_features, rest_pose, rodrigues, skin, BodyParams, PosedMesh,
};
pub use synthetic::{make_synthetic_body, SyntheticBodyConfig, SMPL_JOINT_NAMES, SMPL_PARENTS};

use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

/// Parent index stored for the root joint.
pub const ROOT_PARENT: u32 = u32::MAX;

const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BodyError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed body archive: {0}")]
    Parse(String),
    #[error("{what}: expected {expected} values, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("skinning weight row {row}: {reason}")]
    SkinningWeights { row: usize, reason: String },
    #[error("joint regressor row {row}: {reason}")]
    JointRegressor { row: usize, reason: String },
    #[error("kinematic tree: {0}")]
    Tree(String),
    #[error("face {face} references vertex {index} >= {count}")]
    FaceIndex { face: usize, index: u32, count: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid body parameters: {0}")]
    Params(String),
    #[error("blended transform of vertex {vertex} is singular")]
    SingularTransform { vertex: usize },
}

/// Raw arrays of an articulated body, before validation.
///
/// Layouts: `shape_dirs[(i * 3 + axis) * S + s]`, `pose_dirs[(i * 3 + axis) * P + p]`,
/// `joint_regressor[k * N + i]`, `skinning_weights[i * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyData {
    pub template: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub shape_dirs: Vec<f32>,
    pub num_shape: usize,
    pub pose_dirs: Vec<f32>,
    pub num_pose_features: usize,
    pub joint_regressor: Vec<f32>,
    pub skinning_weights: Vec<f32>,
    pub parents: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedBody {
    data: BodyData,
    /// Joints in root-to-leaf order.
    order: Vec<usize>,
}

impl ArticulatedBody {
    /// Validates every invariant and takes ownership of the arrays.
    ///
    /// Pose blendshapes may be absent (`num_pose_features == 0`); otherwise
    /// their count must be `9 * (K - 1)`.
    pub fn new(data: BodyData) -> Result<Self, BodyError> {
        let n = data.template.len();
        let k = data.parents.len();
        if k == 0 {
            return Err(BodyError::Tree("no joints".into()));
        }
        let check = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(BodyError::Dimension { what, expected, got })
            }
        };
        check("shape_dirs", n * 3 * data.num_shape, data.shape_dirs.len())?;
        if data.num_pose_features != 0 {
            check("pose feature count", 9 * (k - 1), data.num_pose_features)?;
        }
        check("pose_dirs", n * 3 * data.num_pose_features, data.pose_dirs.len())?;
        check("joint_regressor", k * n, data.joint_regressor.len())?;
        check("skinning_weights", n * k, data.skinning_weights.len())?;

        let finite = |xs: &[f32]| xs.iter().all(|v| v.is_finite());
        if !data.template.iter().all(|v| finite(v)) {
            return Err(BodyError::NonFinite("template"));
        }
        if !finite(&data.shape_dirs) {
            return Err(BodyError::NonFinite("shape_dirs"));
        }
        if !finite(&data.pose_dirs) {
            return Err(BodyError::NonFinite("pose_dirs"));
        }

        for (i, row) in data.skinning_weights.chunks_exact(k).enumerate() {
            check_convex_row(row).map_err(|reason| BodyError::SkinningWeights { row: i, reason })?;
        }
        if n > 0 {
            for (j, row) in data.joint_regressor.chunks_exact(n).enumerate() {
                check_convex_row(row).map_err(|reason| BodyError::JointRegressor { row: j, reason })?;
            }
        }
        for (fi, face) in data.faces.iter().enumerate() {
            for &index in face {
                if index as usize >= n {
                    return Err(BodyError::FaceIndex { face: fi, index, count: n });
                }
            }
        }
        let order = tree_order(&data.parents)?;
        Ok(Self { data, order })
    }

    pub fn data(&self) -> &BodyData {
        &self.data
    }

    pub fn vertex_count(&self) -> usize {
        self.data.template.len()
    }

    pub fn joint_count(&self) -> usize {
        self.data.parents.len()
    }

    pub fn shape_count(&self) -> usize {
        self.data.num_shape
    }

    pub fn pose_feature_count(&self) -> usize {
        self.data.num_pose_features
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.data.faces
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        let p = self.data.parents[joint];
        (p != ROOT_PARENT).then_some(p as usize)
    }

    /// Root-to-leaf joint order.
    pub fn joint_order(&self) -> &[usize] {
        &self.order
    }

    pub fn template_vertex(&self, i: usize) -> Vec3 {
        let v = self.data.template[i];
        Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64)
    }

    pub fn template_vertices(&self) -> Vec<Vec3> {
        (0..self.vertex_count()).map(|i| self.template_vertex(i)).collect()
    }

    #[inline]
    pub fn skinning_weight(&self, vertex: usize, joint: usize) -> f64 {
        self.data.skinning_weights[vertex * self.joint_count() + joint] as f64
    }

    #[inline]
    pub fn regressor_weight(&self, joint: usize, vertex: usize) -> f64 {
        self.data.joint_regressor[joint * self.vertex_count() + vertex] as f64
    }

    pub fn template_bounds(&self) -> Aabb {
        Aabb::from_points(self.template_vertices().iter())
    }

    /// Vertical extent of the template.
    pub fn height(&self) -> f64 {
        self.template_bounds().extent().y
    }
}

fn check_convex_row(row: &[f32]) -> Result<(), String> {
    let mut sum = 0.0f64;
    for (j, &w) in row.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(format!("entry {j} = {w} is negative or non-finite"));
        }
        sum += w as f64;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(format!("sums to {sum}, expected 1"));
    }
    Ok(())
}

/// Breadth-first order from joint 0; rejects cycles, multiple roots and
/// unreachable joints.
fn tree_order(parents: &[u32]) -> Result<Vec<usize>, BodyError> {
    let k = parents.len();
    if parents[0] != ROOT_PARENT {
        return Err(BodyError::Tree("joint 0 must be the root".into()));
    }
    let mut children = vec![Vec::new(); k];
    for (j, &p) in parents.iter().enumerate().skip(1) {
        if p == ROOT_PARENT {
            return Err(BodyError::Tree(format!("joint {j} is a second root")));
        }
        if p as usize >= k || p as usize == j {
            return Err(BodyError::Tree(format!("joint {j} has invalid parent {p}")));
        }
        children[p as usize].push(j);
    }
    let mut order = Vec::with_capacity(k);
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(j) = queue.pop_front() {
        order.push(j);
        queue.extend(children[j].iter().copied());
    }
    if order.len() != k {
        return Err(BodyError::Tree("cycle or unreachable joint".into()));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_joint_data() -> BodyData {
        BodyData {
            template: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            faces: vec![[0, 1, 2]],
            shape_dirs: vec![],
            num_shape: 0,
            pose_dirs: vec![],
            num_pose_features: 0,
            joint_regressor: vec![1.0, 0.0, 0.0, 0.0, 0.5, 0.5],
            skinning_weights: vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0],
            parents: vec![ROOT_PARENT, 0],
        }
    }

    #[test]
    fn accepts_valid() {
        let body = ArticulatedBody::new(two_joint_data()).unwrap();
        assert_eq!(body.vertex_count(), 3);
        assert_eq!(body.joint_order(), &[0, 1]);
    }

    #[test]
    fn negative_weight_names_row() {
        let mut d = two_joint_data();
        d.skinning_weights[2] = -0.5;
        d.skinning_weights[3] = 1.5;
        match ArticulatedBody::new(d) {
            Err(BodyError::SkinningWeights { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weight_row_sum_checked() {
        let mut d = two_joint_data();
        d.skinning_weights[5] = 0.9;
        assert!(matches!(ArticulatedBody::new(d), Err(BodyError::SkinningWeights { row: 2, .. })));
    }

    #[test]
    fn regressor_rows_checked() {
        let mut d = two_joint_data();
        d.joint_regressor[4] = 0.2;
        assert!(matches!(ArticulatedBody::new(d), Err(BodyError::JointRegressor { row: 1, .. })));
    }

    #[test]
    fn cycle_rejected() {
        let mut d = two_joint_data();
        d.parents = vec![ROOT_PARENT, 1];
        assert!(matches!(ArticulatedBody::new(d), Err(BodyError::Tree(_))));
        let mut d = two_joint_data();
        d.parents = vec![1, 0];
        assert!(matches!(ArticulatedBody::new(d), Err(BodyError::Tree(_))));
    }

    #[test]
    fn face_index_checked() {
        let mut d = two_joint_data();
        d.faces.push([0, 1, 3]);
        assert!(matches!(ArticulatedBody::new(d), Err(BodyError::FaceIndex { face: 1, index: 3, .. })));
    }

    #[test]
    fn pose_dirs_dimension() {
        let mut d = two_joint_data();
        d.num_pose_features = 9;
        assert!(matches!(ArticulatedBody::new(d), Err(BodyError::Dimension { what: "pose_dirs", .. })));
        let mut d = two_joint_data();
        d.num_pose_features = 4;
        assert!(matches!(ArticulatedBody::new(d), Err(BodyError::Dimension { .. })));
    }
}
