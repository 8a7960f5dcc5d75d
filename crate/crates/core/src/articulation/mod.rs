//! Pose articulation of a canonical field.
//!
//! Each observation-space sample is mapped to canonical space with the
//! inverse skinning transform of its nearest posed vertex, and its density is
//! scaled by `w_d = sigmoid(-(d - d') / a)`, where `d` is the observation-space
//! distance to that vertex and `d'` is predicted by the density weighting
//! network from the encoded canonical sample and vertex positions.

mod kdtree;

use serde::{Deserialize, Serialize};

use crate::body::PosedMesh;
use crate::field::{Deformation, FieldError, ParamBlock, WarpSample};
use crate::geometry::{Aabb, Sphere, Vec3};
use crate::nn::{sigmoid, Mlp, PositionalEncoding};

pub use kdtree::{nearest_brute_force, VertexIndex};

#[inline]
fn transform_point(m: &nalgebra::Matrix4<f64>, p: &Vec3) -> Vec3 {
    (m * p.push(1.0)).xyz()
}

pub fn build_vertex_index(mesh: &PosedMesh) -> VertexIndex {
    VertexIndex::build(&mesh.vertices)
}

/// Ray-marching bounds of a posed body: a sphere around the root joint that
/// encloses every vertex with `margin` to spare. Rigidly moving the body and
/// the camera together leaves every ray interval unchanged.
pub fn render_bounds(mesh: &PosedMesh, margin: f64) -> Sphere {
    let center = mesh.joints[0];
    let radius = mesh.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
    Sphere { center, radius: radius + margin }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canonicalized {
    pub point: Vec3,
    /// Canonical position of the nearest vertex.
    pub vertex_point: Vec3,
    /// Observation-space distance to the nearest vertex.
    pub distance: f64,
    pub vertex: usize,
}

/// Panics if the index is empty; the index must be built from `mesh`.
pub fn canonicalize(p: &Vec3, mesh: &PosedMesh, index: &VertexIndex) -> Canonicalized {
    let (vertex, distance) = index.nearest(p).expect("vertex index is empty");
    let t = &mesh.vertex_transform_inverses[vertex];
    Canonicalized {
        point: transform_point(t, p),
        vertex_point: transform_point(t, &mesh.vertices[vertex]),
        distance,
        vertex,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrnConfig {
    pub frequencies: usize,
    pub hidden: Vec<usize>,
    /// Sharpness `a`, in observation-space length units.
    pub sharpness: f64,
    /// Initial `d'`.
    pub shell_radius: f64,
    /// Scale of the output layer weights at initialization; 0 makes `d'`
    /// exactly `shell_radius` everywhere.
    pub output_init_scale: f64,
    pub seed: u64,
}

impl DrnConfig {
    /// `a` is 2% of the body height and the shell radius is `3a`.
    pub fn for_body_height(height: f64) -> Self {
        let a = 0.02 * height;
        Self { frequencies: 6, hidden: vec![64; 3], sharpness: a, shell_radius: 3.0 * a, output_init_scale: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(FieldError::Config("sharpness a must be positive".into()));
        }
        if !self.shell_radius.is_finite() || !self.output_init_scale.is_finite() || self.output_init_scale < 0.0 {
            return Err(FieldError::Config("shell radius and output scale must be finite".into()));
        }
        if self.hidden.contains(&0) || self.frequencies > 30 {
            return Err(FieldError::Config("invalid weighting network architecture".into()));
        }
        Ok(())
    }

    fn parts(&self) -> (PositionalEncoding, Mlp) {
        let pe = PositionalEncoding { frequencies: self.frequencies };
        let mut sizes = vec![2 * pe.output_dim(3)];
        sizes.extend(&self.hidden);
        sizes.push(1);
        (pe, Mlp::new(sizes))
    }

    pub fn param_count(&self) -> usize {
        self.parts().1.param_count()
    }
}

/// The density weighting network: configuration and 32-bit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityWeightNet {
    config: DrnConfig,
    params: Vec<f32>,
}

pub const DRN_BLOCK: &str = "drn";

impl DensityWeightNet {
    pub fn new(config: DrnConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let (_, mlp) = config.parts();
        let mut p = mlp.init(config.seed, config.output_init_scale);
        p[mlp.output_bias_offset()] = config.shell_radius;
        Ok(Self { params: p.iter().map(|&v| v as f32).collect(), config })
    }

    pub fn from_params(config: DrnConfig, params: Vec<f32>) -> Result<Self, FieldError> {
        config.validate()?;
        let expected = config.param_count();
        if params.len() != expected {
            return Err(FieldError::ParamCount { expected, got: params.len() });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DrnConfig {
        &self.config
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&p| p as f64).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), FieldError> {
        if params.len() != self.params.len() {
            return Err(FieldError::ParamCount { expected: self.params.len(), got: params.len() });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        for (d, s) in self.params.iter_mut().zip(params) {
            *d = *s as f32;
        }
        Ok(())
    }

    pub fn evaluator(&self) -> DrnEval {
        DrnEval::new(self.config.clone(), self.params_f64()).expect("validated network")
    }

    pub fn to_block(&self) -> ParamBlock {
        ParamBlock {
            name: DRN_BLOCK.into(),
            config: toml::to_string(&self.config).expect("config serializes"),
            params: self.params.clone(),
        }
    }

    pub fn from_block(block: &ParamBlock) -> Result<Self, FieldError> {
        if block.name != DRN_BLOCK {
            return Err(FieldError::Format(format!("expected block '{DRN_BLOCK}', found '{}'", block.name)));
        }
        let config: DrnConfig = toml::from_str(&block.config).map_err(|e| FieldError::Format(format!("drn config: {e}")))?;
        Self::from_params(config, block.params.clone())
    }
}

#[derive(Debug, Clone)]
pub struct DrnEval {
    config: DrnConfig,
    pe: PositionalEncoding,
    mlp: Mlp,
    params: Vec<f64>,
}

impl DrnEval {
    pub fn new(config: DrnConfig, params: Vec<f64>) -> Result<Self, FieldError> {
        config.validate()?;
        let (pe, mlp) = config.parts();
        if params.len() != mlp.param_count() {
            return Err(FieldError::ParamCount { expected: mlp.param_count(), got: params.len() });
        }
        Ok(Self { config, pe, mlp, params })
    }

    pub fn config(&self) -> &DrnConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn input(&self, p: &Vec3, v: &Vec3) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.mlp.input_dim());
        self.pe.encode(&[p.x, p.y, p.z], &mut x);
        self.pe.encode(&[v.x, v.y, v.z], &mut x);
        x
    }

    /// Predicted reference distance `d'`.
    pub fn reference_distance(&self, p_canonical: &Vec3, v_canonical: &Vec3) -> f64 {
        let mut acts = Vec::with_capacity(self.mlp.activation_len());
        self.mlp.forward(&self.params, &self.input(p_canonical, v_canonical), &mut acts)[0]
    }

    pub fn weight(&self, p_canonical: &Vec3, v_canonical: &Vec3, distance: f64) -> f64 {
        density_weight(distance, self.reference_distance(p_canonical, v_canonical), self.config.sharpness)
    }

    /// Accumulates `d_weight * dw/dparams` into `grad`.
    pub fn backward(&self, p_canonical: &Vec3, v_canonical: &Vec3, distance: f64, d_weight: f64, grad: &mut [f64]) {
        let mut acts = Vec::with_capacity(self.mlp.activation_len());
        let a = self.config.sharpness;
        let d_ref = self.mlp.forward(&self.params, &self.input(p_canonical, v_canonical), &mut acts)[0];
        let w = density_weight(distance, d_ref, a);
        // dw/dd' = w (1 - w) / a
        self.mlp.backward(&self.params, &acts, &[d_weight * w * (1.0 - w) / a], grad, None);
    }
}

/// `sigmoid(-(d - d_ref) / a)`.
#[inline]
pub fn density_weight(distance: f64, reference: f64, sharpness: f64) -> f64 {
    sigmoid(-(distance - reference) / sharpness)
}

/// Nearest-vertex canonicalization with learned density weighting.
pub struct ArticulatedDeformation<'a> {
    pub mesh: &'a PosedMesh,
    pub index: &'a VertexIndex,
    pub drn: &'a DrnEval,
    /// Canonical region with non-zero field density; samples mapped outside it
    /// skip the weighting network.
    pub canonical_bounds: Option<Aabb>,
}

impl Deformation for ArticulatedDeformation<'_> {
    fn param_count(&self) -> usize {
        self.drn.param_count()
    }

    fn warp(&self, p: &Vec3) -> WarpSample {
        let c = canonicalize(p, self.mesh, self.index);
        if self.canonical_bounds.is_some_and(|b| !b.contains(&c.point)) {
            return WarpSample { canonical: c.point, weight: 0.0 };
        }
        WarpSample { canonical: c.point, weight: self.drn.weight(&c.point, &c.vertex_point, c.distance) }
    }

    fn backward(&self, p: &Vec3, d_weight: f64, grad: &mut [f64]) {
        let c = canonicalize(p, self.mesh, self.index);
        if self.canonical_bounds.is_some_and(|b| !b.contains(&c.point)) {
            return;
        }
        self.drn.backward(&c.point, &c.vertex_point, c.distance, d_weight, grad);
    }
}
