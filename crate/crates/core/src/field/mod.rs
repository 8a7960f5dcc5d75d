//! Trainable radiance field over canonical space and its differentiable
//! volume renderer.
//!
//! Density is `density_scale * softplus(raw + density_bias)` and features are
//! `sigmoid(raw)`, where `raw` is the network output. Outside the field's
//! bounding box the density is zero.

mod checkpoint;
mod grid;
pub(crate) mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};
use crate::nn::{sigmoid, softplus, Mlp, PositionalEncoding};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ParamBlock, FIELD_MAGIC};
pub use grid::GridEncoding;
pub use render::{
    backprop_render, generate_rays, render, Deformation, RayBatch, RenderGrads, RenderOutput, Sampling, WarpSample,
    CHUNK_RAYS,
};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid field config: {0}")]
    Config(String),
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error("render cache does not match: {0}")]
    CacheMismatch(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Encoding {
    /// Sinusoidal positional encoding with `frequencies` octaves.
    Frequency { frequencies: usize },
    /// Dense multiresolution grid.
    Grid { resolutions: Vec<usize>, features: usize, init_scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub encoding: Encoding,
    pub hidden: Vec<usize>,
    pub channels: usize,
    pub density_bias: f64,
    pub density_scale: f64,
    /// Scale of the output layer at initialization.
    pub output_init_scale: f64,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            encoding: Encoding::Frequency { frequencies: 10 },
            hidden: vec![64; 4],
            channels: 4,
            density_bias: -5.0,
            density_scale: 1.0,
            output_init_scale: 0.01,
            bounds_min: [-1.0; 3],
            bounds_max: [1.0; 3],
            seed: 0,
        }
    }
}

impl FieldConfig {
    /// Grid-backed configuration sized for desk-scale training.
    pub fn desk_grid(bounds: &Aabb, seed: u64) -> Self {
        Self {
            encoding: Encoding::Grid { resolutions: vec![8, 16, 32, 48], features: 2, init_scale: 1e-4 },
            hidden: vec![16],
            channels: 4,
            density_bias: -8.0,
            density_scale: 20.0,
            output_init_scale: 1.0,
            bounds_min: bounds.min.into(),
            bounds_max: bounds.max.into(),
            seed,
        }
    }

    pub fn with_bounds(mut self, bounds: &Aabb) -> Self {
        self.bounds_min = bounds.min.into();
        self.bounds_max = bounds.max.into();
        self
    }

    pub fn bounds(&self) -> Aabb {
        Aabb { min: Vec3::from(self.bounds_min), max: Vec3::from(self.bounds_max) }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let err = |m: &str| Err(FieldError::Config(m.into()));
        if self.channels == 0 {
            return err("channels must be positive");
        }
        if self.hidden.contains(&0) {
            return err("hidden widths must be positive");
        }
        if !(self.density_scale > 0.0 && self.density_scale.is_finite() && self.density_bias.is_finite()) {
            return err("density scale must be positive and bias finite");
        }
        if !self.output_init_scale.is_finite() || self.output_init_scale < 0.0 {
            return err("output init scale must be non-negative");
        }
        for a in 0..3 {
            if !(self.bounds_min[a].is_finite() && self.bounds_max[a].is_finite() && self.bounds_min[a] < self.bounds_max[a]) {
                return err("bounds must satisfy min < max");
            }
        }
        match &self.encoding {
            Encoding::Frequency { frequencies } if *frequencies > 30 => err("at most 30 frequencies"),
            Encoding::Grid { resolutions, features, init_scale } => {
                if resolutions.is_empty() || resolutions.iter().any(|&r| r == 0 || r > 512) || *features == 0 {
                    return err("grid resolutions must be in 1..=512 with at least one feature");
                }
                if !init_scale.is_finite() || *init_scale < 0.0 {
                    return err("grid init scale must be non-negative");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn parts(&self) -> (Option<PositionalEncoding>, Option<GridEncoding>, Mlp) {
        let (pe, grid, input) = match &self.encoding {
            Encoding::Frequency { frequencies } => {
                let pe = PositionalEncoding { frequencies: *frequencies };
                (Some(pe), None, pe.output_dim(3))
            }
            Encoding::Grid { resolutions, features, .. } => {
                let g = GridEncoding::new(resolutions, *features);
                let d = g.output_dim();
                (None, Some(g), d)
            }
        };
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(1 + self.channels);
        (pe, grid, Mlp::new(sizes))
    }

    pub fn param_count(&self) -> usize {
        let (_, grid, mlp) = self.parts();
        grid.map_or(0, |g| g.param_count()) + mlp.param_count()
    }
}

/// Field configuration plus its flat 32-bit parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField {
    config: FieldConfig,
    params: Vec<f32>,
}

impl RadianceField {
    /// Deterministic initialization from `config.seed`.
    pub fn new(config: FieldConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let (_, grid, mlp) = config.parts();
        let mut params: Vec<f64> = Vec::with_capacity(config.param_count());
        if let (Some(g), Encoding::Grid { init_scale, .. }) = (&grid, &config.encoding) {
            params.extend(g.init(config.seed, *init_scale));
        }
        params.extend(mlp.init(config.seed.wrapping_add(1), config.output_init_scale));
        Ok(Self { config, params: params.iter().map(|&p| p as f32).collect() })
    }

    pub fn from_params(config: FieldConfig, params: Vec<f32>) -> Result<Self, FieldError> {
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

    pub fn config(&self) -> &FieldConfig {
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

    /// Replaces parameters, rounding to 32 bits.
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

    pub fn evaluator(&self) -> FieldEval {
        FieldEval::new(self.config.clone(), self.params_f64()).expect("validated field")
    }
}

/// Per-thread buffers for field evaluation.
#[derive(Debug, Default, Clone)]
pub struct FieldScratch {
    enc: Vec<f64>,
    acts: Vec<f64>,
    corners: Vec<(usize, f64)>,
    d_enc: Vec<f64>,
    d_out: Vec<f64>,
}

/// A field prepared for evaluation in double precision.
#[derive(Debug, Clone)]
pub struct FieldEval {
    config: FieldConfig,
    pe: Option<PositionalEncoding>,
    grid: Option<GridEncoding>,
    mlp: Mlp,
    grid_len: usize,
    params: Vec<f64>,
    bounds: Aabb,
}

impl FieldEval {
    pub fn new(config: FieldConfig, params: Vec<f64>) -> Result<Self, FieldError> {
        config.validate()?;
        let (pe, grid, mlp) = config.parts();
        let grid_len = grid.as_ref().map_or(0, |g| g.param_count());
        let expected = grid_len + mlp.param_count();
        if params.len() != expected {
            return Err(FieldError::ParamCount { expected, got: params.len() });
        }
        let bounds = config.bounds();
        Ok(Self { config, pe, grid, mlp, grid_len, params, bounds })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn encode(&self, p: &Vec3, s: &mut FieldScratch) {
        let u = (p - self.bounds.min).component_div(&self.bounds.extent());
        s.enc.clear();
        if let Some(pe) = &self.pe {
            let v = [2.0 * u.x - 1.0, 2.0 * u.y - 1.0, 2.0 * u.z - 1.0];
            pe.encode(&v, &mut s.enc);
        } else if let Some(g) = &self.grid {
            g.encode(&[u.x, u.y, u.z], &self.params[..self.grid_len], &mut s.enc, &mut s.corners);
        }
    }

    /// Density and features at `p`; `features` must have `channels` entries.
    pub fn query(&self, p: &Vec3, features: &mut [f64], s: &mut FieldScratch) -> f64 {
        if !self.bounds.contains(p) {
            features.iter_mut().for_each(|f| *f = 0.0);
            return 0.0;
        }
        self.encode(p, s);
        let enc = std::mem::take(&mut s.enc);
        let out = self.mlp.forward(&self.params[self.grid_len..], &enc, &mut s.acts);
        for (f, o) in features.iter_mut().zip(&out[1..]) {
            *f = sigmoid(*o);
        }
        let tau = self.config.density_scale * softplus(out[0] + self.config.density_bias);
        s.enc = enc;
        tau
    }

    /// Accumulates `d_tau * dtau/dtheta + d_features . dc/dtheta` at `p` into `grad`.
    pub fn backward(&self, p: &Vec3, d_tau: f64, d_features: &[f64], grad: &mut [f64], s: &mut FieldScratch) {
        if !self.bounds.contains(p) {
            return;
        }
        self.encode(p, s);
        let enc = std::mem::take(&mut s.enc);
        let out = self.mlp.forward(&self.params[self.grid_len..], &enc, &mut s.acts);
        s.d_out.clear();
        s.d_out.push(d_tau * self.config.density_scale * sigmoid(out[0] + self.config.density_bias));
        for (o, d) in out[1..].iter().zip(d_features) {
            let c = sigmoid(*o);
            s.d_out.push(d * c * (1.0 - c));
        }
        let (grid_grad, mlp_grad) = grad.split_at_mut(self.grid_len);
        if let Some(g) = &self.grid {
            s.d_enc.clear();
            s.d_enc.resize(enc.len(), 0.0);
            self.mlp.backward(&self.params[self.grid_len..], &s.acts, &s.d_out, mlp_grad, Some(&mut s.d_enc));
            g.backward(&s.corners, &s.d_enc, grid_grad);
        } else {
            self.mlp.backward(&self.params[self.grid_len..], &s.acts, &s.d_out, mlp_grad, None);
        }
        s.enc = enc;
    }
}
