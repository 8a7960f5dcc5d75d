//! Ray generation, stratified quadrature and its reverse pass.

use rayon::prelude::*;

use super::{FieldError, FieldEval, FieldScratch};
use crate::camera::Camera;
use crate::geometry::{Sphere, Vec3};
use crate::rng::CounterRng;

/// Rays per work unit. Gradients are reduced per unit in batch order, so the
/// result does not depend on how units are scheduled across threads.
pub const CHUNK_RAYS: usize = 1024;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<Vec3>,
    /// Unit directions.
    pub dirs: Vec<Vec3>,
    /// Row-major pixel index of each ray; also keys the sampling jitter.
    pub pixels: Vec<u32>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Narrows each ray's interval to its overlap with `sphere`. Rays that miss
    /// get an empty interval (`far <= near`).
    pub fn clip_to_sphere(&mut self, sphere: &Sphere) {
        for i in 0..self.len() {
            let ray = crate::geometry::Ray { origin: self.origins[i], dir: self.dirs[i] };
            match sphere.intersect(&ray) {
                Some((a, b)) => {
                    self.near[i] = self.near[i].max(a);
                    self.far[i] = self.far[i].min(b);
                }
                None => self.far[i] = self.near[i],
            }
        }
    }
}

/// Rays through pixel centers; `pixels = None` selects every pixel in row-major order.
pub fn generate_rays(camera: &Camera, pixels: Option<&[u32]>) -> RayBatch {
    let all: Vec<u32>;
    let ids = match pixels {
        Some(p) => p,
        None => {
            all = (0..camera.width * camera.height).collect();
            &all
        }
    };
    let mut batch = RayBatch::default();
    for &id in ids {
        let ray = camera.pixel_ray(id % camera.width, id / camera.width);
        batch.origins.push(ray.origin);
        batch.dirs.push(ray.dir);
        batch.pixels.push(id);
        batch.near.push(camera.near);
        batch.far.push(camera.far);
    }
    batch
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    /// Samples per ray (`N_c`).
    pub samples: usize,
    /// Stratified jitter seed; `None` places samples at stratum midpoints.
    pub jitter_seed: Option<u64>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { samples: 96, jitter_seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub canonical: Vec3,
    /// Multiplier applied to the canonical density.
    pub weight: f64,
}

/// Maps observation-space samples to canonical space with a density weight.
/// Parameters of the mapping (if any) receive gradients through `backward`.
pub trait Deformation: Sync {
    fn param_count(&self) -> usize;
    fn warp(&self, p: &Vec3) -> WarpSample;
    /// Accumulates `d_weight * dweight/dparams` at `p` into `grad`.
    fn backward(&self, p: &Vec3, d_weight: f64, grad: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
struct SampleRecord {
    obs: Vec3,
    canonical: Vec3,
    tau: f64,
    weight: f64,
    delta: f64,
    omega: f64,
}

#[derive(Debug, Clone, Default)]
struct ChunkCache {
    records: Vec<SampleRecord>,
    features: Vec<f64>,
    /// Per ray: start and end in `records`, and the final transmittance.
    rays: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub channels: usize,
    /// `M x C`, ray-major.
    pub features: Vec<f64>,
    pub opacity: Vec<f64>,
    background: Vec<f64>,
    field_params: usize,
    warp_params: Option<usize>,
    chunks: Vec<ChunkCache>,
}

impl RenderOutput {
    pub fn ray_count(&self) -> usize {
        self.opacity.len()
    }

    /// Per-ray sample densities (after weighting), transmittances and weights,
    /// in sampling order. Only samples inside the field bounds are listed.
    pub fn ray_samples(&self, ray: usize) -> Vec<(f64, f64, f64)> {
        let chunk = &self.chunks[ray / CHUNK_RAYS];
        let (a, b, _) = chunk.rays[ray % CHUNK_RAYS];
        chunk.records[a..b]
            .iter()
            .map(|r| {
                let sigma = r.tau * r.weight;
                (sigma, r.omega, r.omega * (1.0 - (-sigma * r.delta).exp()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderGrads {
    pub field: Vec<f64>,
    pub warp: Vec<f64>,
}

pub(crate) fn sample_positions(near: f64, far: f64, pixel: u32, sampling: &Sampling, out: &mut Vec<(f64, f64)>) {
    out.clear();
    if !(far > near) || sampling.samples == 0 {
        return;
    }
    let n = sampling.samples;
    let step = (far - near) / n as f64;
    let rng = sampling.jitter_seed.map(CounterRng::new);
    let t: Vec<f64> = (0..n)
        .map(|i| {
            let u = rng.map_or(0.5, |r| r.uniform(pixel as u64, i as u64));
            near + (i as f64 + u) * step
        })
        .collect();
    for i in 0..n {
        let next = if i + 1 < n { t[i + 1] } else { far };
        out.push((t[i], next - t[i]));
    }
}

/// Volume-renders `rays` through `field`, optionally warping each sample with
/// `hook`. The returned output caches what [`backprop_render`] needs.
pub fn render(
    field: &FieldEval,
    rays: &RayBatch,
    sampling: &Sampling,
    background: &[f64],
    hook: Option<&dyn Deformation>,
) -> RenderOutput {
    let c = field.channels();
    assert_eq!(background.len(), c, "background must have one value per channel");
    let chunks: Vec<(ChunkCache, Vec<f64>, Vec<f64>)> = (0..rays.len().div_ceil(CHUNK_RAYS))
        .into_par_iter()
        .map(|k| {
            let range = k * CHUNK_RAYS..((k + 1) * CHUNK_RAYS).min(rays.len());
            let mut cache = ChunkCache::default();
            let mut feats = Vec::with_capacity(range.len() * c);
            let mut opacity = Vec::with_capacity(range.len());
            let mut scratch = FieldScratch::default();
            let mut ts = Vec::new();
            let mut cval = vec![0.0; c];
            for r in range {
                sample_positions(rays.near[r], rays.far[r], rays.pixels[r], sampling, &mut ts);
                let start = cache.records.len();
                let mut omega = 1.0;
                let mut acc = vec![0.0; c];
                for &(t, delta) in &ts {
                    let obs = rays.origins[r] + rays.dirs[r] * t;
                    let warp = hook.map_or(WarpSample { canonical: obs, weight: 1.0 }, |h| h.warp(&obs));
                    let tau = field.query(&warp.canonical, &mut cval, &mut scratch);
                    if tau == 0.0 {
                        continue;
                    }
                    let sigma = tau * warp.weight;
                    let trans = (-sigma * delta).exp();
                    let w = omega * (1.0 - trans);
                    for (a, v) in acc.iter_mut().zip(&cval) {
                        *a += w * v;
                    }
                    cache.records.push(SampleRecord { obs, canonical: warp.canonical, tau, weight: warp.weight, delta, omega });
                    cache.features.extend_from_slice(&cval);
                    omega *= trans;
                }
                cache.rays.push((start, cache.records.len(), omega));
                feats.extend(acc.iter().zip(background).map(|(a, b)| a + omega * b));
                opacity.push(1.0 - omega);
            }
            (cache, feats, opacity)
        })
        .collect();
    let mut out = RenderOutput {
        channels: c,
        features: Vec::with_capacity(rays.len() * c),
        opacity: Vec::with_capacity(rays.len()),
        background: background.to_vec(),
        field_params: field.param_count(),
        warp_params: hook.map(|h| h.param_count()),
        chunks: Vec::with_capacity(chunks.len()),
    };
    for (cache, f, o) in chunks {
        out.features.extend(f);
        out.opacity.extend(o);
        out.chunks.push(cache);
    }
    out
}

/// Reverse pass of [`render`]: maps `d_features` (`M x C`) to gradients of the
/// field parameters and of the deformation parameters.
pub fn backprop_render(
    field: &FieldEval,
    hook: Option<&dyn Deformation>,
    output: &RenderOutput,
    d_features: &[f64],
) -> Result<RenderGrads, FieldError> {
    let c = output.channels;
    if field.param_count() != output.field_params || field.channels() != c {
        return Err(FieldError::CacheMismatch("field differs from the rendered one".into()));
    }
    if hook.map(|h| h.param_count()) != output.warp_params {
        return Err(FieldError::CacheMismatch("deformation differs from the rendered one".into()));
    }
    if d_features.len() != output.ray_count() * c {
        return Err(FieldError::CacheMismatch(format!(
            "expected {} upstream values, got {}",
            output.ray_count() * c,
            d_features.len()
        )));
    }
    let warp_len = output.warp_params.unwrap_or(0);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = output
        .chunks
        .par_iter()
        .enumerate()
        .map(|(k, cache)| {
            let mut g_field = vec![0.0; field.param_count()];
            let mut g_warp = vec![0.0; warp_len];
            let mut scratch = FieldScratch::default();
            let mut dc = vec![0.0; c];
            for (local, &(a, b, t_final)) in cache.rays.iter().enumerate() {
                let ray = k * CHUNK_RAYS + local;
                let g = &d_features[ray * c..(ray + 1) * c];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let g_bg: f64 = g.iter().zip(&output.background).map(|(x, y)| x * y).sum();
                // suffix = sum over later samples of w_j (g . c_j)
                let mut suffix = 0.0;
                for i in (a..b).rev() {
                    let rec = &cache.records[i];
                    let ci = &cache.features[i * c..(i + 1) * c];
                    let gc: f64 = g.iter().zip(ci).map(|(x, y)| x * y).sum();
                    let sigma = rec.tau * rec.weight;
                    let trans = (-sigma * rec.delta).exp();
                    let t_next = rec.omega * trans;
                    let w = rec.omega - t_next;
                    let d_sigma = rec.delta * (t_next * gc - suffix - t_final * g_bg);
                    suffix += w * gc;
                    for (d, gv) in dc.iter_mut().zip(g) {
                        *d = w * gv;
                    }
                    field.backward(&rec.canonical, d_sigma * rec.weight, &dc, &mut g_field, &mut scratch);
                    if let Some(h) = hook {
                        h.backward(&rec.obs, d_sigma * rec.tau, &mut g_warp);
                    }
                }
            }
            (g_field, g_warp)
        })
        .collect();
    let mut grads = RenderGrads { field: vec![0.0; field.param_count()], warp: vec![0.0; warp_len] };
    for (f, w) in partials {
        for (a, b) in grads.field.iter_mut().zip(&f) {
            *a += b;
        }
        for (a, b) in grads.warp.iter_mut().zip(&w) {
            *a += b;
        }
    }
    Ok(grads)
}
