use super::{
    optimize_step, sample_camera, sample_pose, AdamState, History, IterationSummary, PosePrior, Stage, TrainConfig,
    TrainError, STREAM_JITTER, STREAM_MIXTURE,
};
use crate::articulation::{build_vertex_index, render_bounds, ArticulatedDeformation, DensityWeightNet};
use crate::body::{skin, ArticulatedBody, BodyParams, PosedMesh};
use crate::camera::Camera;
use crate::field::{backprop_render, generate_rays, render, FieldEval, RadianceField, RenderOutput, Sampling};
use crate::geometry::{Aabb, Bvh, Sphere, Vec3};
use crate::guidance::{
    add_noise, sample_noise, sample_timestep, sds_gradient, GuidanceError, NoisePredictor, NoiseRequest,
    NoiseSchedule, TimestepRange,
};
use crate::image::RgbImage;
use crate::rng::{mix64, CounterRng};
use crate::skeleton::{conditioning_map, render_silhouette_bvh, Mask, RasterStyle, SkeletonTopology};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    /// Loss of every iteration, in order.
    pub losses: Vec<f64>,
}

/// Canonical field box: the rest-pose mesh bounds padded by `margin`.
pub fn field_bounds(body: &ArticulatedBody, margin: f64) -> Aabb {
    body.template_bounds().expanded(margin)
}

/// Silhouette target: 1 on every channel inside the mask, the background
/// feature outside.
pub fn silhouette_target(mask: &Mask, channels: usize, background: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(mask.data.len() * channels);
    for &m in &mask.data {
        if m != 0 {
            out.extend(std::iter::repeat_n(1.0, channels));
        } else {
            out.extend_from_slice(background);
        }
    }
    out
}

fn jitter(config: &TrainConfig, iteration: usize) -> Sampling {
    let seed = mix64(config.seed ^ STREAM_JITTER.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ iteration as u64);
    Sampling { samples: config.render.samples, jitter_seed: config.render.jitter.then_some(seed) }
}

fn camera_center(config: &TrainConfig, mesh: &PosedMesh) -> Vec3 {
    config.camera.center.map_or_else(|| Aabb::from_points(&mesh.vertices).center(), Vec3::from)
}

fn render_view(
    eval: &FieldEval,
    camera: &Camera,
    bounds: &Sphere,
    sampling: &Sampling,
    background: &[f64],
    hook: Option<&ArticulatedDeformation<'_>>,
) -> RenderOutput {
    let mut rays = generate_rays(camera, None);
    rays.clip_to_sphere(bounds);
    render(eval, &rays, sampling, background, hook.map(|h| h as &dyn crate::field::Deformation))
}

fn check_finite(values: &[f64], what: &'static str, iteration: usize, history: &History) -> Result<(), TrainError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::NonFinite { iteration, what, history: history.dump() })
    }
}

/// Mean silhouette IoU of the field's opacity (thresholded at 0.5) against the
/// canonical body's mask over `cameras`. Renders use stratum midpoints.
pub fn silhouette_iou(
    field: &RadianceField,
    body: &ArticulatedBody,
    cameras: &[Camera],
    samples: usize,
    margin: f64,
) -> Result<f64, TrainError> {
    let mesh = skin(body, &BodyParams::zero(body))?;
    let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
    let bounds = render_bounds(&mesh, margin);
    let eval = field.evaluator();
    let bg = vec![0.0; eval.channels()];
    let sampling = Sampling { samples, jitter_seed: None };
    let mut total = 0.0;
    for cam in cameras {
        let out = render_view(&eval, cam, &bounds, &sampling, &bg, None);
        let mask = render_silhouette_bvh(&bvh, cam);
        let pred = Mask { width: cam.width, height: cam.height, data: out.opacity.iter().map(|&o| (o > 0.5) as u8).collect() };
        total += pred.iou(&mask);
    }
    Ok(total / cameras.len().max(1) as f64)
}

/// Fits the field's render to the canonical body's silhouette from random views.
pub fn pretrain_init(
    field: &mut RadianceField,
    body: &ArticulatedBody,
    config: &TrainConfig,
    log: &mut dyn FnMut(&IterationSummary),
) -> Result<StageReport, TrainError> {
    config.validate()?;
    let mut report = StageReport::default();
    let iterations = config.pretrain.iterations;
    if iterations == 0 {
        return Ok(report);
    }
    let mesh = skin(body, &BodyParams::zero(body))?;
    let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
    let bounds = render_bounds(&mesh, config.render.margin);
    let center = camera_center(config, &mesh);
    let c = field.config().channels;
    let bg = config.render.background(c);
    if bg.len() != c {
        return Err(TrainError::Config(format!("background has {} values, field has {c} channels", bg.len())));
    }
    let rng = CounterRng::new(config.seed);
    let res = (config.render.width, config.render.height);
    let mut params = field.params_f64();
    let mut adam = AdamState::new(params.len());
    let mut history = History::default();
    for i in 0..iterations {
        let cam = sample_camera(&config.camera, center, res, &rng, i as u64)?;
        let mask = render_silhouette_bvh(&bvh, &cam);
        let target = silhouette_target(&mask, c, &bg);
        let eval = FieldEval::new(field.config().clone(), params.clone())?;
        let out = render_view(&eval, &cam, &bounds, &jitter(config, i), &bg, None);
        let n = out.features.len() as f64;
        let mut loss = 0.0;
        let d: Vec<f64> = out
            .features
            .iter()
            .zip(&target)
            .map(|(x, t)| {
                loss += (x - t) * (x - t);
                2.0 * (x - t) / n
            })
            .collect();
        loss /= n;
        let summary = IterationSummary { stage: Stage::Pretrain, iteration: i, loss, timestep: None, pose_index: None, camera: cam };
        history.push(summary.clone());
        check_finite(&[loss], "loss", i, &history)?;
        let grads = backprop_render(&eval, None, &out, &d)?;
        check_finite(&grads.field, "gradient", i, &history)?;
        optimize_step(&mut params, &grads.field, &mut adam, &config.optimizer)?;
        report.losses.push(loss);
        if i % config.log_every.max(1) == 0 || i + 1 == iterations {
            log(&summary);
        }
    }
    field.set_params(&params)?;
    Ok(report)
}

struct Sds {
    schedule: NoiseSchedule,
    range: TimestepRange,
    rng: CounterRng,
}

struct SdsResult {
    grad: Vec<f64>,
    timestep: usize,
    loss: f64,
}

impl Sds {
    fn new(config: &TrainConfig) -> Result<Self, TrainError> {
        Ok(Self { schedule: config.guidance.schedule()?, range: config.guidance.timestep_range()?, rng: CounterRng::new(config.seed) })
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        config: &TrainConfig,
        predictor: &mut dyn NoisePredictor,
        iteration: usize,
        x: &[f64],
        channels: usize,
        camera: &Camera,
        conditioning: &RgbImage,
        pose_index: Option<usize>,
    ) -> Result<SdsResult, TrainError> {
        let t = sample_timestep(&self.rng, iteration as u64, self.range);
        let eps = sample_noise(&self.rng, iteration as u64, x.len());
        let z = add_noise(x, t, &eps, &self.schedule)?;
        let request = NoiseRequest {
            z_t: &z,
            timestep: t,
            channels,
            width: camera.width,
            height: camera.height,
            conditioning,
            render: x,
            noise: &eps,
            pose_index,
        };
        let mut attempt = 0;
        let eps_hat = loop {
            match predictor.predict(&request) {
                Ok(v) => break v,
                Err(GuidanceError::Connection(_) | GuidanceError::Timeout) if attempt < config.guidance.retries => attempt += 1,
                Err(e) => return Err(TrainError::Backend { iteration, source: e }),
            }
        };
        if eps_hat.len() != x.len() {
            return Err(TrainError::Backend {
                iteration,
                source: GuidanceError::Shape(format!("backend returned {} values, expected {}", eps_hat.len(), x.len())),
            });
        }
        let loss = eps_hat.iter().zip(&eps).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len().max(1) as f64;
        let g = sds_gradient(&eps_hat, &eps, t, &self.schedule, config.guidance.weight, config.guidance.sqrt_alpha_bar)?;
        Ok(SdsResult { grad: g.grad, timestep: t, loss })
    }
}

/// Score-distillation training of the field in the canonical pose, each view
/// conditioned on the skeleton rendered from the same camera.
pub fn train_static(
    field: &mut RadianceField,
    predictor: &mut dyn NoisePredictor,
    body: &ArticulatedBody,
    topology: &SkeletonTopology,
    config: &TrainConfig,
    log: &mut dyn FnMut(&IterationSummary),
) -> Result<StageReport, TrainError> {
    config.validate()?;
    let mut report = StageReport::default();
    let iterations = config.static_stage.iterations;
    if iterations == 0 {
        return Ok(report);
    }
    let mesh = skin(body, &BodyParams::zero(body))?;
    let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
    let bounds = render_bounds(&mesh, config.render.margin);
    let center = camera_center(config, &mesh);
    let c = field.config().channels;
    let bg = config.render.background(c);
    let res = (config.render.width, config.render.height);
    let style = RasterStyle::for_resolution(res.0, res.1);
    let sds = Sds::new(config)?;
    let mut params = field.params_f64();
    let mut adam = AdamState::new(params.len());
    let mut history = History::default();
    for i in 0..iterations {
        let cam = sample_camera(&config.camera, center, res, &sds.rng, i as u64)?;
        let cond = conditioning_map(topology, &mesh, &bvh, &cam, style)?;
        let eval = FieldEval::new(field.config().clone(), params.clone())?;
        let out = render_view(&eval, &cam, &bounds, &jitter(config, i), &bg, None);
        let step = sds.step(config, predictor, i, &out.features, c, &cam, &cond.image, None)?;
        let summary = IterationSummary {
            stage: Stage::Static,
            iteration: i,
            loss: step.loss,
            timestep: Some(step.timestep),
            pose_index: None,
            camera: cam,
        };
        history.push(summary.clone());
        check_finite(&step.grad, "pixel gradient", i, &history)?;
        let grads = backprop_render(&eval, None, &out, &step.grad)?;
        check_finite(&grads.field, "gradient", i, &history)?;
        optimize_step(&mut params, &grads.field, &mut adam, &config.optimizer)?;
        report.losses.push(step.loss);
        if i % config.log_every.max(1) == 0 || i + 1 == iterations {
            log(&summary);
        }
    }
    field.set_params(&params)?;
    Ok(report)
}

/// Joint training of the field and the density weighting network over poses
/// drawn from `prior`, mixed with the canonical pose.
#[allow(clippy::too_many_arguments)]
pub fn train_animatable(
    field: &mut RadianceField,
    drn: &mut DensityWeightNet,
    predictor: &mut dyn NoisePredictor,
    body: &ArticulatedBody,
    topology: &SkeletonTopology,
    prior: &PosePrior,
    config: &TrainConfig,
    log: &mut dyn FnMut(&IterationSummary),
) -> Result<StageReport, TrainError> {
    config.validate()?;
    prior.validate()?;
    if prior.joint_count() != body.joint_count() {
        return Err(TrainError::Config(format!("pose prior has {} joints, body {}", prior.joint_count(), body.joint_count())));
    }
    let mut report = StageReport::default();
    let iterations = config.animate.iterations;
    if iterations == 0 {
        return Ok(report);
    }
    let c = field.config().channels;
    let bg = config.render.background(c);
    let res = (config.render.width, config.render.height);
    let style = RasterStyle::for_resolution(res.0, res.1);
    let canonical_box = field.config().bounds();
    let sds = Sds::new(config)?;
    let mut params = field.params_f64();
    let mut drn_params = drn.params_f64();
    let mut adam = AdamState::new(params.len());
    let mut drn_adam = AdamState::new(drn_params.len());
    let drn_hyper = crate::trainer::AdamConfig { lr: config.animate.drn_lr.unwrap_or(config.optimizer.lr), ..config.optimizer };
    let mut history = History::default();
    for i in 0..iterations {
        let canonical = sds.rng.uniform(STREAM_MIXTURE, i as u64) < config.animate.canonical_probability;
        let sample = if canonical {
            sample_pose(&PosePrior::canonical(body.joint_count()), &sds.rng, i as u64)
        } else {
            sample_pose(prior, &sds.rng, i as u64)
        };
        let mesh = skin(body, &BodyParams::with_pose(body, sample.pose))?;
        let index = build_vertex_index(&mesh);
        let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
        let bounds = render_bounds(&mesh, config.render.margin);
        let cam = sample_camera(&config.camera, camera_center(config, &mesh), res, &sds.rng, i as u64)?;
        let cond = conditioning_map(topology, &mesh, &bvh, &cam, style)?;
        let eval = FieldEval::new(field.config().clone(), params.clone())?;
        let drn_eval = crate::articulation::DrnEval::new(drn.config().clone(), drn_params.clone())?;
        let hook = ArticulatedDeformation { mesh: &mesh, index: &index, drn: &drn_eval, canonical_bounds: Some(canonical_box) };
        let out = render_view(&eval, &cam, &bounds, &jitter(config, i), &bg, Some(&hook));
        let step = sds.step(config, predictor, i, &out.features, c, &cam, &cond.image, sample.library_index)?;
        let summary = IterationSummary {
            stage: Stage::Animate,
            iteration: i,
            loss: step.loss,
            timestep: Some(step.timestep),
            pose_index: sample.library_index,
            camera: cam,
        };
        history.push(summary.clone());
        check_finite(&step.grad, "pixel gradient", i, &history)?;
        let grads = backprop_render(&eval, Some(&hook), &out, &step.grad)?;
        check_finite(&grads.field, "gradient", i, &history)?;
        check_finite(&grads.warp, "weighting network gradient", i, &history)?;
        if !config.animate.freeze_field {
            optimize_step(&mut params, &grads.field, &mut adam, &config.optimizer)?;
        }
        optimize_step(&mut drn_params, &grads.warp, &mut drn_adam, &drn_hyper)?;
        report.losses.push(step.loss);
        if i % config.log_every.max(1) == 0 || i + 1 == iterations {
            log(&summary);
        }
    }
    field.set_params(&params)?;
    drn.set_params(&drn_params)?;
    Ok(report)
}
