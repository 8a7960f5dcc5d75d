//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. `ACCEPTANCE_ONLY=4,7` restricts the run to a subset.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Matrix3x4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelfield_core::animation::{
    parse_manifest, render_posed, render_sequence, Avatar, CameraPath, MotionClip, MotionFrame, Placement,
    RenderSettings, Scene, SceneItem, SceneItemKind,
};
use skelfield_core::articulation::{
    build_vertex_index, nearest_brute_force, render_bounds, ArticulatedDeformation, DensityWeightNet, DrnConfig,
};
use skelfield_core::body::{make_synthetic_body, skin, ArticulatedBody, BodyParams, SyntheticBodyConfig};
use skelfield_core::camera::Camera;
use skelfield_core::field::{
    backprop_render, generate_rays, render, Checkpoint, Encoding, FieldConfig, FieldEval, RadianceField, Sampling,
};
use skelfield_core::geometry::{intersect_triangle, Bvh, Ray, Vec3};
use skelfield_core::guidance::{EchoPredictor, MockPredictor, NoiseSchedule};
use skelfield_core::rng::CounterRng;
use skelfield_core::skeleton::{
    conditioning_map, default_occlusion_epsilon, occlusion_cull_bvh, posed_keypoints, render_silhouette_bvh,
    RasterStyle, SkeletonTopology,
};
use skelfield_core::trainer::{
    field_bounds, pretrain_init, sample_camera, silhouette_iou, train_animatable, train_static, BackendConfig,
    CameraRanges, PosePrior, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn body() -> ArticulatedBody {
    make_synthetic_body(&SyntheticBodyConfig::default())
}

fn random_pose(rng: &mut ChaCha8Rng, joints: usize, max: f64) -> Vec<Vec3> {
    (0..joints)
        .map(|j| if j == 0 { Vec3::zeros() } else { Vec3::new(rng.gen_range(-max..max), rng.gen_range(-max..max), rng.gen_range(-max..max)) })
        .collect()
}

fn criterion_1() -> Outcome {
    let body = body();
    let mesh = skin(&body, &BodyParams::zero(&body)).unwrap();
    let dev = mesh
        .vertices
        .iter()
        .zip(body.template_vertices())
        .map(|(a, b)| (a - b).abs().max())
        .fold(0.0, f64::max);
    outcome(dev < 1e-6, format!("max deviation {dev:.3e} over {} vertices", mesh.vertices.len()))
}

fn criterion_2() -> Outcome {
    let body = body();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mesh = skin(&body, &BodyParams::with_pose(&body, random_pose(&mut rng, 24, 0.5))).unwrap();
    let index = build_vertex_index(&mesh);
    let b = skelfield_core::geometry::Aabb::from_points(&mesh.vertices).expanded(0.3);
    let mut agree = 0;
    for _ in 0..1000 {
        let q = Vec3::new(rng.gen_range(b.min.x..b.max.x), rng.gen_range(b.min.y..b.max.y), rng.gen_range(b.min.z..b.max.z));
        let (i, d) = index.nearest(&q).unwrap();
        let (j, e) = nearest_brute_force(&mesh.vertices, &q).unwrap();
        if i == j || (d - e).abs() <= 1e-9 {
            agree += 1;
        }
    }
    outcome(agree == 1000, format!("{agree}/1000 queries agree on a {}-vertex mesh", mesh.vertices.len()))
}

fn brute_force_visibility(kps: &[Vec3], facial: &[bool], verts: &[Vec3], faces: &[[u32; 3]], cam: &Camera, eps: f64) -> Vec<bool> {
    kps.iter()
        .zip(facial)
        .map(|(p, &f)| {
            if !cam.project(p).valid {
                return false;
            }
            if !f {
                return true;
            }
            let to = p - cam.position;
            let dist = to.norm();
            let ray = Ray::new(cam.position, to / dist);
            !faces.iter().any(|t| {
                let [a, b, c] = t.map(|i| verts[i as usize]);
                intersect_triangle(&ray, &a, &b, &c).is_some_and(|t| t > 0.0 && t < dist - eps)
            })
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
    let topo = SkeletonTopology::default_openpose();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut agree, mut total, mut hidden) = (0, 0, 0);
    for _ in 0..200 {
        let mesh = skin(&body, &BodyParams::with_pose(&body, random_pose(&mut rng, 24, 0.6))).unwrap();
        let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
        let cam = Camera::orbit(
            Vec3::new(0.0, 0.1, 0.0),
            rng.gen_range(1.5..4.0),
            rng.gen_range(-3.14..3.14),
            rng.gen_range(-0.6..0.6),
            0.7,
            (64, 64),
        )
        .unwrap();
        // posed keypoints plus random points, all tested as facial
        let mut kps = posed_keypoints(&topo, &mesh).unwrap();
        kps.extend((0..8).map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.9..0.8), rng.gen_range(-0.3..0.3))));
        let facial = vec![true; kps.len()];
        let eps = default_occlusion_epsilon(&mesh.vertices);
        let fast = occlusion_cull_bvh(&kps, &facial, &bvh, &cam, eps);
        let slow = brute_force_visibility(&kps, &facial, &mesh.vertices, &mesh.faces, &cam, eps);
        total += kps.len();
        agree += fast.iter().zip(&slow).filter(|(a, b)| a == b).count();
        hidden += slow.iter().filter(|v| !**v).count();
    }
    outcome(agree == total, format!("{agree}/{total} keypoints agree ({hidden} occluded)"))
}

fn relative_errors(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    let ok = analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| (*a - *n).abs() / a.abs().max(n.abs()).max(floor).max(1e-300) < 1e-3)
        .count();
    ok as f64 / analytic.len() as f64
}

fn criterion_4() -> Outcome {
    let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = FieldConfig {
        encoding: Encoding::Frequency { frequencies: 2 },
        hidden: vec![32, 32],
        channels: 4,
        density_bias: 0.0,
        density_scale: 4.0,
        output_init_scale: 1.0,
        seed: 4,
        ..FieldConfig::default()
    }
    .with_bounds(&field_bounds(&body, 0.1));
    let field = RadianceField::new(cfg.clone()).unwrap();
    let theta = field.params_f64();
    let mesh = skin(&body, &BodyParams::with_pose(&body, random_pose(&mut rng, 24, 0.4))).unwrap();
    let index = build_vertex_index(&mesh);
    let drn_cfg = DrnConfig { hidden: vec![16, 16], output_init_scale: 0.5, seed: 5, ..DrnConfig::for_body_height(body.height()) };
    let phi = DensityWeightNet::new(drn_cfg.clone()).unwrap().params_f64();
    let cam = Camera::orbit(Vec3::new(0.0, 0.1, 0.0), 2.2, 0.4, 0.2, 0.75, (8, 8)).unwrap();
    let mut rays = generate_rays(&cam, None);
    rays.clip_to_sphere(&render_bounds(&mesh, 0.1));
    let sampling = Sampling { samples: 16, jitter_seed: Some(9) };
    let bg = vec![0.1, 0.2, 0.3, 0.4];
    let g: Vec<f64> = (0..64 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h = 1e-5;
    let mut lines = Vec::new();
    let mut pass = true;
    for with_hook in [false, true] {
        let loss = |theta: &[f64], phi: &[f64]| -> f64 {
            let eval = FieldEval::new(cfg.clone(), theta.to_vec()).unwrap();
            let drn = skelfield_core::articulation::DrnEval::new(drn_cfg.clone(), phi.to_vec()).unwrap();
            let hook = ArticulatedDeformation { mesh: &mesh, index: &index, drn: &drn, canonical_bounds: Some(cfg.bounds()) };
            let out = render(&eval, &rays, &sampling, &bg, with_hook.then_some(&hook as _));
            out.features.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let eval = FieldEval::new(cfg.clone(), theta.clone()).unwrap();
        let drn = skelfield_core::articulation::DrnEval::new(drn_cfg.clone(), phi.clone()).unwrap();
        let hook = ArticulatedDeformation { mesh: &mesh, index: &index, drn: &drn, canonical_bounds: Some(cfg.bounds()) };
        let hook_ref = with_hook.then_some(&hook as &dyn skelfield_core::field::Deformation);
        let out = render(&eval, &rays, &sampling, &bg, hook_ref);
        let grads = backprop_render(&eval, hook_ref, &out, &g).unwrap();
        let mut numeric = Vec::with_capacity(theta.len());
        let mut t = theta.clone();
        for j in 0..theta.len() {
            t[j] = theta[j] + h;
            let a = loss(&t, &phi);
            t[j] = theta[j] - h;
            let b = loss(&t, &phi);
            t[j] = theta[j];
            numeric.push((a - b) / (2.0 * h));
        }
        let frac = relative_errors(&grads.field, &numeric);
        pass &= frac >= 0.99;
        let label = if with_hook { "with hook" } else { "no hook" };
        lines.push(format!("{label}: field {:.2}% of {}", 100.0 * frac, theta.len()));
        if with_hook {
            let mut numeric = Vec::with_capacity(phi.len());
            let mut p = phi.clone();
            for j in 0..phi.len() {
                p[j] = phi[j] + h;
                let a = loss(&theta, &p);
                p[j] = phi[j] - h;
                let b = loss(&theta, &p);
                p[j] = phi[j];
                numeric.push((a - b) / (2.0 * h));
            }
            let frac = relative_errors(&grads.warp, &numeric);
            let nonzero = grads.warp.iter().filter(|v| **v != 0.0).count();
            pass &= frac >= 0.99 && nonzero > 0;
            lines.push(format!("weighting net {:.2}% of {} ({nonzero} non-zero)", 100.0 * frac, phi.len()));
        }
    }
    outcome(pass, lines.join(", "))
}

fn desk_field(body: &ArticulatedBody, margin: f64, seed: u64) -> RadianceField {
    RadianceField::new(FieldConfig::desk_grid(&field_bounds(body, margin), seed)).unwrap()
}

fn criterion_5() -> Outcome {
    let body = body();
    let mut field = desk_field(&body, 0.1, 5);
    let before = field.params().to_vec();
    let mut cfg = TrainConfig::default();
    cfg.optimizer.lr = 1e-3;
    cfg.render.width = 16;
    cfg.render.height = 16;
    cfg.render.samples = 16;
    cfg.static_stage.iterations = 100;
    cfg.guidance.backend = BackendConfig::Echo;
    let topo = SkeletonTopology::default_openpose();
    train_static(&mut field, &mut EchoPredictor, &body, &topo, &cfg, &mut |_| {}).unwrap();
    let drift = field.params().iter().zip(&before).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
    outcome(drift < 1e-6, format!("max |dtheta| = {drift:.3e} after 100 steps"))
}

fn fixed_camera_ranges() -> CameraRanges {
    CameraRanges { radius: [2.4, 2.4], elevation: [10.0, 10.0], azimuth: [25.0, 25.0], fov: [40.0, 40.0], center: None }
}

fn eval_render(field: &RadianceField, cam: &Camera, bounds: &skelfield_core::geometry::Sphere, samples: usize) -> Vec<f64> {
    let mut rays = generate_rays(cam, None);
    rays.clip_to_sphere(bounds);
    let eval = field.evaluator();
    let bg = vec![0.0; eval.channels()];
    render(&eval, &rays, &Sampling { samples, jitter_seed: None }, &bg, None).features
}

fn criterion_6() -> Outcome {
    let body = body();
    let mesh = skin(&body, &BodyParams::zero(&body)).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.seed = 6;
    cfg.render.width = 32;
    cfg.render.height = 32;
    cfg.camera = fixed_camera_ranges();
    cfg.static_stage.iterations = 2000;
    let center = skelfield_core::geometry::Aabb::from_points(&mesh.vertices).center();
    let cam = sample_camera(&cfg.camera, center, (32, 32), &CounterRng::new(0), 0).unwrap();
    let mask = render_silhouette_bvh(&Bvh::build(&mesh.vertices, &mesh.faces), &cam);
    let color = [0.9, 0.25, 0.6, 0.4];
    let target: Vec<f64> = mask.data.iter().flat_map(|&m| color.map(|c| if m != 0 { c } else { 0.0 })).collect();
    let mut mock = MockPredictor::new(cfg.guidance.schedule().unwrap(), vec![target.clone()]).unwrap();
    let mut field = desk_field(&body, cfg.render.margin, 6);
    let bounds = render_bounds(&mesh, cfg.render.margin);
    let mse = |f: &RadianceField| {
        let x = eval_render(f, &cam, &bounds, cfg.render.samples);
        x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
    };
    let initial = mse(&field);
    let topo = SkeletonTopology::default_openpose();
    train_static(&mut field, &mut mock, &body, &topo, &cfg, &mut |_| {}).unwrap();
    let last = mse(&field);
    let rel = last / initial;
    outcome(rel < 0.1, format!("relative MSE {rel:.4} (initial {initial:.4e}, final {last:.4e})"))
}

fn criterion_7(body: &ArticulatedBody) -> (Outcome, RadianceField) {
    let mut cfg = TrainConfig::default();
    cfg.seed = 7;
    cfg.render.width = 64;
    cfg.render.height = 64;
    cfg.pretrain.iterations = 1000;
    let mut field = desk_field(body, cfg.render.margin, 7);
    pretrain_init(&mut field, body, &cfg, &mut |_| {}).unwrap();
    let mesh = skin(body, &BodyParams::zero(body)).unwrap();
    let center = skelfield_core::geometry::Aabb::from_points(&mesh.vertices).center();
    let held_out = CounterRng::new(0x4e1d_07);
    let cams: Vec<Camera> = (0..8).map(|i| sample_camera(&cfg.camera, center, (64, 64), &held_out, i).unwrap()).collect();
    let iou = silhouette_iou(&field, body, &cams, cfg.render.samples, cfg.render.margin).unwrap();
    (outcome(iou > 0.9, format!("mean held-out IoU {iou:.4}")), field)
}

fn avatar(body: &ArticulatedBody, field: &RadianceField) -> Avatar {
    Avatar::new(body.clone(), Checkpoint { field: field.clone(), extra: None }).unwrap()
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn settings(samples: usize) -> RenderSettings {
    RenderSettings { sampling: Sampling { samples, jitter_seed: None }, ..Default::default() }
}

fn criterion_8(body: &ArticulatedBody, field: &RadianceField) -> Outcome {
    let av = avatar(body, field);
    let mesh = skin(body, &BodyParams::zero(body)).unwrap();
    let cam = Camera::orbit(Vec3::new(0.0, 0.0, 0.0), 2.4, 0.5, 0.15, 0.7, (48, 48)).unwrap();
    let s = settings(32);
    let static_render = eval_render(field, &cam, &render_bounds(&mesh, s.margin), 32);
    let animated = render_posed(&av, &BodyParams::zero(body), &cam, &s).unwrap();
    let d = mean_abs_diff(&static_render, &animated.features);
    outcome(d < 1e-3, format!("mean abs diff {d:.3e}"))
}

fn criterion_9(body: &ArticulatedBody, field: &RadianceField) -> Outcome {
    let av = avatar(body, field);
    let s = settings(32);
    let cam = Camera::orbit(Vec3::new(0.0, 0.0, 0.0), 2.4, -0.3, 0.1, 0.7, (48, 48)).unwrap();
    let canonical = render_posed(&av, &BodyParams::zero(body), &cam, &s).unwrap();
    let yaw = Vec3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0);
    let mut pose = vec![Vec3::zeros(); body.joint_count()];
    pose[0] = yaw;
    let params = BodyParams::with_pose(body, pose);
    let root = skin(body, &params).unwrap().joints[0];
    let r: Matrix3<f64> = skelfield_core::body::rodrigues(&yaw);
    let moved = cam.transformed(&r, &root, &Vec3::zeros());
    let rotated = render_posed(&av, &params, &moved, &s).unwrap();
    let d = mean_abs_diff(&canonical.features, &rotated.features);
    outcome(d < 1e-3, format!("mean abs diff {d:.3e} for a 90 degree yaw"))
}

fn criterion_10() -> Outcome {
    let s = NoiseSchedule::new(1000, 1e-4, 2e-2).unwrap();
    let decreasing = s.alpha_bars().windows(2).all(|w| w[1] < w[0]);
    let first = s.alpha_bar(1).unwrap() == 1.0 - 1e-4;
    let rng = CounterRng::new(10);
    let n = 100_000;
    let mut worst: f64 = 0.0;
    for t in [1, 250, 500, 1000] {
        let ab = s.alpha_bar(t).unwrap();
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..n {
            let z = ab.sqrt() * rng.normal(t as u64, 2 * i) + (1.0 - ab).sqrt() * rng.normal(t as u64, 2 * i + 1);
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        // standard error of the sample variance of a unit Gaussian
        let sigma = (2.0 / (n as f64 - 1.0)).sqrt();
        worst = worst.max((var - 1.0).abs() / sigma);
    }
    outcome(
        decreasing && first && worst < 3.0,
        format!("decreasing={decreasing}, abar_1 exact={first}, worst variance deviation {worst:.2} sigma"),
    )
}

fn frames_clip(body: &ArticulatedBody, n: usize, seed: u64) -> MotionClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n)
        .map(|_| MotionFrame { scale: 1.0, translation: Vec3::zeros(), pose: random_pose(&mut rng, body.joint_count(), 0.3) })
        .collect();
    MotionClip { fps: 30.0, frames }
}

fn desk_run(body: &ArticulatedBody, dir: &std::path::Path) -> (Vec<u8>, Vec<Vec<u8>>) {
    let topo = SkeletonTopology::default_openpose();
    let mut cfg = TrainConfig::default();
    cfg.seed = 11;
    cfg.render.width = 32;
    cfg.render.height = 32;
    cfg.pretrain.iterations = 300;
    cfg.static_stage.iterations = 200;
    cfg.animate.iterations = 30;
    let mut field = desk_field(body, cfg.render.margin, 11);
    pretrain_init(&mut field, body, &cfg, &mut |_| {}).unwrap();
    let mut echo = EchoPredictor;
    let mesh = skin(body, &BodyParams::zero(body)).unwrap();
    let target: Vec<f64> = {
        let cam = sample_camera(&cfg.camera, Vec3::zeros(), (32, 32), &CounterRng::new(1), 0).unwrap();
        let mask = render_silhouette_bvh(&Bvh::build(&mesh.vertices, &mesh.faces), &cam);
        mask.data.iter().flat_map(|&m| [m as f64 * 0.7; 4]).collect()
    };
    let mut mock = MockPredictor::new(cfg.guidance.schedule().unwrap(), vec![target]).unwrap();
    train_static(&mut field, &mut mock, body, &topo, &cfg, &mut |_| {}).unwrap();
    let mut drn = DensityWeightNet::new(DrnConfig::for_body_height(body.height())).unwrap();
    let prior = PosePrior::from_config(&cfg.pose_prior, body, dir).unwrap();
    train_animatable(&mut field, &mut drn, &mut echo, body, &topo, &prior, &cfg, &mut |_| {}).unwrap();
    let ckpt = Checkpoint { field, extra: Some(drn.to_block()) };
    let bytes = ckpt.encode();
    let scene = Scene::new(
        4,
        vec![SceneItem {
            kind: SceneItemKind::Avatar(Box::new(Avatar::new(body.clone(), ckpt).unwrap())),
            placement: Placement::default(),
            motion: Some(frames_clip(body, 2, 11)),
        }],
    )
    .unwrap();
    let cams = (0..2).map(|i| Camera::orbit(Vec3::zeros(), 2.5, i as f64, 0.1, 0.7, (32, 32)).unwrap()).collect();
    let files = render_sequence(&scene, &CameraPath::PerFrame(cams), dir, &settings(24)).unwrap();
    (bytes, files.iter().map(|f| std::fs::read(f).unwrap()).collect())
}

fn criterion_11() -> Outcome {
    let body = body();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = pool.install(|| (desk_run(&body, &tmp.path().join("a")), desk_run(&body, &tmp.path().join("b"))));
    let same_ckpt = a.0 == b.0;
    let same_frames = a.1 == b.1 && !a.1.is_empty();
    outcome(
        same_ckpt && same_frames,
        format!("checkpoints identical={same_ckpt} ({} bytes), frames identical={same_frames}", a.0.len()),
    )
}

/// Linear triangulation from projection matrices built off the camera basis.
fn triangulate(cams: &[Camera], pts: &[(f64, f64)]) -> Vec3 {
    let mut a = nalgebra::DMatrix::<f64>::zeros(2 * cams.len(), 4);
    for (k, (cam, &(x, y))) in cams.iter().zip(pts).enumerate() {
        let (r, u, f) = cam.basis();
        let focal = cam.focal();
        let (cx, cy) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
        let rows = [r * focal + f * cx, -u * focal + f * cy, f];
        let mut p = Matrix3x4::zeros();
        for (i, row) in rows.iter().enumerate() {
            p.fixed_view_mut::<1, 3>(i, 0).copy_from(&row.transpose());
            p[(i, 3)] = -row.dot(&cam.position);
        }
        let p0: Vector4<f64> = p.row(0).transpose();
        let p1: Vector4<f64> = p.row(1).transpose();
        let p2: Vector4<f64> = p.row(2).transpose();
        a.row_mut(2 * k).copy_from(&(p2 * x - p0).transpose());
        a.row_mut(2 * k + 1).copy_from(&(p2 * y - p1).transpose());
    }
    let svd = a.svd(false, true);
    let v = svd.v_t.unwrap();
    let (i, _) = svd.singular_values.argmin();
    let h = v.row(i);
    Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3])
}

fn criterion_12(body: &ArticulatedBody, field: &RadianceField) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt_path = tmp.path().join("avatar.ckpt");
    let drn = DensityWeightNet::new(DrnConfig::for_body_height(body.height())).unwrap();
    skelfield_core::field::save_checkpoint(&Checkpoint { field: field.clone(), extra: Some(drn.to_block()) }, &ckpt_path).unwrap();
    let body_path = tmp.path().join("body.sklf");
    skelfield_core::body::save_body_archive(body, &body_path).unwrap();
    let before = (std::fs::read(&ckpt_path).unwrap(), std::fs::read(&body_path).unwrap());
    let clip = frames_clip(body, 10, 12);
    let av = Avatar::load(&ckpt_path, &body_path).unwrap();
    let scene = Scene::new(
        4,
        vec![SceneItem { kind: SceneItemKind::Avatar(Box::new(av)), placement: Placement::default(), motion: Some(clip.clone()) }],
    )
    .unwrap();
    let s = settings(24);
    let cams: Vec<Camera> = (0..10).map(|i| Camera::orbit(Vec3::zeros(), 2.5, 0.2 * i as f64, 0.1, 0.7, (32, 32)).unwrap()).collect();
    let clip_dir = tmp.path().join("clip");
    let files = render_sequence(&scene, &CameraPath::PerFrame(cams), &clip_dir, &s).unwrap();
    let after = (std::fs::read(&ckpt_path).unwrap(), std::fs::read(&body_path).unwrap());
    let untouched = before == after && files.len() == 10;

    let frame = 4;
    let orbit = CameraPath::orbit(frame, 4, Vec3::zeros(), 2.5, 0.3, 0.2, 0.7, (64, 64)).unwrap();
    let orbit_dir = tmp.path().join("orbit");
    render_sequence(&scene, &orbit, &orbit_dir, &s).unwrap();
    let manifest = parse_manifest(&std::fs::read_to_string(orbit_dir.join("manifest.txt")).unwrap()).unwrap();
    let cams: Vec<Camera> = manifest.iter().map(|e| e.camera.clone()).collect();
    let mesh = skin(body, &clip.params(manifest[0].clip_frame, &vec![0.0; body.shape_count()])).unwrap();
    let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
    let topo = SkeletonTopology::default_openpose();
    let track = topo.keypoint_index("r_wrist").unwrap();
    let observed: Vec<(f64, f64)> = cams
        .iter()
        .map(|c| {
            let m = conditioning_map(&topo, &mesh, &bvh, c, RasterStyle::for_resolution(64, 64)).unwrap();
            (m.keypoints[track].x, m.keypoints[track].y)
        })
        .collect();
    let x = triangulate(&cams, &observed);
    let err = cams
        .iter()
        .zip(&observed)
        .map(|(c, o)| {
            let p = c.project(&x);
            ((p.x - o.0).powi(2) + (p.y - o.1).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    let tracked = posed_keypoints(&topo, &mesh).unwrap()[track];
    outcome(
        untouched && err < 1.0 && manifest.len() == 4,
        format!(
            "checkpoint unchanged={untouched}, max reprojection error {err:.2e} px, triangulation offset {:.2e}",
            (x - tracked).norm()
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let limits = [1, 10, 30, 120, 60, 300, 300, 60, 60, 30, 600, 120];
    let mut failed = 0;
    let mut report = |n: usize, elapsed: Duration, o: Outcome| {
        let in_time = elapsed.as_secs_f64() <= limits[n - 1] as f64;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2}: {} ({}; {:.1}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            limits[n - 1]
        );
    };
    let simple: [(usize, fn() -> Outcome); 7] =
        [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5), (6, criterion_6), (10, criterion_10)];
    for (n, f) in simple {
        if wanted(n) {
            let t = Instant::now();
            let o = f();
            report(n, t.elapsed(), o);
        }
    }
    if [7, 8, 9, 12].iter().any(|&n| wanted(n)) {
        let body = body();
        let t = Instant::now();
        let (o, field) = criterion_7(&body);
        let elapsed = t.elapsed();
        if wanted(7) {
            report(7, elapsed, o);
        }
        let dependent: [(usize, fn(&ArticulatedBody, &RadianceField) -> Outcome); 3] =
            [(8, criterion_8), (9, criterion_9), (12, criterion_12)];
        for (n, f) in dependent {
            if wanted(n) {
                let t = Instant::now();
                let o = f(&body, &field);
                report(n, t.elapsed(), o);
            }
        }
    }
    if wanted(11) {
        let t = Instant::now();
        let o = criterion_11();
        report(11, t.elapsed(), o);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
