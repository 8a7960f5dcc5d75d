//! Fast invariant checks run by `skelfield check`.

use crate::articulation::{build_vertex_index, nearest_brute_force};
use crate::body::{make_synthetic_body, skin, BodyParams, SyntheticBodyConfig};
use crate::camera::Camera;
use crate::field::{backprop_render, generate_rays, render, Encoding, FieldConfig, FieldEval, RadianceField, Sampling};
use crate::geometry::{intersect_triangle, Aabb, Bvh, Ray, Vec3};
use crate::guidance::{sds_gradient, NoiseSchedule, WeightMode};
use crate::rng::CounterRng;
use crate::skeleton::{default_occlusion_epsilon, occlusion_cull_bvh, posed_keypoints, SkeletonTopology};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn random_pose(rng: &CounterRng, draw: u64, joints: usize, max: f64) -> Vec<Vec3> {
    (0..joints)
        .map(|j| {
            if j == 0 {
                return Vec3::zeros();
            }
            let u = |a: u64| max * (2.0 * rng.uniform(draw, 3 * j as u64 + a) - 1.0);
            Vec3::new(u(0), u(1), u(2))
        })
        .collect()
}

fn lbs_identity() -> CheckResult {
    let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
    let mesh = skin(&body, &BodyParams::zero(&body)).expect("zero params are valid");
    let dev = mesh.vertices.iter().zip(body.template_vertices()).map(|(a, b)| (a - b).abs().max()).fold(0.0, f64::max);
    CheckResult { name: "lbs-identity", pass: dev < 1e-6, detail: format!("max deviation {dev:.2e}") }
}

fn nearest_vertex() -> CheckResult {
    let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
    let rng = CounterRng::new(1);
    let mesh = skin(&body, &BodyParams::with_pose(&body, random_pose(&rng, 0, 24, 0.5))).expect("valid pose");
    let index = build_vertex_index(&mesh);
    let b = Aabb::from_points(&mesh.vertices).expanded(0.2);
    let mut agree = 0;
    for i in 0..200u64 {
        let q = Vec3::from_fn(|a, _| b.min[a] + (b.max[a] - b.min[a]) * rng.uniform(1000 + i, a as u64));
        let (id, d) = index.nearest(&q).expect("non-empty index");
        let (bid, bd) = nearest_brute_force(&mesh.vertices, &q).expect("non-empty mesh");
        agree += (id == bid || (d - bd).abs() <= 1e-9) as usize;
    }
    CheckResult { name: "nearest-vertex", pass: agree == 200, detail: format!("{agree}/200 agree") }
}

fn occlusion() -> CheckResult {
    let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
    let topo = SkeletonTopology::default_openpose();
    let rng = CounterRng::new(2);
    let (mut agree, mut total) = (0, 0);
    for k in 0..20u64 {
        let mesh = skin(&body, &BodyParams::with_pose(&body, random_pose(&rng, k, 24, 0.6))).expect("valid pose");
        let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
        let cam = Camera::orbit(Vec3::zeros(), 2.0 + rng.uniform(50, k), 6.0 * rng.uniform(51, k), 0.3, 0.7, (32, 32))
            .expect("valid orbit");
        let kps = posed_keypoints(&topo, &mesh).expect("topology matches body");
        let facial = vec![true; kps.len()];
        let eps = default_occlusion_epsilon(&mesh.vertices);
        let fast = occlusion_cull_bvh(&kps, &facial, &bvh, &cam, eps);
        for (p, f) in kps.iter().zip(fast) {
            let to = p - cam.position;
            let dist = to.norm();
            let ray = Ray::new(cam.position, to / dist);
            let blocked = mesh.faces.iter().any(|t| {
                let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                intersect_triangle(&ray, &a, &b, &c).is_some_and(|t| t > 0.0 && t < dist - eps)
            });
            let slow = cam.project(p).valid && !blocked;
            agree += (slow == f) as usize;
            total += 1;
        }
    }
    CheckResult { name: "occlusion-culling", pass: agree == total, detail: format!("{agree}/{total} agree") }
}

fn render_gradient() -> CheckResult {
    let cfg = FieldConfig {
        encoding: Encoding::Frequency { frequencies: 2 },
        hidden: vec![16],
        channels: 3,
        density_bias: 0.0,
        density_scale: 2.0,
        output_init_scale: 1.0,
        seed: 3,
        ..FieldConfig::default()
    };
    let theta = RadianceField::new(cfg.clone()).expect("valid config").params_f64();
    let cam = Camera::orbit(Vec3::zeros(), 2.5, 0.3, 0.2, 0.8, (4, 4)).expect("valid orbit");
    let rays = generate_rays(&cam, None);
    let sampling = Sampling { samples: 12, jitter_seed: None };
    let bg = [0.2, 0.1, 0.3];
    let rng = CounterRng::new(4);
    let g: Vec<f64> = (0..48).map(|i| rng.normal(0, i)).collect();
    let loss = |t: &[f64]| -> f64 {
        let e = FieldEval::new(cfg.clone(), t.to_vec()).expect("valid params");
        render(&e, &rays, &sampling, &bg, None).features.iter().zip(&g).map(|(a, b)| a * b).sum()
    };
    let eval = FieldEval::new(cfg.clone(), theta.clone()).expect("valid params");
    let out = render(&eval, &rays, &sampling, &bg, None);
    let grads = backprop_render(&eval, None, &out, &g).expect("matching cache");
    let scale = grads.field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-5;
    let (mut ok, mut n) = (0, 0);
    for j in (0..theta.len()).step_by(7) {
        let mut t = theta.clone();
        t[j] += h;
        let a = loss(&t);
        t[j] -= 2.0 * h;
        let b = loss(&t);
        let fd = (a - b) / (2.0 * h);
        let an = grads.field[j];
        ok += ((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6 * scale).max(1e-300) < 1e-3) as usize;
        n += 1;
    }
    CheckResult { name: "render-gradient", pass: ok * 100 >= 99 * n, detail: format!("{ok}/{n} sampled parameters within 1e-3") }
}

fn schedule() -> CheckResult {
    let s = NoiseSchedule::ddpm_default();
    let decreasing = s.alpha_bars().windows(2).all(|w| w[1] < w[0]);
    let first = s.alpha_bar(1).ok() == Some(1.0 - 1e-4);
    let eps = [0.3, -1.2, 0.5];
    let zero = sds_gradient(&eps, &eps, 500, &s, WeightMode::Constant, true).is_ok_and(|g| g.grad.iter().all(|v| *v == 0.0));
    let pass = decreasing && first && zero;
    CheckResult { name: "schedule-and-sds", pass, detail: format!("decreasing={decreasing} first={first} fixed-point={}", zero) }
}

pub fn run_all() -> Vec<CheckResult> {
    vec![lbs_identity(), nearest_vertex(), occlusion(), render_gradient(), schedule()]
}
