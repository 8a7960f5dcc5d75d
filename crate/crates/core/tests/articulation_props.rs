//! Property tests for the articulated deformation and the density weighting network.

use proptest::prelude::*;
use skelfield_core::animation::{render_posed, Avatar, RenderSettings};
use skelfield_core::articulation::{DensityWeightNet, DrnConfig};
use skelfield_core::body::{joint_locations, make_synthetic_body, rodrigues, BodyParams, SyntheticBodyConfig};
use skelfield_core::camera::Camera;
use skelfield_core::field::{Checkpoint, Encoding, FieldConfig, RadianceField, Sampling};
use skelfield_core::geometry::Vec3;
use skelfield_core::trainer::field_bounds;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn random_net(seed: u64) -> DensityWeightNet {
    let cfg = DrnConfig { output_init_scale: 0.5, seed, ..DrnConfig::for_body_height(1.7) };
    DensityWeightNet::new(cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weight_strictly_decreases_with_distance(seed in 0u64..500, p in vec3(1.0), v in vec3(1.0), k1 in -8.0f64..8.0, gap in 0.01f64..4.0) {
        let net = random_net(seed);
        let eval = net.evaluator();
        let a = net.config().sharpness;
        let d_ref = eval.reference_distance(&p, &v);
        let near = eval.weight(&p, &v, d_ref + k1 * a);
        let far = eval.weight(&p, &v, d_ref + (k1 + gap) * a);
        prop_assert!(far < near, "{} !< {}", far, near);
    }

    #[test]
    fn far_samples_are_suppressed(seed in 0u64..500, p in vec3(1.0), v in vec3(1.0), extra in 5.0f64..50.0) {
        let net = random_net(seed);
        let eval = net.evaluator();
        let a = net.config().sharpness;
        let d = eval.reference_distance(&p, &v) + extra * a;
        prop_assert!(eval.weight(&p, &v, d) < 0.01);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn global_rigid_pose_matches_transformed_camera(xi in vec3(1.5), az in -3.0f64..3.0) {
        let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
        let cfg = FieldConfig {
            encoding: Encoding::Frequency { frequencies: 3 },
            hidden: vec![16],
            density_bias: 0.5,
            density_scale: 3.0,
            output_init_scale: 1.0,
            seed: 9,
            ..FieldConfig::default()
        }
        .with_bounds(&field_bounds(&body, 0.1));
        let avatar = Avatar::new(body.clone(), Checkpoint { field: RadianceField::new(cfg).unwrap(), extra: None }).unwrap();
        let settings = RenderSettings { sampling: Sampling { samples: 24, jitter_seed: None }, ..RenderSettings::default() };
        let cam = Camera::orbit(Vec3::new(0.0, -0.2, 0.0), 2.6, az, 0.2, 0.8, (12, 12)).unwrap();
        let rest = render_posed(&avatar, &BodyParams::zero(&body), &cam, &settings).unwrap();
        let mut pose = vec![Vec3::zeros(); 24];
        pose[0] = xi;
        let pivot = joint_locations(&body, &vec![0.0; body.shape_count()]).unwrap()[0];
        let moved_cam = cam.transformed(&rodrigues(&xi), &pivot, &Vec3::zeros());
        let moved = render_posed(&avatar, &avatar.params(pose), &moved_cam, &settings).unwrap();
        prop_assert!(rest.opacity.iter().cloned().fold(0.0, f64::max) > 0.2, "render is empty");
        let worst = rest.features.iter().zip(&moved.features).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-4, "max pixel difference {}", worst);
    }
}
