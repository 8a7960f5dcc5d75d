//! Property tests for the body model against an independent forward-kinematics oracle.

use nalgebra::{Matrix3, Matrix4};
use proptest::prelude::*;
use skelfield_core::body::{
    joint_locations, make_synthetic_body, rest_pose, rodrigues, skin, ArticulatedBody, BodyParams, SyntheticBodyConfig,
};
use skelfield_core::geometry::Vec3;

fn body() -> ArticulatedBody {
    make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() })
}

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rigid(r: Matrix3<f64>, t: Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

/// Joint transforms composed link by link from the root, with the rest joint
/// location removed so they act on rest-pose vertices.
fn oracle_transforms(body: &ArticulatedBody, betas: &[f64], pose: &[Vec3]) -> Vec<Matrix4<f64>> {
    let j = joint_locations(body, betas).unwrap();
    let mut world: Vec<Option<Matrix4<f64>>> = vec![None; body.joint_count()];
    fn resolve(k: usize, body: &ArticulatedBody, j: &[Vec3], pose: &[Vec3], world: &mut [Option<Matrix4<f64>>]) -> Matrix4<f64> {
        if let Some(m) = world[k] {
            return m;
        }
        let m = match body.parent(k) {
            None => rigid(rodrigues(&pose[k]), j[k]),
            Some(p) => resolve(p, body, j, pose, world) * rigid(rodrigues(&pose[k]), j[k] - j[p]),
        };
        world[k] = Some(m);
        m
    }
    (0..body.joint_count())
        .map(|k| resolve(k, body, &j, pose, &mut world) * rigid(Matrix3::identity(), -j[k]))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rodrigues_fixes_axis_and_is_a_rotation(axis in vec3(4.0), tiny in prop::bool::ANY) {
        let xi = if tiny { axis * 1e-10 } else { axis };
        let r = rodrigues(&xi);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
        prop_assert!((r * xi - xi).norm() <= 1e-9 * (1.0 + xi.norm()));
    }

    #[test]
    fn zero_params_reproduce_rest_mesh(scale in 0.5f64..2.0, arms in 0.7f64..1.3, legs in 0.7f64..1.3, girth in 0.7f64..1.3) {
        let body = make_synthetic_body(&SyntheticBodyConfig {
            scale, arm_length: arms, leg_length: legs, girth, tessellation: 1, ..Default::default()
        });
        let mesh = skin(&body, &BodyParams::zero(&body)).unwrap();
        for (a, b) in mesh.vertices.iter().zip(body.template_vertices()) {
            prop_assert!((a - b).abs().max() < 1e-6);
        }
    }

    #[test]
    fn skinning_matches_stepwise_chain_and_convex_blend(
        pose in prop::collection::vec(vec3(0.8), 24),
        betas in prop::collection::vec(-1.0f64..1.0, 10),
        scale in 0.5f64..1.5,
        translation in vec3(2.0),
    ) {
        let body = body();
        let params = BodyParams { betas: betas.clone(), pose: pose.clone(), scale, translation };
        let mesh = skin(&body, &params).unwrap();
        let g = oracle_transforms(&body, &betas, &pose);
        let rest = rest_pose(&body, &betas, &pose).unwrap();
        for (i, v) in rest.iter().enumerate().step_by(7) {
            let mut blended = Vec3::zeros();
            let mut total = 0.0;
            for (k, gk) in g.iter().enumerate() {
                let w = body.skinning_weight(i, k);
                if w > 0.0 {
                    blended += w * (gk * v.push(1.0)).xyz();
                    total += w;
                }
            }
            prop_assert!((total - 1.0).abs() < 1e-6);
            let expected = blended * scale + translation;
            prop_assert!((mesh.vertices[i] - expected).abs().max() < 1e-6, "vertex {}", i);
        }
    }
}
