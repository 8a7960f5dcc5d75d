use rayon::prelude::*;

use crate::body::PosedMesh;
use crate::camera::Camera;
use crate::geometry::{Aabb, Bvh, Ray, Vec3};
use crate::image::RgbImage;

/// `1e-3` times the largest extent of the mesh bounds.
pub fn default_occlusion_epsilon(vertices: &[Vec3]) -> f64 {
    let b = Aabb::from_points(vertices.iter());
    if b.is_empty() {
        return 1e-3;
    }
    1e-3 * b.extent().max().max(1e-9)
}

/// Visibility of keypoints. Facial keypoints are hidden when the segment from
/// the camera reaches a triangle closer than `distance - epsilon`; other
/// keypoints are visible unless they lie in front of the near plane.
pub fn occlusion_cull_bvh(keypoints: &[Vec3], facial: &[bool], bvh: &Bvh, camera: &Camera, epsilon: f64) -> Vec<bool> {
    keypoints
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !camera.project(p).valid {
                return false;
            }
            if !facial.get(i).copied().unwrap_or(false) {
                return true;
            }
            let to = p - camera.position;
            let dist = to.norm();
            let ray = Ray::new(camera.position, to / dist);
            !bvh.any_hit(&ray, 0.0, dist - epsilon)
        })
        .collect()
}

pub fn occlusion_cull(keypoints: &[Vec3], facial: &[bool], mesh: &PosedMesh, camera: &Camera) -> Vec<bool> {
    let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
    occlusion_cull_bvh(keypoints, facial, &bvh, camera, default_occlusion_epsilon(&mesh.vertices))
}

/// Binary coverage mask, row-major, one byte (0 or 1) per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            let (a, b) = (*a != 0, *b != 0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let data = self.data.iter().flat_map(|&v| [v * 255; 3]).collect();
        RgbImage { width: self.width, height: self.height, data }
    }
}

/// Pixel-center any-hit coverage between the near and far planes.
pub fn render_silhouette_bvh(bvh: &Bvh, camera: &Camera) -> Mask {
    let (w, h) = (camera.width, camera.height);
    let mut data = vec![0u8; w as usize * h as usize];
    if !bvh.is_empty() {
        data.par_chunks_mut(w as usize).enumerate().for_each(|(j, row)| {
            for (i, px) in row.iter_mut().enumerate() {
                let ray = camera.pixel_ray(i as u32, j as u32);
                *px = bvh.any_hit(&ray, camera.near, camera.far) as u8;
            }
        });
    }
    Mask { width: w, height: h, data }
}

pub fn render_silhouette(mesh: &PosedMesh, camera: &Camera) -> Mask {
    render_silhouette_bvh(&Bvh::build(&mesh.vertices, &mesh.faces), camera)
}
