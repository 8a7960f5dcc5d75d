use super::{posed_keypoints, SkeletonTopology, TopologyError};
use crate::body::PosedMesh;
use crate::camera::{Camera, Projection};
use crate::geometry::Bvh;
use crate::image::RgbImage;

use super::visibility::{default_occlusion_epsilon, occlusion_cull_bvh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterStyle {
    /// Side of the square brush stamped along each bone, pixels.
    pub line_width: u32,
    /// Radius of the disc drawn at each visible keypoint, pixels.
    pub keypoint_radius: u32,
}

impl RasterStyle {
    /// 4 px lines at 512 pixels, scaled with the shorter image side.
    pub fn for_resolution(width: u32, height: u32) -> Self {
        let w = ((4.0 * width.min(height) as f64 / 512.0).round() as u32).max(1);
        Self { line_width: w, keypoint_radius: w }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedKeypoint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningMap {
    pub image: RgbImage,
    pub keypoints: Vec<ProjectedKeypoint>,
}

struct Canvas<'a> {
    image: &'a mut RgbImage,
}

impl Canvas<'_> {
    fn plot(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && x < self.image.width as i64 && y < self.image.height as i64 {
            self.image.put(x as u32, y as u32, color);
        }
    }

    fn stamp(&mut self, x: i64, y: i64, width: u32, color: [u8; 3]) {
        let lo = -((width as i64 - 1) / 2);
        let hi = width as i64 / 2;
        for dy in lo..=hi {
            for dx in lo..=hi {
                self.plot(x + dx, y + dy, color);
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), width: u32, color: [u8; 3]) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.stamp(x, y, width, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, radius: u32, color: [u8; 3]) {
        let r = radius as f64;
        let (x0, x1) = ((cx - r).floor() as i64, (cx + r).ceil() as i64);
        let (y0, y1) = ((cy - r).floor() as i64, (cy + r).ceil() as i64);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (ddx, ddy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if ddx * ddx + ddy * ddy <= r * r {
                    self.plot(x, y, color);
                }
            }
        }
    }
}

/// Liang-Barsky clip of a segment to the rectangle `[lo, hi]^2`-style box.
fn clip(a: (f64, f64), b: (f64, f64), min: (f64, f64), max: (f64, f64)) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0 - min.0), (dx, max.0 - a.0), (-dy, a.1 - min.1), (dy, max.1 - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some(((a.0 + t0 * dx, a.1 + t0 * dy), (a.0 + t1 * dx, a.1 + t1 * dy)))
}

/// Draws visible bones, then visible keypoints, on a black canvas.
pub fn rasterize_skeleton(
    topology: &SkeletonTopology,
    projected: &[Projection],
    visibility: &[bool],
    (width, height): (u32, u32),
    style: RasterStyle,
) -> ConditioningMap {
    let mut image = RgbImage::black(width, height);
    let keypoints: Vec<ProjectedKeypoint> = projected
        .iter()
        .enumerate()
        .map(|(i, p)| ProjectedKeypoint {
            x: p.x,
            y: p.y,
            depth: p.depth,
            visible: p.valid && visibility.get(i).copied().unwrap_or(false) && p.x.is_finite() && p.y.is_finite(),
        })
        .collect();
    let pad = (style.line_width.max(style.keypoint_radius) + 1) as f64;
    let (min, max) = ((-pad, -pad), (width as f64 + pad, height as f64 + pad));
    let mut canvas = Canvas { image: &mut image };
    for bone in topology.bones() {
        let (Some(a), Some(b)) = (keypoints.get(bone.a), keypoints.get(bone.b)) else { continue };
        if !(a.visible && b.visible) {
            continue;
        }
        if let Some((p, q)) = clip((a.x, a.y), (b.x, b.y), min, max) {
            let ip = (p.0.floor() as i64, p.1.floor() as i64);
            let iq = (q.0.floor() as i64, q.1.floor() as i64);
            canvas.line(ip, iq, style.line_width, bone.color);
        }
    }
    for (kp, def) in keypoints.iter().zip(topology.keypoints()) {
        if kp.visible && kp.x > min.0 && kp.x < max.0 && kp.y > min.1 && kp.y < max.1 {
            canvas.disc(kp.x, kp.y, style.keypoint_radius, def.color);
        }
    }
    ConditioningMap { image, keypoints }
}

/// Full pipeline for a posed body: keypoints, projection, facial culling against
/// `bvh` (built over `mesh`), rasterization at the camera resolution.
pub fn conditioning_map(
    topology: &SkeletonTopology,
    mesh: &PosedMesh,
    bvh: &Bvh,
    camera: &Camera,
    style: RasterStyle,
) -> Result<ConditioningMap, TopologyError> {
    let kps = posed_keypoints(topology, mesh)?;
    let projected: Vec<Projection> = kps.iter().map(|p| camera.project(p)).collect();
    let eps = default_occlusion_epsilon(&mesh.vertices);
    let visible = occlusion_cull_bvh(&kps, &topology.facial_flags(), bvh, camera, eps);
    Ok(rasterize_skeleton(topology, &projected, &visible, (camera.width, camera.height), style))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Bone, Keypoint};

    fn two_point_topology() -> SkeletonTopology {
        let kp = |name: &str, color| Keypoint { name: name.into(), facial: false, color, map: vec![(0, 1.0)], offset: None };
        SkeletonTopology::new(1, vec![kp("a", [255, 0, 0]), kp("b", [0, 0, 255])], vec![Bone { a: 0, b: 1, color: [0, 255, 0] }])
            .unwrap()
    }

    fn proj(x: f64, y: f64) -> Projection {
        Projection { x, y, depth: 1.0, valid: true }
    }

    #[test]
    fn invisible_keypoints_give_black_image() {
        let t = two_point_topology();
        let m = rasterize_skeleton(&t, &[proj(4.5, 4.5), proj(20.5, 4.5)], &[false, false], (32, 16), RasterStyle::for_resolution(32, 16));
        assert!(m.image.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn one_bone_one_segment() {
        let t = two_point_topology();
        let style = RasterStyle { line_width: 1, keypoint_radius: 1 };
        let m = rasterize_skeleton(&t, &[proj(4.5, 4.5), proj(20.5, 4.5)], &[true, true], (32, 16), style);
        for x in 0..32 {
            for y in 0..16 {
                let c = m.image.get(x, y);
                // radius-1 discs cover the pixel and its 4-neighbours
                let near = |cx: i32| (x as i32 - cx).abs() + (y as i32 - 4).abs() <= 1;
                let expect = if near(4) {
                    [255, 0, 0]
                } else if near(20) {
                    [0, 0, 255]
                } else if y == 4 && (5..=19).contains(&x) {
                    [0, 255, 0]
                } else {
                    [0, 0, 0]
                };
                assert_eq!(c, expect, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn bone_with_hidden_endpoint_not_drawn() {
        let t = two_point_topology();
        let style = RasterStyle { line_width: 2, keypoint_radius: 2 };
        let m = rasterize_skeleton(&t, &[proj(4.5, 4.5), proj(20.5, 4.5)], &[true, false], (32, 16), style);
        assert!(!m.image.data.chunks(3).any(|c| c == [0, 255, 0]));
        assert!(m.image.data.chunks(3).any(|c| c == [255, 0, 0]));
    }

    #[test]
    fn deterministic_output() {
        let t = two_point_topology();
        let p = [proj(-40.0, 3.3), proj(70.2, 12.9)];
        let style = RasterStyle::for_resolution(512, 512);
        let a = rasterize_skeleton(&t, &p, &[true, true], (64, 64), style);
        let b = rasterize_skeleton(&t, &p, &[true, true], (64, 64), style);
        assert_eq!(a.image.encode_ppm(), b.image.encode_ppm());
        assert!(a.image.data.iter().any(|&v| v != 0));
    }

    #[test]
    fn default_width_scales() {
        assert_eq!(RasterStyle::for_resolution(512, 512).line_width, 4);
        assert_eq!(RasterStyle::for_resolution(64, 64).line_width, 1);
        assert_eq!(RasterStyle::for_resolution(1024, 768).line_width, 6);
    }

    #[test]
    fn far_offscreen_segment_is_clipped() {
        let t = two_point_topology();
        let m = rasterize_skeleton(&t, &[proj(-1e12, 5.5), proj(1e12, 5.5)], &[true, true], (16, 16), RasterStyle { line_width: 1, keypoint_radius: 1 });
        for x in 0..16 {
            assert_eq!(m.image.get(x, 5), [0, 255, 0]);
        }
    }
}
