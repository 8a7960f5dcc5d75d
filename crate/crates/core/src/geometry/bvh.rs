//! Bounding volume hierarchy over a triangle soup.
//!
//! Built once per posed mesh with a median split on the longest centroid
//! axis, then shared read-only by ray casts.

use super::{closest_point_on_triangle, intersect_triangle, Aabb, Ray, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bvh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    nodes: Vec<Node>,
}

impl Bvh {
    pub fn build(vertices: &[Vec3], faces: &[[u32; 3]]) -> Self {
        let mut order: Vec<usize> = (0..faces.len()).collect();
        let centroids: Vec<Vec3> = faces
            .iter()
            .map(|f| (vertices[f[0] as usize] + vertices[f[1] as usize] + vertices[f[2] as usize]) / 3.0)
            .collect();
        let mut bvh = Bvh {
            vertices: vertices.to_vec(),
            triangles: Vec::with_capacity(faces.len()),
            nodes: Vec::new(),
        };
        if !faces.is_empty() {
            bvh.build_range(faces, &centroids, &mut order[..], 0);
            bvh.triangles = order.iter().map(|&i| faces[i]).collect();
        }
        bvh
    }

    fn tri_bounds(&self, faces: &[[u32; 3]], idx: &[usize]) -> Aabb {
        let mut b = Aabb::empty();
        for &i in idx {
            for &v in &faces[i] {
                b.grow(&self.vertices[v as usize]);
            }
        }
        b
    }

    // `order` is a window into the global permutation starting at `start`.
    fn build_range(&mut self, faces: &[[u32; 3]], centroids: &[Vec3], order: &mut [usize], start: usize) -> usize {
        let bounds = self.tri_bounds(faces, order);
        let id = self.nodes.len();
        if order.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, count: order.len() });
            return id;
        }
        let cb = Aabb::from_points(order.iter().map(|&i| &centroids[i]));
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        self.nodes.push(Node::Leaf { bounds, start, count: 0 });
        let (lo, hi) = order.split_at_mut(mid);
        let left = self.build_range(faces, centroids, lo, start);
        let right = self.build_range(faces, centroids, hi, start + mid);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| *n.bounds()).unwrap_or_else(Aabb::empty)
    }

    fn corners(&self, tri: usize) -> (&Vec3, &Vec3, &Vec3) {
        let f = self.triangles[tri];
        (
            &self.vertices[f[0] as usize],
            &self.vertices[f[1] as usize],
            &self.vertices[f[2] as usize],
        )
    }

    fn inv_dir(ray: &Ray) -> Vec3 {
        Vec3::new(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z)
    }

    /// True if any triangle is hit with parameter in `(t_min, t_max)`.
    pub fn any_hit(&self, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        let inv = Self::inv_dir(ray);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().intersect(ray, &inv, t_min, t_max).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for tri in start..start + count {
                        let (a, b, c) = self.corners(tri);
                        if let Some(t) = intersect_triangle(ray, a, b, c) {
                            if t > t_min && t < t_max {
                                return true;
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        false
    }

    /// Ray parameter of the nearest hit in `(t_min, t_max)`.
    pub fn closest_hit(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let inv = Self::inv_dir(ray);
        let mut best = t_max;
        let mut found = false;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().intersect(ray, &inv, t_min, best).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for tri in start..start + count {
                        let (a, b, c) = self.corners(tri);
                        if let Some(t) = intersect_triangle(ray, a, b, c) {
                            if t > t_min && t < best {
                                best = t;
                                found = true;
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        found.then_some(best)
    }

    /// True if some triangle lies strictly closer than `radius` to `p`.
    pub fn any_within(&self, p: &Vec3, radius: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().distance_sq(p) >= r2 {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for tri in start..start + count {
                        let (a, b, c) = self.corners(tri);
                        if (closest_point_on_triangle(p, a, b, c) - p).norm_squared() < r2 {
                            return true;
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        false
    }
}
