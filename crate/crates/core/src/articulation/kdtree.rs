//! Static k-d tree over mesh vertices. Nearest-neighbour ties resolve to the
//! lowest vertex id.

use crate::geometry::{Aabb, Vec3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexIndex {
    points: Vec<Vec3>,
    /// Vertex ids, permuted so every leaf owns a contiguous range.
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl VertexIndex {
    pub fn build(points: &[Vec3]) -> Self {
        let mut index = Self { points: points.to_vec(), order: (0..points.len() as u32).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            let n = points.len();
            index.build_range(0, n);
        }
        index
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let bounds = Aabb::from_points(self.order[start..end].iter().map(|&i| &self.points[i as usize]));
        let extent = bounds.extent();
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis].total_cmp(&pts[b as usize][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_range(start, mid);
        let right = self.build_range(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> Vec3 {
        self.points[id]
    }

    /// Nearest vertex `(id, distance)`, or `None` for an empty index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, u32::MAX);
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((node, bound)) = stack.pop() {
            if bound > best.0 {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = (self.points[i as usize] - q).norm_squared();
                        if d2 < best.0 || (d2 == best.0 && i < best.1) {
                            best = (d2, i);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = q[axis] - value;
                    let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                    stack.push((far, diff * diff));
                    stack.push((near, bound));
                }
            }
        }
        Some((best.1 as usize, best.0.sqrt()))
    }
}

/// Linear scan with the same tie rule, for verification.
pub fn nearest_brute_force(points: &[Vec3], q: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let r = CounterRng::new(seed);
        (0..n as u64).map(|i| Vec3::new(r.normal(0, i), r.normal(1, i) * 2.0, r.uniform(2, i))).collect()
    }

    #[test]
    fn single_vertex() {
        let idx = VertexIndex::build(&[Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(idx.nearest(&Vec3::new(-5.0, 0.0, 9.0)).unwrap().0, 0);
        assert!(VertexIndex::build(&[]).nearest(&Vec3::zeros()).is_none());
    }

    #[test]
    fn matches_brute_force() {
        let pts = cloud(3000, 1);
        let idx = VertexIndex::build(&pts);
        let r = CounterRng::new(2);
        for i in 0..500u64 {
            let q = Vec3::new(r.normal(0, i) * 1.5, r.normal(1, i) * 2.5, r.normal(2, i));
            assert_eq!(idx.nearest(&q), nearest_brute_force(&pts, &q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_id() {
        let mut pts = cloud(100, 3);
        pts.push(pts[10]);
        pts.push(Vec3::new(5.0, 0.0, 0.0));
        pts.push(Vec3::new(7.0, 0.0, 0.0));
        let idx = VertexIndex::build(&pts);
        assert_eq!(idx.nearest(&pts[10]).unwrap().0, 10);
        let mid = Vec3::new(6.0, 0.0, 0.0);
        assert_eq!(idx.nearest(&mid).unwrap().0, 101);
    }

    #[test]
    fn rebuild_is_identical() {
        let pts = cloud(777, 4);
        assert_eq!(VertexIndex::build(&pts), VertexIndex::build(&pts));
    }
}
