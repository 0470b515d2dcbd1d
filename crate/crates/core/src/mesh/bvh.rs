//! Bounding volume hierarchy over the faces of a [`TriMesh`](super::TriMesh).

use nalgebra::{Point3, Vector3};

use super::geom::{closest_point_on_triangle, ray_triangle, RayHit};
use super::Aabb;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: range into `order`. Interior: `start` is the right child index,
    /// the left child immediately follows the node.
    start: u32,
    count: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

/// Median-split BVH. Immutable once built.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Point3<f64>; 3]>,
}

/// Closest-surface query result.
#[derive(Debug, Clone, Copy)]
pub struct Nearest {
    pub point: Point3<f64>,
    pub distance: f64,
    pub face: usize,
}

impl Bvh {
    pub fn build(vertices: &[Point3<f64>], faces: &[[u32; 3]]) -> Self {
        let tris: Vec<[Point3<f64>; 3]> = faces
            .iter()
            .map(|f| {
                [
                    vertices[f[0] as usize],
                    vertices[f[1] as usize],
                    vertices[f[2] as usize],
                ]
            })
            .collect();
        let centroids: Vec<Point3<f64>> = tris
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            build_rec(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        Self { nodes, order, tris }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Calls `f` for every triangle hit by the ray, in no particular order.
    pub fn for_each_ray_hit(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        eps: f64,
        mut f: impl FnMut(usize, RayHit),
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            if !slab_test(&node.bounds, origin, &inv, eps) {
                continue;
            }
            if node.is_leaf() {
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = &self.tris[tri as usize];
                    if let Some(hit) = ray_triangle(origin, dir, a, b, c, eps) {
                        f(tri as usize, hit);
                    }
                }
            } else {
                stack.push(node.start as usize);
                stack.push(idx + 1);
            }
        }
    }

    /// Exact closest point on the mesh surface.
    pub fn nearest(&self, p: &Point3<f64>) -> Option<Nearest> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = Nearest { point: *p, distance: f64::INFINITY, face: usize::MAX };
        let mut best_sq = f64::INFINITY;
        let mut stack = vec![(0usize, self.nodes[0].bounds.distance_sq(p))];
        while let Some((idx, lower)) = stack.pop() {
            if lower > best_sq {
                continue;
            }
            let node = &self.nodes[idx];
            if node.is_leaf() {
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = &self.tris[tri as usize];
                    let q = closest_point_on_triangle(p, a, b, c);
                    let d = (q - p).norm_squared();
                    // Ties resolve to the lowest face index for determinism.
                    if d < best_sq || (d == best_sq && (tri as usize) < best.face) {
                        best_sq = d;
                        best = Nearest { point: q, distance: 0.0, face: tri as usize };
                    }
                }
            } else {
                let left = idx + 1;
                let right = node.start as usize;
                let dl = self.nodes[left].bounds.distance_sq(p);
                let dr = self.nodes[right].bounds.distance_sq(p);
                // Visit the closer child first (pushed last).
                if dl <= dr {
                    stack.push((right, dr));
                    stack.push((left, dl));
                } else {
                    stack.push((left, dl));
                    stack.push((right, dr));
                }
            }
        }
        best.distance = best_sq.sqrt();
        Some(best)
    }
}

fn build_rec(
    tris: &[[Point3<f64>; 3]],
    centroids: &[Point3<f64>],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &i in &order[start..end] {
        for v in &tris[i as usize] {
            bounds.grow(v);
        }
        cbounds.grow(&centroids[i as usize]);
    }
    let idx = nodes.len();
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes.push(Node { bounds, start: start as u32, count: count as u32 });
        return idx;
    }
    let extent = cbounds.max - cbounds.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = start + count / 2;
    order[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
        let ca = centroids[a as usize][axis];
        let cb = centroids[b as usize][axis];
        ca.total_cmp(&cb).then(a.cmp(&b))
    });
    nodes.push(Node { bounds, start: 0, count: 0 });
    build_rec(tris, centroids, order, start, mid, nodes);
    let right = build_rec(tris, centroids, order, mid, end, nodes);
    nodes[idx].start = right as u32;
    idx
}

fn slab_test(b: &Aabb, origin: &Point3<f64>, inv: &Vector3<f64>, eps: f64) -> bool {
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for k in 0..3 {
        let lo = b.min[k] - eps;
        let hi = b.max[k] + eps;
        if inv[k].is_infinite() {
            if origin[k] < lo || origin[k] > hi {
                return false;
            }
            continue;
        }
        let t1 = (lo - origin[k]) * inv[k];
        let t2 = (hi - origin[k]) * inv[k];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmax >= tmin.max(-eps)
}
