//! Marching cubes over a regular grid of corner samples.
//!
//! The 256-case triangle table is derived at first use from one rule: on
//! every cube face, corners above the iso level are connected and corners
//! at or below it are cut off one by one. Neighboring cubes see the same
//! face values and therefore cut shared faces the same way, so the output
//! is closed wherever the level set stays strictly inside the grid.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};

use crate::mesh::{Aabb, TriMesh};

/// Edge parameters are clamped away from the corners by this fraction so
/// that vertices on distinct edges never coincide.
const EDGE_EPS: f64 = 1e-6;

/// Scalar samples at the corners of an `nx × ny × nz` lattice spanning a box.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    res: [usize; 3],
    bounds: Aabb,
    values: Vec<f64>,
}

impl ScalarGrid {
    /// `values` is indexed `x + nx·(y + ny·z)`.
    pub fn new(res: [usize; 3], bounds: Aabb, values: Vec<f64>) -> Self {
        assert!(res.iter().all(|&n| n >= 2), "grid needs at least two samples per axis");
        assert_eq!(values.len(), res[0] * res[1] * res[2]);
        assert!(values.iter().all(|v| v.is_finite()), "grid values must be finite");
        Self { res, bounds, values }
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn(res: [usize; 3], bounds: Aabb, f: impl Fn(&Point3<f64>) -> f64 + Sync) -> Self {
        use rayon::prelude::*;
        let probe = Self { res, bounds, values: Vec::new() };
        let values = (0..res[0] * res[1] * res[2]).into_par_iter().map(|i| f(&probe.point_at(i))).collect();
        Self::new(res, bounds, values)
    }

    /// Lattice points in index order.
    pub fn points(res: [usize; 3], bounds: Aabb) -> Vec<Point3<f64>> {
        let probe = Self { res, bounds, values: Vec::new() };
        (0..res[0] * res[1] * res[2]).map(|i| probe.point_at(i)).collect()
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.res
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Spacing between lattice points per axis.
    pub fn cell_size(&self) -> Vector3<f64> {
        let e = self.bounds.extent();
        Vector3::new(
            e.x / (self.res[0] - 1) as f64,
            e.y / (self.res[1] - 1) as f64,
            e.z / (self.res[2] - 1) as f64,
        )
    }

    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.res[0] * (y + self.res[1] * z)
    }

    fn point(&self, x: usize, y: usize, z: usize) -> Point3<f64> {
        let e = self.bounds.extent();
        let f = |i: usize, n: usize| i as f64 / (n - 1) as f64;
        Point3::new(
            self.bounds.min.x + e.x * f(x, self.res[0]),
            self.bounds.min.y + e.y * f(y, self.res[1]),
            self.bounds.min.z + e.z * f(z, self.res[2]),
        )
    }

    fn point_at(&self, i: usize) -> Point3<f64> {
        let (nx, ny) = (self.res[0], self.res[1]);
        self.point(i % nx, (i / nx) % ny, i / (nx * ny))
    }

    /// Sets every sample on the outer faces of the lattice to `value`.
    pub fn fill_border(&mut self, value: f64) {
        let [nx, ny, nz] = self.res;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1 {
                        let i = self.index(x, y, z);
                        self.values[i] = value;
                    }
                }
            }
        }
    }
}

/// Corner `i` of the unit cube sits at `(i & 1, (i >> 1) & 1, (i >> 2) & 1)`.
fn corner(i: usize) -> [usize; 3] {
    [i & 1, (i >> 1) & 1, (i >> 2) & 1]
}

/// The 12 cube edges as corner pairs, the lower corner first.
fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut k = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                out[k] = (c, c | (1 << axis));
                k += 1;
            }
        }
    }
    out
}

/// Corners of each cube face, counter-clockwise seen from outside.
fn faces() -> [[usize; 4]; 6] {
    let mut out = [[0; 4]; 6];
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let base = side << axis;
            let c = |du: usize, dv: usize| base | (du << u) | (dv << v);
            // (u, v, axis) is right-handed, so u→v is counter-clockwise
            // seen from +axis.
            out[axis * 2 + side] =
                if side == 1 { [c(0, 0), c(1, 0), c(1, 1), c(0, 1)] } else { [c(0, 0), c(0, 1), c(1, 1), c(1, 0)] };
        }
    }
    out
}

/// Index standing for a loop's center vertex in [`Loop::tris`].
pub const LOOP_CENTER: u8 = 12;

/// One closed iso-line loop on the cube boundary and its triangulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    /// Crossing edges in loop order.
    pub ring: Vec<u8>,
    /// Triangles over ring edges, or [`LOOP_CENTER`].
    pub tris: Vec<[u8; 3]>,
}

/// Triangulates a loop as a fan whose diagonals never join two edges of
/// the same cube face. Such a diagonal would lie on the face, where the
/// neighboring cube may emit it too. Loops without a safe fan get a
/// center vertex.
fn triangulate(ring: &[u8], shares_face: impl Fn(u8, u8) -> bool) -> Vec<[u8; 3]> {
    let n = ring.len();
    let at = |i: usize| ring[i % n];
    let safe = (0..n).find(|&s| (2..n - 1).all(|k| !shares_face(at(s), at(s + k))));
    match safe {
        Some(s) => (1..n - 1).map(|k| [at(s), at(s + k + 1), at(s + k)]).collect(),
        None => (0..n).map(|k| [LOOP_CENTER, at(k + 1), at(k)]).collect(),
    }
}

/// Iso-line loops for each of the 256 inside/outside corner patterns.
pub fn case_table() -> &'static [Vec<Loop>; 256] {
    static TABLE: OnceLock<[Vec<Loop>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let edges = edges();
        let faces = faces();
        let edge_id = |a: usize, b: usize| -> u8 {
            edges.iter().position(|&(p, q)| (p, q) == (a, b) || (q, p) == (a, b)).expect("cube edge") as u8
        };
        let on_face = |e: u8, f: &[usize; 4]| {
            let (a, b) = edges[e as usize];
            f.contains(&a) && f.contains(&b)
        };
        let shares_face = |a: u8, b: u8| faces.iter().any(|f| on_face(a, f) && on_face(b, f));
        std::array::from_fn(|case| {
            let inside = |c: usize| case & (1 << c) != 0;
            // Directed segments from an exit crossing to the next entry
            // crossing, walking each face counter-clockwise from outside.
            let mut next: [Option<u8>; 12] = [None; 12];
            for f in &faces {
                let crossings: Vec<(u8, bool)> = (0..4)
                    .filter_map(|k| {
                        let (a, b) = (f[k], f[(k + 1) % 4]);
                        (inside(a) != inside(b)).then(|| (edge_id(a, b), inside(a)))
                    })
                    .collect();
                for (i, &(e, exit)) in crossings.iter().enumerate() {
                    if exit {
                        let (entry, is_exit) = crossings[(i + 1) % crossings.len()];
                        debug_assert!(!is_exit);
                        next[e as usize] = Some(entry);
                    }
                }
            }
            let mut loops = Vec::new();
            let mut used = [false; 12];
            for start in 0..12 {
                if used[start] || next[start].is_none() {
                    continue;
                }
                let mut ring = vec![start as u8];
                used[start] = true;
                let mut cur = next[start].unwrap();
                while cur as usize != start {
                    used[cur as usize] = true;
                    ring.push(cur);
                    cur = next[cur as usize].expect("crossings close into loops");
                }
                let tris = triangulate(&ring, shares_face);
                loops.push(Loop { ring, tris });
            }
            loops
        })
    })
}

/// Extracts the `iso` level set. Samples strictly above `iso` are inside;
/// triangles face away from them.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> TriMesh {
    let table = case_table();
    let edges = edges();
    let [nx, ny, nz] = grid.res;
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    // Vertex index per lattice edge, keyed by (lower corner index, axis).
    let mut lookup: HashMap<(usize, usize), u32> = HashMap::new();
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let mut case = 0;
                let mut vals = [0.0; 8];
                for (c, v) in vals.iter_mut().enumerate() {
                    let [dx, dy, dz] = corner(c);
                    *v = grid.values[grid.index(x + dx, y + dy, z + dz)];
                    if *v > iso {
                        case |= 1 << c;
                    }
                }
                let loops = &table[case];
                if loops.is_empty() {
                    continue;
                }
                let mut vid = [u32::MAX; 12];
                for lp in loops {
                    for &e in &lp.ring {
                        let e = e as usize;
                        let (a, b) = edges[e];
                        let [ax, ay, az] = corner(a);
                        let axis = (a ^ b).trailing_zeros() as usize;
                        let key = (grid.index(x + ax, y + ay, z + az), axis);
                        vid[e] = *lookup.entry(key).or_insert_with(|| {
                            let t = ((iso - vals[a]) / (vals[b] - vals[a])).clamp(EDGE_EPS, 1.0 - EDGE_EPS);
                            let [bx, by, bz] = corner(b);
                            let pa = grid.point(x + ax, y + ay, z + az);
                            let pb = grid.point(x + bx, y + by, z + bz);
                            vertices.push(pa + (pb - pa) * t);
                            (vertices.len() - 1) as u32
                        });
                    }
                    let mut center = u32::MAX;
                    if lp.tris.iter().any(|t| t.contains(&LOOP_CENTER)) {
                        let sum: Vector3<f64> = lp.ring.iter().map(|&e| vertices[vid[e as usize] as usize].coords).sum();
                        vertices.push(Point3::from(sum / lp.ring.len() as f64));
                        center = (vertices.len() - 1) as u32;
                    }
                    let id = |e: u8| if e == LOOP_CENTER { center } else { vid[e as usize] };
                    for t in &lp.tris {
                        faces.push([id(t[0]), id(t[1]), id(t[2])]);
                    }
                }
            }
        }
    }
    TriMesh::new(vertices, faces).expect("marching cubes indices are valid")
}
