//! Triangle meshes, spatial queries and point sampling.
//!
//! [`TriMesh`] is the unit of all geometry I/O. Queries ([`TriMesh::inside`],
//! [`TriMesh::nearest_surface_distance`]) build a BVH on first use and are
//! read-only afterwards, so a mesh can be shared across threads freely.

mod bvh;
pub mod geom;
pub mod io;
pub mod primitives;
mod sample;

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::Rng;

pub use bvh::{Bvh, Nearest};
pub use sample::{sample_points, sample_points_in, SampleSet, SampleSource, SamplingConfig, SurfaceSampler};

/// Geometric tolerance for on-surface classification (meters).
pub const GEOM_EPS: f64 = 1e-6;

/// Instance id of the human/hand part.
pub const LABEL_HUMAN: u32 = 0;
/// Instance id of the object part.
pub const LABEL_OBJECT: u32 = 1;
/// Vertex label for "no evidence"; stored as `-1` in PLY files.
pub const LABEL_UNLABELED: u32 = u32::MAX;

/// Fixed ray directions for parity tests. The first is used unless a hit is
/// numerically grazing; the others are the deterministic fallbacks.
const RAY_DIRS: [[f64; 3]; 3] = [
    [0.5773502691896258, 0.5773502691896257, 0.5773502691896258],
    [-0.3062339382101434, 0.8511296058201587, 0.4263034823488036],
    [0.7316888688738209, -0.2126912319446013, -0.6476726427564377],
];

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("mesh is not watertight")]
    NonWatertight,
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("rotation is not orthonormal")]
    NonOrthonormalRotation,
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: u32, count: usize },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(&'static str),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Self { min, max }
    }

    /// The inverted box that any `grow` call replaces.
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    /// Box grown by `fraction` of its extent on every side.
    pub fn padded(&self, fraction: f64) -> Aabb {
        let pad = self.extent() * fraction;
        Aabb { min: self.min - pad, max: self.max + pad }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn clamp(&self, p: &Point3<f64>) -> Point3<f64> {
        p.sup(&self.min).inf(&self.max)
    }

    pub fn distance_sq(&self, p: &Point3<f64>) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    /// Uniform sample inside the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3<f64> {
        let e = self.extent();
        Point3::new(
            self.min.x + rng.random::<f64>() * e.x,
            self.min.y + rng.random::<f64>() * e.y,
            self.min.z + rng.random::<f64>() * e.z,
        )
    }
}

/// Indexed triangle mesh with optional per-vertex instance labels.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[u32; 3]>,
    labels: Option<Vec<u32>>,
    bvh: OnceLock<Bvh>,
    watertight: OnceLock<bool>,
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.faces == other.faces && self.labels == other.labels
    }
}

impl Default for TriMesh {
    fn default() -> Self {
        Self::from_parts(Vec::new(), Vec::new(), None)
    }
}

impl TriMesh {
    /// Builds a mesh, validating indices. Degenerate faces (repeated indices
    /// or zero area) are dropped; the number dropped is logged.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let (mesh, dropped) = Self::new_counting(vertices, faces)?;
        if dropped > 0 {
            log::warn!("dropped {dropped} degenerate faces");
        }
        Ok(mesh)
    }

    /// Like [`TriMesh::new`], returning the number of dropped degenerate faces.
    pub fn new_counting(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[u32; 3]>,
    ) -> Result<(Self, usize), MeshError> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(MeshError::IndexOutOfRange { face: fi, index: i, count: n });
                }
            }
        }
        let before = faces.len();
        let faces: Vec<[u32; 3]> = faces
            .into_iter()
            .filter(|f| !is_degenerate(&vertices, f))
            .collect();
        let dropped = before - faces.len();
        Ok((Self::from_parts(vertices, faces, None), dropped))
    }

    fn from_parts(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>, labels: Option<Vec<u32>>) -> Self {
        Self { vertices, faces, labels, bvh: OnceLock::new(), watertight: OnceLock::new() }
    }

    /// Attaches per-vertex instance labels.
    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self, MeshError> {
        if labels.len() != self.vertices.len() {
            return Err(MeshError::LabelCount { expected: self.vertices.len(), got: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Labels every vertex with `label`.
    pub fn with_uniform_label(self, label: u32) -> Self {
        let n = self.vertices.len();
        Self { labels: Some(vec![label; n]), ..self }
    }

    pub fn without_labels(self) -> Self {
        Self { labels: None, ..self }
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                0.5 * geom::double_area(&a, &b, &c)
            })
            .sum()
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
            })
            .sum()
    }

    /// Face label as the majority of its vertex labels; with three distinct
    /// labels the lowest wins.
    pub fn face_labels(&self) -> Option<Vec<u32>> {
        let labels = self.labels.as_ref()?;
        Some(
            self.faces
                .iter()
                .map(|f| {
                    let [a, b, c] = [labels[f[0] as usize], labels[f[1] as usize], labels[f[2] as usize]];
                    if a == b || a == c {
                        a
                    } else if b == c {
                        b
                    } else {
                        a.min(b).min(c)
                    }
                })
                .collect(),
        )
    }

    /// Every edge shared by exactly two faces with opposite orientation.
    pub fn is_watertight(&self) -> bool {
        *self.watertight.get_or_init(|| {
            if self.faces.is_empty() {
                return false;
            }
            let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.faces.len() * 3);
            for f in &self.faces {
                for k in 0..3 {
                    *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
                }
            }
            directed
                .iter()
                .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
        })
    }

    /// V − E + F over the referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        let mut used = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
                used.insert(a);
            }
        }
        used.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    pub fn bvh(&self) -> &Bvh {
        self.bvh.get_or_init(|| Bvh::build(&self.vertices, &self.faces))
    }

    /// Strict containment by ray parity. Points within [`GEOM_EPS`] of the
    /// surface count as outside.
    pub fn inside(&self, p: &Point3<f64>) -> Result<bool, MeshError> {
        if !self.is_watertight() {
            return Err(MeshError::NonWatertight);
        }
        Ok(self.inside_unchecked(p))
    }

    /// Ray-parity containment without the closed-manifold check.
    pub fn inside_unchecked(&self, p: &Point3<f64>) -> bool {
        let bvh = self.bvh();
        if bvh.is_empty() || !self.aabb().contains(p) {
            return false;
        }
        let mut last_parity = false;
        for dir in RAY_DIRS {
            let dir = Vector3::from(dir);
            let mut crossings = 0usize;
            let mut grazing = false;
            bvh.for_each_ray_hit(p, &dir, GEOM_EPS * 1e-3, |_, hit| {
                if hit.grazing {
                    grazing = true;
                } else {
                    crossings += 1;
                }
            });
            last_parity = crossings % 2 == 1;
            if !grazing {
                return last_parity;
            }
        }
        match bvh.nearest(p) {
            Some(n) if n.distance <= GEOM_EPS => false,
            _ => last_parity,
        }
    }

    /// Exact distance from `p` to the closest surface point.
    pub fn nearest_surface_distance(&self, p: &Point3<f64>) -> Result<f64, MeshError> {
        self.nearest(p).map(|n| n.distance)
    }

    pub fn nearest(&self, p: &Point3<f64>) -> Result<Nearest, MeshError> {
        self.bvh().nearest(p).ok_or(MeshError::EmptyMesh)
    }

    /// Similarity transform `v' = scale · R · v + t`.
    pub fn transform(
        &self,
        rotation: &Matrix3<f64>,
        translation: &Vector3<f64>,
        scale: f64,
    ) -> Result<TriMesh, MeshError> {
        check_rotation(rotation)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(MeshError::InvalidSampling("scale must be positive"));
        }
        let vertices = self
            .vertices
            .iter()
            .map(|v| Point3::from(rotation * v.coords * scale + translation))
            .collect();
        Ok(Self::from_parts(vertices, self.faces.clone(), self.labels.clone()))
    }

    /// Same topology and labels with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> TriMesh {
        assert_eq!(vertices.len(), self.vertices.len());
        Self::from_parts(vertices, self.faces.clone(), self.labels.clone())
    }

    /// Concatenates two meshes. Labels survive only if both carry them.
    pub fn merge(&self, other: &TriMesh) -> TriMesh {
        let offset = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self::from_parts(vertices, faces, labels)
    }

    /// Sub-mesh of the faces whose majority label equals `label`, with unused
    /// vertices removed.
    pub fn extract_label(&self, label: u32) -> Option<TriMesh> {
        let face_labels = self.face_labels()?;
        let labels = self.labels.as_ref()?;
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut new_labels = Vec::new();
        let mut faces = Vec::new();
        for (f, &fl) in self.faces.iter().zip(&face_labels) {
            if fl != label {
                continue;
            }
            let mut nf = [0u32; 3];
            for k in 0..3 {
                let i = f[k] as usize;
                if remap[i] == u32::MAX {
                    remap[i] = vertices.len() as u32;
                    vertices.push(self.vertices[i]);
                    new_labels.push(labels[i]);
                }
                nf[k] = remap[i];
            }
            faces.push(nf);
        }
        Some(Self::from_parts(vertices, faces, Some(new_labels)))
    }
}

fn is_degenerate(vertices: &[Point3<f64>], f: &[u32; 3]) -> bool {
    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
        return true;
    }
    let [a, b, c] = [vertices[f[0] as usize], vertices[f[1] as usize], vertices[f[2] as usize]];
    let longest = (b - a).norm_squared().max((c - b).norm_squared()).max((a - c).norm_squared());
    geom::double_area(&a, &b, &c) <= 1e-14 * longest
}

/// Orthonormal with determinant +1, to 1e-6.
pub fn check_rotation(r: &Matrix3<f64>) -> Result<(), MeshError> {
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err > 1e-6 || r.determinant() <= 0.0 || !r.iter().all(|x| x.is_finite()) {
        return Err(MeshError::NonOrthonormalRotation);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::primitives::{icosphere, unit_cube};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_center_inside_and_far_point_outside() {
        let s = icosphere(1.0, 3);
        assert!(s.inside(&Point3::origin()).unwrap());
        assert!(!s.inside(&Point3::new(2.0, 0.0, 0.0)).unwrap());
    }

    #[test]
    fn cube_point_inside() {
        let c = unit_cube();
        assert!(c.inside(&Point3::new(0.25, 0.75, 0.5)).unwrap());
    }

    #[test]
    fn inside_rejects_open_mesh() {
        let c = unit_cube();
        let open = TriMesh::new(c.vertices().to_vec(), c.faces()[1..].to_vec()).unwrap();
        assert!(matches!(open.inside(&Point3::origin()), Err(MeshError::NonWatertight)));
    }

    #[test]
    fn inside_on_grazing_axes_of_cube() {
        // Rays from the cube center along the first direction pass through a
        // vertex of the cube; the fallback must take over.
        let c = unit_cube();
        assert!(c.inside(&Point3::new(0.5, 0.5, 0.5)).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let p = Point3::new(
                rng.random_range(-0.5..1.5),
                rng.random_range(-0.5..1.5),
                rng.random_range(-0.5..1.5),
            );
            let expect = (0..3).all(|k| p[k] > 0.0 && p[k] < 1.0);
            assert_eq!(c.inside(&p).unwrap(), expect, "{p:?}");
        }
    }

    #[test]
    fn nearest_distance_cube_face() {
        let c = unit_cube();
        let d = c.nearest_surface_distance(&Point3::new(2.0, 0.5, 0.5)).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn nearest_distance_vertex_is_zero() {
        let s = icosphere(1.0, 2);
        for v in s.vertices().iter().take(20) {
            assert!(s.nearest_surface_distance(v).unwrap() <= 1e-15);
        }
    }

    #[test]
    fn nearest_distance_sphere_center() {
        let s = icosphere(1.0, 3);
        let d = s.nearest_surface_distance(&Point3::origin()).unwrap();
        let chord = primitives::icosphere_max_chord_deviation(&s);
        assert!(d <= 1.0 + 1e-12 && d >= 1.0 - chord - 1e-12, "{d} {chord}");
    }

    #[test]
    fn nearest_matches_brute_force() {
        let s = primitives::torus(1.0, 0.3, 24, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let p = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
            );
            let brute = (0..s.faces().len())
                .map(|f| {
                    let [a, b, c] = s.triangle(f);
                    (geom::closest_point_on_triangle(&p, &a, &b, &c) - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(s.nearest_surface_distance(&p).unwrap(), brute);
        }
    }

    #[test]
    fn empty_mesh_has_no_distance() {
        let m = TriMesh::default();
        assert!(matches!(m.nearest_surface_distance(&Point3::origin()), Err(MeshError::EmptyMesh)));
    }

    #[test]
    fn transform_identity_is_bitwise() {
        let s = icosphere(1.0, 2);
        let t = s.transform(&Matrix3::identity(), &Vector3::zeros(), 1.0).unwrap();
        assert_eq!(s.vertices(), t.vertices());
        assert_eq!(s.faces(), t.faces());
    }

    #[test]
    fn transform_scale_doubles_extent() {
        let s = icosphere(1.0, 2);
        let t = s.transform(&Matrix3::identity(), &Vector3::zeros(), 2.0).unwrap();
        let (a, b) = (s.aabb().extent(), t.aabb().extent());
        assert!((b - a * 2.0).amax() < 1e-12);
    }

    #[test]
    fn transform_rotation_about_z() {
        let m = TriMesh::new(
            vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 0.0, 1.0), Point3::new(0.0, 1.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let r = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let t = m.transform(r.matrix(), &Vector3::zeros(), 1.0).unwrap();
        assert!((t.vertices()[0] - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn transform_rejects_shear() {
        let s = icosphere(1.0, 1);
        let mut r = Matrix3::identity();
        r[(0, 1)] = 0.1;
        assert!(matches!(
            s.transform(&r, &Vector3::zeros(), 1.0),
            Err(MeshError::NonOrthonormalRotation)
        ));
    }

    #[test]
    fn transform_keeps_topology() {
        let s = primitives::torus(1.0, 0.4, 16, 8);
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -1.2, 2.0);
        let t = s.transform(r.matrix(), &Vector3::new(1.0, 2.0, 3.0), 0.7).unwrap();
        assert!(t.is_watertight());
        assert_eq!(t.euler_characteristic(), s.euler_characteristic());
        assert_eq!(s.euler_characteristic(), 0);
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let (m, dropped) = TriMesh::new_counting(v, vec![[0, 1, 2], [0, 1, 3], [1, 1, 3]]).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(m.faces().len(), 1);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = TriMesh::new(vec![Point3::origin()], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { .. }));
    }

    #[test]
    fn face_labels_by_majority() {
        let c = unit_cube();
        let n = c.vertices().len();
        let labels: Vec<u32> = (0..n as u32).map(|i| i % 2).collect();
        let c = c.with_labels(labels.clone()).unwrap();
        for (f, fl) in c.faces().iter().zip(c.face_labels().unwrap()) {
            let ones = f.iter().filter(|&&i| labels[i as usize] == 1).count();
            assert_eq!(fl, u32::from(ones >= 2));
        }
    }
}
