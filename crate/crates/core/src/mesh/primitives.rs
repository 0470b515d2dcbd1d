//! Closed, outward-wound primitive meshes used as fixtures and toy scenes.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::TriMesh;

/// Icosphere of the given radius centered at the origin.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = ((verts[a as usize] + verts[b as usize]) * 0.5).normalize();
                verts.push(m);
                verts.len() as u32 - 1
            })
        };
        for f in &faces {
            let ab = mid(f[0], f[1], &mut verts);
            let bc = mid(f[1], f[2], &mut verts);
            let ca = mid(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    let vertices = verts.into_iter().map(|v| Point3::from(v * radius)).collect();
    TriMesh::new(vertices, faces).expect("icosphere indices are valid")
}

/// Largest radial gap between a sphere-inscribed mesh and its sphere: the
/// radius minus the smallest face-plane distance from the center.
pub fn icosphere_max_chord_deviation(mesh: &TriMesh) -> f64 {
    let center = Point3::from(
        mesh.vertices().iter().map(|v| v.coords).sum::<Vector3<f64>>() / mesh.vertices().len() as f64,
    );
    let radius = mesh.vertices().iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
    let min_plane = (0..mesh.faces().len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            let n = (b - a).cross(&(c - a)).normalize();
            (a - center).dot(&n).abs()
        })
        .fold(f64::INFINITY, f64::min);
    radius - min_plane
}

/// Axis-aligned box with each face split into `n × n` quads.
pub fn box_mesh(min: Point3<f64>, max: Point3<f64>, n: usize) -> TriMesh {
    let n = n.max(1);
    let coord = |k: usize, i: usize| -> f64 {
        if i == n {
            max[k]
        } else {
            min[k] + (max[k] - min[k]) * (i as f64 / n as f64)
        }
    };
    let mut index: HashMap<[usize; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |g: [usize; 3], vertices: &mut Vec<Point3<f64>>| -> u32 {
        *index.entry(g).or_insert_with(|| {
            vertices.push(Point3::new(coord(0, g[0]), coord(1, g[1]), coord(2, g[2])));
            vertices.len() as u32 - 1
        })
    };
    // (normal axis, side, u axis, v axis) with u × v pointing outward.
    let sides = [
        (0, n, 1, 2),
        (0, 0, 2, 1),
        (1, n, 2, 0),
        (1, 0, 0, 2),
        (2, n, 0, 1),
        (2, 0, 1, 0),
    ];
    for &(axis, side, u, v) in &sides {
        for i in 0..n {
            for j in 0..n {
                let g = |di: usize, dj: usize| {
                    let mut g = [0usize; 3];
                    g[axis] = side;
                    g[u] = i + di;
                    g[v] = j + dj;
                    g
                };
                let a = vid(g(0, 0), &mut vertices);
                let b = vid(g(1, 0), &mut vertices);
                let c = vid(g(1, 1), &mut vertices);
                let d = vid(g(0, 1), &mut vertices);
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
    }
    TriMesh::new(vertices, faces).expect("box indices are valid")
}

/// The unit cube `[0,1]³` with two triangles per face.
pub fn unit_cube() -> TriMesh {
    box_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0), 1)
}

/// Torus around the z axis.
pub fn torus(major: f64, minor: f64, n_major: usize, n_minor: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(n_major * n_minor);
    for i in 0..n_major {
        let u = i as f64 / n_major as f64 * std::f64::consts::TAU;
        for j in 0..n_minor {
            let v = j as f64 / n_minor as f64 * std::f64::consts::TAU;
            let r = major + minor * v.cos();
            vertices.push(Point3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| ((i % n_major) * n_minor + (j % n_minor)) as u32;
    let mut faces = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(vertices, faces).expect("torus indices are valid")
}

/// Closed tube swept along a polyline, with hemispherical-ish end caps
/// collapsed to single apex vertices.
///
/// Returns the mesh and, per vertex, the arc-length parameter along the
/// path in `[0, total_length]`.
pub fn tube(path: &[Point3<f64>], radius: f64, sides: usize, rings_per_segment: usize) -> (TriMesh, Vec<f64>) {
    assert!(path.len() >= 2 && sides >= 3 && rings_per_segment >= 1);
    // Ring centers, tangents and arc-length parameters.
    let mut centers = Vec::new();
    let mut arcs = Vec::new();
    let mut seg_start = 0.0;
    for s in 0..path.len() - 1 {
        let (a, b) = (path[s], path[s + 1]);
        let len = (b - a).norm();
        let last = s == path.len() - 2;
        let steps = if last { rings_per_segment + 1 } else { rings_per_segment };
        for r in 0..steps {
            let t = r as f64 / rings_per_segment as f64;
            centers.push(a + (b - a) * t);
            arcs.push(seg_start + len * t);
        }
        seg_start += len;
    }
    let tangent_at = |i: usize| -> Vector3<f64> {
        let prev = if i == 0 { centers[0] } else { centers[i - 1] };
        let next = if i + 1 == centers.len() { centers[i] } else { centers[i + 1] };
        (next - prev).normalize()
    };
    // Parallel-transported frame.
    let t0 = tangent_at(0);
    let helper = if t0.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let mut normal = t0.cross(&helper).normalize();
    let mut vertices = Vec::new();
    let mut params = Vec::new();
    let mut prev_t = t0;
    for (i, c) in centers.iter().enumerate() {
        let t = tangent_at(i);
        let axis = prev_t.cross(&t);
        if axis.norm() > 1e-12 {
            let angle = prev_t.dot(&t).clamp(-1.0, 1.0).acos();
            let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            normal = (rot * normal).normalize();
        }
        prev_t = t;
        let binormal = t.cross(&normal);
        for k in 0..sides {
            let phi = k as f64 / sides as f64 * std::f64::consts::TAU;
            vertices.push(c + (normal * phi.cos() + binormal * phi.sin()) * radius);
            params.push(arcs[i]);
        }
    }
    let rings = centers.len();
    let start_apex = vertices.len() as u32;
    vertices.push(centers[0] - tangent_at(0) * radius);
    params.push(0.0);
    let end_apex = vertices.len() as u32;
    vertices.push(centers[rings - 1] + tangent_at(rings - 1) * radius);
    params.push(*arcs.last().unwrap());

    let idx = |r: usize, k: usize| (r * sides + k % sides) as u32;
    let mut faces = Vec::new();
    for r in 0..rings - 1 {
        for k in 0..sides {
            let (a, b, c, d) = (idx(r, k), idx(r, k + 1), idx(r + 1, k + 1), idx(r + 1, k));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for k in 0..sides {
        faces.push([start_apex, idx(0, k + 1), idx(0, k)]);
        faces.push([end_apex, idx(rings - 1, k), idx(rings - 1, k + 1)]);
    }
    let mut mesh = TriMesh::new(vertices, faces).expect("tube indices are valid");
    if mesh.signed_volume() < 0.0 {
        let faces = mesh.faces().iter().map(|f| [f[0], f[2], f[1]]).collect();
        mesh = TriMesh::new(mesh.vertices().to_vec(), faces).expect("tube indices are valid");
    }
    (mesh, params)
}
