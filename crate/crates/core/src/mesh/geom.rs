//! Triangle-level geometric kernels.

use nalgebra::{Point3, Vector3};

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5). Works for degenerate triangles as well.
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Result of a ray/triangle test.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    /// The hit is too close to an edge, a vertex or the triangle plane to be
    /// trusted for parity counting.
    pub grazing: bool,
}

/// Möller–Trumbore intersection. Returns hits with `t > 0` only.
pub fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
    eps: f64,
) -> Option<RayHit> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    let scale = e1.norm() * e2.norm() * dir.norm();
    if scale == 0.0 {
        return None;
    }
    // Ray parallel to the triangle plane.
    if det.abs() <= 1e-12 * scale {
        // A coplanar ray may still touch the triangle; report it as grazing
        // when the origin lies in the plane so the caller retries.
        let n = e1.cross(&e2);
        let dist = (origin - a).dot(&n) / n.norm();
        if dist.abs() <= eps {
            return Some(RayHit { t: 0.0, u: 0.0, v: 0.0, grazing: true });
        }
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv;
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    let t = e2.dot(&qvec) * inv;
    let bary_eps = 1e-10;
    if u < -bary_eps || v < -bary_eps || u + v > 1.0 + bary_eps {
        return None;
    }
    if t < -eps {
        return None;
    }
    let grazing = u.abs() <= bary_eps
        || v.abs() <= bary_eps
        || (1.0 - u - v).abs() <= bary_eps
        || t.abs() <= eps;
    if t <= 0.0 && !grazing {
        return None;
    }
    Some(RayHit { t, u, v, grazing })
}

/// Twice the triangle area.
pub fn double_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    (b - a).cross(&(c - a)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> [Point3<f64>; 3] {
        [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ]
    }

    #[test]
    fn closest_point_regions() {
        let [a, b, c] = tri();
        let q = closest_point_on_triangle(&Point3::new(0.2, 0.2, 3.0), &a, &b, &c);
        assert!((q - Point3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let q = closest_point_on_triangle(&Point3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(q, a);
        let q = closest_point_on_triangle(&Point3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Point3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
        let q = closest_point_on_triangle(&Point3::new(0.5, -2.0, 1.0), &a, &b, &c);
        assert!((q - Point3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn closest_point_matches_dense_search() {
        let [a, b, c] = [
            Point3::new(0.1, -0.3, 0.2),
            Point3::new(1.3, 0.4, -0.1),
            Point3::new(-0.2, 0.9, 0.7),
        ];
        let probes = [
            Point3::new(0.5, 0.5, 2.0),
            Point3::new(-2.0, 0.0, 0.0),
            Point3::new(2.0, 2.0, 0.0),
            Point3::new(0.4, -1.0, -1.0),
        ];
        for p in probes {
            let q = closest_point_on_triangle(&p, &a, &b, &c);
            let mut best = f64::INFINITY;
            let n = 400;
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let u = i as f64 / n as f64;
                    let v = j as f64 / n as f64;
                    let x = a + (b - a) * u + (c - a) * v;
                    best = best.min((x - p).norm());
                }
            }
            let d = (q - p).norm();
            assert!(d <= best + 1e-12);
            assert!(best - d < 1e-2);
        }
    }

    #[test]
    fn ray_hits_interior() {
        let [a, b, c] = tri();
        let hit = ray_triangle(
            &Point3::new(0.25, 0.25, -1.0),
            &Vector3::new(0.0, 0.0, 1.0),
            &a,
            &b,
            &c,
            1e-9,
        )
        .unwrap();
        assert!((hit.t - 1.0).abs() < 1e-15);
        assert!(!hit.grazing);
        assert!(ray_triangle(
            &Point3::new(0.25, 0.25, 1.0),
            &Vector3::new(0.0, 0.0, 1.0),
            &a,
            &b,
            &c,
            1e-9
        )
        .is_none());
    }

    #[test]
    fn ray_through_edge_is_grazing() {
        let [a, b, c] = tri();
        let hit = ray_triangle(
            &Point3::new(0.5, 0.0, -1.0),
            &Vector3::new(0.0, 0.0, 1.0),
            &a,
            &b,
            &c,
            1e-9,
        )
        .unwrap();
        assert!(hit.grazing);
    }
}
