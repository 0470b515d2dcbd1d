//! Z-buffered triangle rasterization.
//!
//! Coverage is decided with edge functions at pixel centers; the stored
//! depth is the exact distance along the pixel ray to the triangle plane,
//! which is perspective-correct by construction and uses the same metric as
//! [`Camera::project`]'s `distance`.

use nalgebra::Vector3;

use super::{Camera, CameraError, DepthMap, LabelMap};
use crate::mesh::TriMesh;

/// Triangles with a vertex closer than this to the camera plane are skipped.
const NEAR_Z: f64 = 1e-6;

/// Per-pixel nearest distance and the face that produced it.
#[derive(Debug, Clone)]
pub struct Raster {
    pub depth: DepthMap,
    /// Face index per pixel, `u32::MAX` for background.
    pub face: Vec<u32>,
}

/// Rasterizes every face of `mesh`, no back-face culling.
pub fn rasterize(cam: &Camera, mesh: &TriMesh) -> Raster {
    let (w, h) = (cam.width(), cam.height());
    let mut depth = DepthMap::empty(w, h);
    let mut face_buf = vec![u32::MAX; w * h];
    let cam_pts: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| cam.to_camera(v)).collect();
    let k = cam.k();
    let screen: Vec<[f64; 2]> = cam_pts
        .iter()
        .map(|p| {
            let q = k * p;
            [q.x / q.z, q.y / q.z]
        })
        .collect();
    // Camera-space ray directions are affine in the pixel coordinates, so
    // precompute per row/column pieces.
    for (fi, f) in mesh.faces().iter().enumerate() {
        let [a, b, c] = [f[0] as usize, f[1] as usize, f[2] as usize];
        if cam_pts[a].z <= NEAR_Z || cam_pts[b].z <= NEAR_Z || cam_pts[c].z <= NEAR_Z {
            continue;
        }
        let (pa, pb, pc) = (screen[a], screen[b], screen[c]);
        let area = edge(pa, pb, pc);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let min_x = pa[0].min(pb[0]).min(pc[0]).ceil().max(0.0);
        let max_x = pa[0].max(pb[0]).max(pc[0]).floor().min(w as f64 - 1.0);
        let min_y = pa[1].min(pb[1]).min(pc[1]).ceil().max(0.0);
        let max_y = pa[1].max(pb[1]).max(pc[1]).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let normal = (cam_pts[b] - cam_pts[a]).cross(&(cam_pts[c] - cam_pts[a]));
        let plane = normal.dot(&cam_pts[a]);
        for j in min_y as usize..=max_y as usize {
            for i in min_x as usize..=max_x as usize {
                let p = [i as f64, j as f64];
                let w0 = edge(pb, pc, p);
                let w1 = edge(pc, pa, p);
                let w2 = edge(pa, pb, p);
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                let ray = cam.pixel_ray_camera(p[0], p[1]);
                let denom = normal.dot(&ray);
                if denom == 0.0 {
                    continue;
                }
                let t = plane / denom;
                if !(t > 0.0) {
                    continue;
                }
                let d = t * ray.norm();
                let idx = j * w + i;
                // Ties go to the lower face index for determinism.
                if d < depth.depth[idx] {
                    depth.depth[idx] = d;
                    face_buf[idx] = fi as u32;
                }
            }
        }
    }
    Raster { depth, face: face_buf }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Euclidean distance to the nearest surface per pixel.
pub fn render_depth(cam: &Camera, mesh: &TriMesh) -> DepthMap {
    rasterize(cam, mesh).depth
}

/// Instance id of the front-most face per pixel (face label = majority of
/// its vertex labels).
pub fn render_labels(cam: &Camera, mesh: &TriMesh) -> Result<LabelMap, CameraError> {
    let face_labels = mesh.face_labels().ok_or(CameraError::MissingLabels)?;
    let raster = rasterize(cam, mesh);
    let mut out = LabelMap::empty(cam.width(), cam.height());
    for (dst, &f) in out.labels.iter_mut().zip(&raster.face) {
        if f != u32::MAX {
            *dst = face_labels[f as usize] as i32;
        }
    }
    Ok(out)
}
