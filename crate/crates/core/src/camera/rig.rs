//! Camera rig generators and the rig file format.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Camera, CameraError, Intrinsics};

/// `n_views` cameras on a horizontal circle around `lookat` at equal azimuth
/// spacing, raised by `height` along +y. The first camera sits on the +x side.
pub fn rig_circle(
    n_views: usize,
    radius: f64,
    height: f64,
    lookat: Point3<f64>,
    intrinsics: &Intrinsics,
) -> Result<Vec<Camera>, CameraError> {
    (0..n_views)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / n_views as f64;
            let eye = lookat + Vector3::new(radius * phi.cos(), height, radius * phi.sin());
            Camera::look_at(eye, lookat, Vector3::y(), intrinsics)
        })
        .collect()
}

/// `n_views` cameras on a Fibonacci lattice over the sphere of `radius`
/// around `lookat`, all looking at it.
pub fn rig_sphere(
    n_views: usize,
    radius: f64,
    lookat: Point3<f64>,
    intrinsics: &Intrinsics,
) -> Result<Vec<Camera>, CameraError> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n_views)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n_views as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            let dir = Vector3::new(r * phi.cos(), y, r * phi.sin());
            Camera::look_at(lookat + dir * radius, lookat, Vector3::y(), intrinsics)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraRecord {
    k: [[f64; 3]; 3],
    r: [[f64; 3]; 3],
    t: [f64; 3],
    width: usize,
    height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RigFile {
    version: u32,
    camera: Vec<CameraRecord>,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
}

fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2])
}

/// Writes a rig as TOML, one `[[camera]]` table per view with row-major `k`, `r`.
pub fn save_rig(path: &Path, cams: &[Camera]) -> Result<(), CameraError> {
    let file = RigFile {
        version: 1,
        camera: cams
            .iter()
            .map(|c| CameraRecord {
                k: rows(&c.k),
                r: rows(&c.r),
                t: [c.t.x, c.t.y, c.t.z],
                width: c.width,
                height: c.height,
            })
            .collect(),
    };
    let text = toml::to_string(&file).map_err(|e| CameraError::Rig(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CameraError::Rig(format!("{}: {e}", path.display())))
}

pub fn load_rig(path: &Path) -> Result<Vec<Camera>, CameraError> {
    let text = std::fs::read_to_string(path).map_err(|e| CameraError::Rig(format!("{}: {e}", path.display())))?;
    let file: RigFile = toml::from_str(&text).map_err(|e| CameraError::Rig(e.to_string()))?;
    file.camera
        .iter()
        .map(|c| Camera::new(from_rows(&c.k), from_rows(&c.r), Vector3::from(c.t), c.width, c.height))
        .collect()
}
