//! Perspective cameras, rig generators and software depth/label rendering.
//!
//! Conventions: `R` maps world to camera coordinates, the camera looks down
//! its +z axis, image x grows to the right and image y downwards, and pixel
//! `(i, j)` has its center at coordinates `(i, j)`.

mod maps;
mod raster;
mod rig;

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

pub use maps::{DepthMap, LabelMap, LABEL_BACKGROUND};
pub use raster::{rasterize, render_depth, render_labels, Raster};
pub use rig::{load_rig, rig_circle, rig_sphere, save_rig};

#[derive(Debug, thiserror::Error)]
pub enum CameraError {
    #[error("point lies behind the camera (camera-space z = {0})")]
    BehindCamera(f64),
    #[error("intrinsics must be upper triangular with positive focal lengths")]
    InvalidIntrinsics,
    #[error("camera rotation is not orthonormal")]
    NonOrthonormalRotation,
    #[error("mesh has no vertex labels")]
    MissingLabels,
    #[error("rig file: {0}")]
    Rig(String),
    #[error(transparent)]
    Raw(#[from] crate::rawio::RawError),
}

/// Pinhole intrinsics with square pixels and a centered principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Focal length in pixels.
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Intrinsics from a vertical field of view in degrees.
    pub fn from_fov(fov_y_deg: f64, width: usize, height: usize) -> Self {
        let focal = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self { focal, width, height }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal,
            0.0,
            (self.width as f64 - 1.0) / 2.0,
            0.0,
            self.focal,
            (self.height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

impl Default for Intrinsics {
    /// 512×512 with a 40° vertical field of view.
    fn default() -> Self {
        Self::from_fov(40.0, 512, 512)
    }
}

/// A perspective camera `x = K (R X + t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    k: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    width: usize,
    height: usize,
}

/// Output of [`Camera::project`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Perspective-divided pixel coordinates.
    pub pixel: Point2<f64>,
    /// Euclidean distance from the camera center to the point.
    pub distance: f64,
    /// Camera-space z.
    pub z: f64,
}

impl Camera {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let upper = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0 && k[(2, 2)] == 1.0;
        if !upper || !(k[(0, 0)] > 0.0) || !(k[(1, 1)] > 0.0) {
            return Err(CameraError::InvalidIntrinsics);
        }
        crate::mesh::check_rotation(&r).map_err(|_| CameraError::NonOrthonormalRotation)?;
        Ok(Self { k, r, t, width, height })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly the image's up.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        intrinsics: &Intrinsics,
    ) -> Result<Self, CameraError> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // Looking along `up`: pick any perpendicular.
            let alt = if forward.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye.coords);
        Self::new(intrinsics.matrix(), r, t, intrinsics.width, intrinsics.height)
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera center in world coordinates, `−Rᵀ t`.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.r.transpose() * self.t))
    }

    /// Unit viewing axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.r.row(2).transpose()
    }

    pub fn to_camera(&self, x: &Point3<f64>) -> Vector3<f64> {
        self.r * x.coords + self.t
    }

    /// `x = K(R X + t)` divided by depth, and `c = ‖X + R⁻¹ t‖`.
    pub fn project(&self, x: &Point3<f64>) -> Result<Projection, CameraError> {
        let cam = self.to_camera(x);
        if cam.z <= 0.0 {
            return Err(CameraError::BehindCamera(cam.z));
        }
        let h = self.k * cam;
        let distance = (x.coords + self.r.transpose() * self.t).norm();
        Ok(Projection { pixel: Point2::new(h.x / h.z, h.y / h.z), distance, z: cam.z })
    }

    /// Unit direction from the camera center towards `x`, in world coordinates.
    pub fn view_direction(&self, x: &Point3<f64>) -> Vector3<f64> {
        (x - self.center()).normalize()
    }

    /// Camera-space ray direction (not normalized, z = 1) through a pixel.
    pub fn pixel_ray_camera(&self, px: f64, py: f64) -> Vector3<f64> {
        let fx = self.k[(0, 0)];
        let fy = self.k[(1, 1)];
        let s = self.k[(0, 1)];
        let cx = self.k[(0, 2)];
        let cy = self.k[(1, 2)];
        let y = (py - cy) / fy;
        let x = (px - cx - s * y) / fx;
        Vector3::new(x, y, 1.0)
    }

    /// Nearest pixel index for continuous coordinates, if inside the image.
    pub fn pixel_index(&self, pixel: &Point2<f64>) -> Option<(usize, usize)> {
        let i = pixel.x.round();
        let j = pixel.y.round();
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }
}
