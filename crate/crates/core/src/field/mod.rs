//! The instance-level occupancy field.
//!
//! A query point `X` is projected into every input view. Each view
//! contributes a vector `[F(x) | z(X) | γ(d(x))]`: the pixel-aligned feature
//! at the projection, the camera distance normalized by the scene diagonal,
//! and a frequency embedding of the viewing direction. The network maps the
//! set of per-view vectors to two occupancy probabilities, `s_H` for the
//! human/hand and `s_O` for the object.
//!
//! ```
//! use instfield::field::{intersection_value, union_value};
//!
//! assert_eq!(union_value(0.9, 0.3), 0.9);
//! assert!((intersection_value(0.9, 0.3) - 0.27).abs() < 1e-15);
//! ```

mod embed;
mod features;
mod mlp;

use nalgebra::Point3;

pub use embed::{embed_dim, positional_embed, positional_embed_into};
pub use features::{render_view, FeatureGrid, Image, DEFAULT_PYRAMID};
pub use mlp::{ForwardCache, MlpConfig, MlpParams, PARAMS_VERSION};

use crate::camera::Camera;
use crate::mesh::TriMesh;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("view direction has norm {0}, expected 1")]
    NonUnitDirection(f64),
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("{views} feature views for {cameras} cameras")]
    ViewCount { views: usize, cameras: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Raw(#[from] crate::rawio::RawError),
}

/// How per-view information is pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Fusion {
    /// Mean over views after the per-view layer.
    #[default]
    Mean,
}

/// Union occupancy, `max(s_H, s_O)`.
pub fn union_value(s_h: f64, s_o: f64) -> f64 {
    s_h.max(s_o)
}

/// Intersection occupancy, `s_H · s_O`.
pub fn intersection_value(s_h: f64, s_o: f64) -> f64 {
    s_h * s_o
}

/// Everything the network sees about one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldQuery {
    pub point: Point3<f64>,
    /// Pixel-aligned feature per view.
    pub features: Vec<Vec<f64>>,
    /// Normalized camera distance per view.
    pub depths: Vec<f64>,
    /// Direction embedding per view.
    pub embeddings: Vec<Vec<f64>>,
}

impl FieldQuery {
    pub fn n_views(&self) -> usize {
        self.depths.len()
    }

    /// Per-view input rows, concatenated.
    pub fn view_inputs(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for v in 0..self.n_views() {
            out.extend_from_slice(&self.features[v]);
            out.push(self.depths[v]);
            out.extend_from_slice(&self.embeddings[v]);
        }
        out
    }
}

/// Input views of one scene: cameras, their feature maps and the
/// normalization constants that turn points into [`FieldQuery`]s.
#[derive(Debug, Clone)]
pub struct ViewContext {
    cameras: Vec<Camera>,
    grid: FeatureGrid,
    depth_scale: f64,
    n_freq: usize,
}

impl ViewContext {
    pub fn new(cameras: Vec<Camera>, grid: FeatureGrid, depth_scale: f64, n_freq: usize) -> Result<Self, FieldError> {
        if cameras.len() != grid.n_views() || cameras.is_empty() {
            return Err(FieldError::ViewCount { views: grid.n_views(), cameras: cameras.len() });
        }
        assert!(depth_scale > 0.0);
        Ok(Self { cameras, grid, depth_scale, n_freq })
    }

    /// Renders `scene` from every camera and builds the feature pyramid.
    pub fn render(
        cameras: Vec<Camera>,
        scene: &TriMesh,
        radii: &[usize],
        depth_scale: f64,
        n_freq: usize,
    ) -> Result<Self, FieldError> {
        let images: Vec<Image> = cameras.iter().map(|c| render_view(c, scene)).collect();
        let grid = FeatureGrid::from_images(&images, radii);
        Self::new(cameras, grid, depth_scale, n_freq)
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn grid(&self) -> &FeatureGrid {
        &self.grid
    }

    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    /// Length of one per-view input row.
    pub fn view_input_dim(&self) -> usize {
        self.grid.channels() + 1 + embed_dim(self.n_freq)
    }

    pub fn query(&self, x: &Point3<f64>) -> FieldQuery {
        let mut row = vec![0.0; self.view_input_dim()];
        let c = self.grid.channels();
        let mut q = FieldQuery {
            point: *x,
            features: Vec::with_capacity(self.n_views()),
            depths: Vec::with_capacity(self.n_views()),
            embeddings: Vec::with_capacity(self.n_views()),
        };
        for v in 0..self.n_views() {
            self.fill_row(v, x, &mut row);
            q.features.push(row[..c].to_vec());
            q.depths.push(row[c]);
            q.embeddings.push(row[c + 1..].to_vec());
        }
        q
    }

    fn fill_row(&self, view: usize, x: &Point3<f64>, row: &mut [f64]) {
        let cam = &self.cameras[view];
        let c = self.grid.channels();
        match cam.project(x) {
            Ok(p) => {
                self.grid.sample_feature(view, &p.pixel, &mut row[..c]);
                row[c] = p.distance / self.depth_scale;
            }
            Err(_) => {
                row[..c].fill(0.0);
                row[c] = (x - cam.center()).norm() / self.depth_scale;
            }
        }
        let d = cam.view_direction(x);
        if positional_embed_into(&d, self.n_freq, &mut row[c + 1..]).is_err() {
            // Only reachable when `x` coincides with the camera center.
            row[c + 1..].fill(0.0);
        }
    }

    /// Network input for a batch of points: `points.len() × n_views` rows.
    pub fn batch(&self, points: &[Point3<f64>]) -> Vec<f64> {
        let d = self.view_input_dim();
        let v = self.n_views();
        let mut out = vec![0.0; points.len() * v * d];
        for (p, x) in points.iter().enumerate() {
            for view in 0..v {
                let start = (p * v + view) * d;
                self.fill_row(view, x, &mut out[start..start + d]);
            }
        }
        out
    }
}

/// `(s_H, s_O)` for a single query.
pub fn eval_field(params: &MlpParams, query: &FieldQuery, fusion: Fusion) -> Result<(f64, f64), FieldError> {
    let Fusion::Mean = fusion;
    let cache = params.forward(&query.view_inputs(), 1, query.n_views())?;
    Ok((cache.s_human[0], cache.s_object[0]))
}

/// `(s_H, s_O)` for every point, evaluated in fixed-size chunks.
pub fn eval_points(params: &MlpParams, ctx: &ViewContext, points: &[Point3<f64>]) -> Result<(Vec<f64>, Vec<f64>), FieldError> {
    use rayon::prelude::*;
    const CHUNK: usize = 1024;
    let parts: Vec<Result<(Vec<f64>, Vec<f64>), FieldError>> = points
        .par_chunks(CHUNK)
        .map(|chunk| {
            let x = ctx.batch(chunk);
            let c = params.forward(&x, chunk.len(), ctx.n_views())?;
            Ok((c.s_human, c.s_object))
        })
        .collect();
    let mut sh = Vec::with_capacity(points.len());
    let mut so = Vec::with_capacity(points.len());
    for part in parts {
        let (h, o) = part?;
        sh.extend(h);
        so.extend(o);
    }
    Ok((sh, so))
}
