//! Multi-view label fusion: per-vertex majority vote over the 2D labels of
//! the views in which the vertex is visible.
//!
//! A vertex `X_k` counts as visible in view `i` when the rendered depth at
//! its nearest pixel agrees with its own camera distance:
//! `|d(x_{k,i}) − c_{k,i}| < δ`.
//!
//! ```
//! use instfield::camera::{rig_sphere, Intrinsics};
//! use instfield::fusion::{label_mesh, FusionConfig};
//! use instfield::mesh::primitives::icosphere;
//! use nalgebra::Point3;
//!
//! let mesh = icosphere(0.5, 1).with_uniform_label(1);
//! let cfg = FusionConfig { n_views: 8, resolution: 64, ..FusionConfig::default() };
//! let out = label_mesh(&mesh, &cfg).unwrap();
//! assert!(out.labels.iter().all(|&l| l == 1));
//! ```

use std::collections::BTreeMap;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{render_depth, render_labels, rig_sphere, Camera, CameraError, DepthMap, Intrinsics, LabelMap};
use crate::mesh::{TriMesh, LABEL_UNLABELED};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("{cams} cameras, {depths} depth maps and {labels} label maps")]
    RigMismatch { cams: usize, depths: usize, labels: usize },
    #[error("view {0}: map size differs from the camera image")]
    MapSize(usize),
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Resolution of votes that are tied or empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieBreak {
    /// The smallest of the tied labels.
    #[default]
    LowestLabel,
    /// Tied votes give no label.
    Unlabeled,
}

/// Depth-match threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Delta {
    /// Meters.
    Absolute(f64),
    /// Fraction of the mesh bounding-box diagonal.
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub n_views: usize,
    pub delta: Delta,
    pub tie_break: TieBreak,
    /// Square image size of the virtual views rendered by [`label_mesh`].
    pub resolution: usize,
    pub fov_deg: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { n_views: 64, delta: Delta::Relative(0.01), tie_break: TieBreak::LowestLabel, resolution: 512, fov_deg: 40.0 }
    }
}

impl FusionConfig {
    /// Threshold in meters for `mesh`.
    pub fn delta_for(&self, mesh: &TriMesh) -> Result<f64, FusionError> {
        let d = match self.delta {
            Delta::Absolute(d) => d,
            Delta::Relative(f) => f * mesh.aabb().diagonal(),
        };
        if !(d > 0.0 && d.is_finite()) {
            return Err(FusionError::InvalidConfig(format!("delta must be positive, got {d}")));
        }
        Ok(d)
    }
}

/// Fused labels with the modal fraction and evidence size per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    /// [`LABEL_UNLABELED`] where no label won.
    pub labels: Vec<u32>,
    /// Share of the evidence that voted for the winning label.
    pub confidence: Vec<f32>,
    /// Number of views in which the vertex was visible.
    pub evidence: Vec<u32>,
}

impl FusionResult {
    /// `mesh` carrying the fused labels.
    pub fn apply(&self, mesh: &TriMesh) -> TriMesh {
        mesh.clone().with_labels(self.labels.clone()).expect("one label per vertex")
    }
}

/// Distance to the nearest-pixel depth when `x` projects inside the image.
fn depth_gap(cam: &Camera, depth: &DepthMap, x: &Point3<f64>) -> Option<((usize, usize), f64)> {
    let p = cam.project(x).ok()?;
    let (i, j) = cam.pixel_index(&p.pixel)?;
    let d = depth.get(i, j);
    d.is_finite().then_some(((i, j), (d - p.distance).abs()))
}

/// Per-vertex visibility in one view by depth matching.
pub fn visibility_mask(mesh: &TriMesh, cam: &Camera, depth: &DepthMap, delta: f64) -> Vec<bool> {
    mesh.vertices()
        .par_iter()
        .map(|x| depth_gap(cam, depth, x).is_some_and(|(_, gap)| gap < delta))
        .collect()
}

/// Votes each vertex's label from the views that see it.
pub fn label_vertices(
    mesh: &TriMesh,
    cams: &[Camera],
    depths: &[DepthMap],
    labels2d: &[LabelMap],
    delta: f64,
    tie_break: TieBreak,
) -> Result<FusionResult, FusionError> {
    if cams.len() != depths.len() || cams.len() != labels2d.len() {
        return Err(FusionError::RigMismatch { cams: cams.len(), depths: depths.len(), labels: labels2d.len() });
    }
    if mesh.vertices().is_empty() {
        return Err(FusionError::EmptyMesh);
    }
    if !(delta > 0.0) {
        return Err(FusionError::InvalidConfig(format!("delta must be positive, got {delta}")));
    }
    for (v, c) in cams.iter().enumerate() {
        let size = (c.width(), c.height());
        if (depths[v].width, depths[v].height) != size || (labels2d[v].width, labels2d[v].height) != size {
            return Err(FusionError::MapSize(v));
        }
    }
    let votes: Vec<(u32, f32, u32)> = mesh
        .vertices()
        .par_iter()
        .map(|x| {
            let mut counts: BTreeMap<i32, u32> = BTreeMap::new();
            let mut evidence = 0;
            for (v, cam) in cams.iter().enumerate() {
                if let Some(((i, j), gap)) = depth_gap(cam, &depths[v], x) {
                    if gap < delta {
                        let l = labels2d[v].get(i, j);
                        if l >= 0 {
                            *counts.entry(l).or_default() += 1;
                            evidence += 1;
                        }
                    }
                }
            }
            let best = counts.values().copied().max().unwrap_or(0);
            let mut winners = counts.iter().filter(|(_, c)| **c == best).map(|(l, _)| *l);
            let label = match (winners.next(), winners.next(), tie_break) {
                (None, _, _) => LABEL_UNLABELED,
                (Some(l), None, _) | (Some(l), Some(_), TieBreak::LowestLabel) => l as u32,
                (Some(_), Some(_), TieBreak::Unlabeled) => LABEL_UNLABELED,
            };
            let conf = if evidence == 0 || label == LABEL_UNLABELED { 0.0 } else { best as f32 / evidence as f32 };
            (label, conf, evidence)
        })
        .collect();
    Ok(FusionResult {
        labels: votes.iter().map(|v| v.0).collect(),
        confidence: votes.iter().map(|v| v.1).collect(),
        evidence: votes.iter().map(|v| v.2).collect(),
    })
}

/// Cameras on a sphere around `mesh`, far enough for it to fit the view.
pub fn virtual_rig(mesh: &TriMesh, cfg: &FusionConfig) -> Result<Vec<Camera>, FusionError> {
    if cfg.n_views == 0 || cfg.resolution == 0 {
        return Err(FusionError::InvalidConfig("n_views and resolution must be positive".into()));
    }
    let b = mesh.aabb();
    let half_fov = (cfg.fov_deg.to_radians() / 2.0).tan();
    let radius = 0.5 * b.diagonal() / half_fov * 1.1 + 0.5 * b.diagonal();
    let intr = Intrinsics::from_fov(cfg.fov_deg, cfg.resolution, cfg.resolution);
    Ok(rig_sphere(cfg.n_views, radius, b.center(), &intr)?)
}

/// Renders depth and labels of an already labeled mesh from the virtual rig
/// and fuses them back onto its vertices.
pub fn label_mesh(mesh: &TriMesh, cfg: &FusionConfig) -> Result<FusionResult, FusionError> {
    let cams = virtual_rig(mesh, cfg)?;
    let depths: Vec<DepthMap> = cams.par_iter().map(|c| render_depth(c, mesh)).collect();
    let labels = cams.par_iter().map(|c| render_labels(c, mesh)).collect::<Result<Vec<_>, _>>()?;
    label_vertices(mesh, &cams, &depths, &labels, cfg.delta_for(mesh)?, cfg.tie_break)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::LABEL_BACKGROUND;
    use crate::mesh::primitives::{box_mesh, icosphere};
    use crate::mesh::{LABEL_HUMAN, LABEL_OBJECT};

    fn one_view(label: i32) -> (TriMesh, Camera, DepthMap, LabelMap) {
        let mesh = icosphere(0.5, 2).with_uniform_label(0);
        let cam = Camera::look_at(
            Point3::new(0.0, 0.0, 3.0),
            Point3::origin(),
            nalgebra::Vector3::y(),
            &Intrinsics::from_fov(40.0, 128, 128),
        )
        .unwrap();
        let depth = render_depth(&cam, &mesh);
        let mut labels = LabelMap::empty(128, 128);
        for (k, d) in depth.depth.iter().enumerate() {
            if d.is_finite() {
                labels.labels[k] = label;
            }
        }
        (mesh, cam, depth, labels)
    }

    #[test]
    fn singleton_vote_and_invisible_vertices() {
        let (mesh, cam, depth, labels) = one_view(1);
        let r = label_vertices(&mesh, &[cam], &[depth], &[labels], 0.05, TieBreak::LowestLabel).unwrap();
        for (v, p) in mesh.vertices().iter().enumerate() {
            if p.z > 0.2 {
                assert_eq!(r.labels[v], 1);
                assert_eq!(r.confidence[v], 1.0);
            }
            if p.z < -0.1 {
                assert_eq!(r.labels[v], LABEL_UNLABELED);
                assert_eq!(r.evidence[v], 0);
            }
        }
    }

    #[test]
    fn majority_and_ties() {
        let (mesh, cam, depth, _) = one_view(0);
        let (_, _, _, l0) = one_view(0);
        let (_, _, _, l1) = one_view(1);
        let cams = vec![cam.clone(), cam.clone(), cam.clone()];
        let depths = vec![depth.clone(), depth.clone(), depth.clone()];
        let front = mesh.vertices().iter().position(|p| p.z > 0.45).unwrap();
        let r = label_vertices(&mesh, &cams, &depths, &[l0.clone(), l0.clone(), l1.clone()], 0.01, TieBreak::LowestLabel)
            .unwrap();
        assert_eq!(r.labels[front], 0);
        assert!((r.confidence[front] - 2.0 / 3.0).abs() < 1e-6);
        let tie = [l1.clone(), l0.clone()];
        let r = label_vertices(&mesh, &cams[..2], &depths[..2], &tie, 0.01, TieBreak::LowestLabel).unwrap();
        assert_eq!(r.labels[front], 0);
        let r = label_vertices(&mesh, &cams[..2], &depths[..2], &tie, 0.01, TieBreak::Unlabeled).unwrap();
        assert_eq!(r.labels[front], LABEL_UNLABELED);
    }

    #[test]
    fn rig_mismatch() {
        let (mesh, cam, depth, labels) = one_view(0);
        let err = label_vertices(&mesh, &[cam.clone(), cam], &[depth], &[labels], 0.01, TieBreak::LowestLabel);
        assert!(matches!(err, Err(FusionError::RigMismatch { cams: 2, depths: 1, labels: 1 })));
    }

    #[test]
    fn convex_visibility_is_about_half() {
        let mesh = icosphere(0.5, 4);
        let cam = Camera::look_at(
            Point3::new(0.0, 0.0, 20.0),
            Point3::origin(),
            nalgebra::Vector3::y(),
            &Intrinsics::from_fov(4.0, 512, 512),
        )
        .unwrap();
        let depth = render_depth(&cam, &mesh);
        let vis = visibility_mask(&mesh, &cam, &depth, 0.01);
        let frac = vis.iter().filter(|v| **v).count() as f64 / vis.len() as f64;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
        for (v, p) in mesh.vertices().iter().enumerate() {
            if p.z > 0.2 {
                assert!(vis[v]);
            }
            if p.z < -0.2 {
                assert!(!vis[v]);
            }
        }
    }

    #[test]
    fn evidence_grows_with_delta() {
        let (mesh, cam, depth, labels) = one_view(0);
        let mut prev = vec![0u32; mesh.vertices().len()];
        for delta in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let r = label_vertices(&mesh, std::slice::from_ref(&cam), std::slice::from_ref(&depth), std::slice::from_ref(&labels), delta, TieBreak::LowestLabel)
                .unwrap();
            assert!(r.evidence.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = r.evidence;
        }
    }

    #[test]
    fn background_pixels_cast_no_vote() {
        let (mesh, cam, depth, _) = one_view(0);
        let bg = LabelMap::empty(128, 128);
        assert!(bg.labels.iter().all(|l| *l == LABEL_BACKGROUND));
        let r = label_vertices(&mesh, &[cam], &[depth], &[bg], 0.01, TieBreak::LowestLabel).unwrap();
        assert!(r.labels.iter().all(|l| *l == LABEL_UNLABELED));
    }

    #[test]
    fn two_primitive_scene_is_recovered() {
        let human = icosphere(0.4, 3).with_uniform_label(LABEL_HUMAN);
        let object =
            box_mesh(Point3::new(0.45, -0.3, -0.3), Point3::new(0.95, 0.3, 0.3), 8).with_uniform_label(LABEL_OBJECT);
        let scene = human.merge(&object);
        let cfg = FusionConfig { n_views: 32, resolution: 256, ..FusionConfig::default() };
        let r = label_mesh(&scene, &cfg).unwrap();
        let truth = scene.labels().unwrap();
        let ok = r.labels.iter().zip(truth).filter(|(a, b)| a == b).count();
        assert!(ok as f64 / truth.len() as f64 >= 0.99, "{ok}/{}", truth.len());
    }
}
