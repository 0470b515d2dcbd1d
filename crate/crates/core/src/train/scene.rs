//! Training scenes: rendered input views plus a ground-truth oracle that
//! labels freshly drawn points every epoch.

use std::path::Path;

use nalgebra::Point3;
use rayon::prelude::*;

use super::config::{NetworkConfig, ViewConfig};
use super::TrainError;
use crate::camera::{rig_circle, Camera, Intrinsics};
use crate::compose::SceneManifest;
use crate::field::ViewContext;
use crate::mesh::{self, sample_points_in, Aabb, SampleSet, SampleSource, SamplingConfig, TriMesh, LABEL_HUMAN, LABEL_OBJECT};

/// What a scene can tell about occupancy.
#[derive(Debug, Clone)]
pub enum SceneTruth {
    /// Both instances closed: per-instance occupancy.
    Instances { human: TriMesh, object: TriMesh },
    /// Only the object is closed.
    ObjectOnly { object: TriMesh },
    /// Scan-like: a point is occupied when it is inside any part.
    Union { parts: Vec<TriMesh> },
}

impl SceneTruth {
    pub fn source(&self) -> SampleSource {
        match self {
            Self::Instances { .. } => SampleSource::SyntheticInstance,
            Self::ObjectOnly { .. } => SampleSource::SyntheticObjectOnly,
            Self::Union { .. } => SampleSource::RealUnion,
        }
    }

    /// Labels `points` with whatever ground truth the scene has.
    pub fn label(&self, points: Vec<Point3<f64>>) -> SampleSet {
        let occ = |m: &TriMesh| -> Vec<u8> { points.par_iter().map(|p| u8::from(m.inside_unchecked(p))).collect() };
        match self {
            Self::Instances { human, object } => {
                let (h, o) = (occ(human), occ(object));
                SampleSet::synthetic(points, h, o)
            }
            Self::ObjectOnly { object } => {
                let o = occ(object);
                SampleSet::object_only(points, o)
            }
            Self::Union { parts } => {
                let u = points.par_iter().map(|p| u8::from(parts.iter().any(|m| m.inside_unchecked(p)))).collect();
                SampleSet::real_union(points, u)
            }
        }
    }
}

/// One scene as seen by the trainer.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub name: String,
    /// Labeled mesh the input views are rendered from.
    pub render_mesh: TriMesh,
    pub truth: SceneTruth,
    pub material: String,
    pub context: ViewContext,
}

/// Cameras on a circle around the center of `bounds`.
pub fn scene_cameras(bounds: &Aabb, views: &ViewConfig) -> Result<Vec<Camera>, TrainError> {
    let intr = Intrinsics::from_fov(views.fov_deg, views.resolution, views.resolution);
    Ok(rig_circle(views.n_views, views.radius, views.height, bounds.center(), &intr)?)
}

/// Renders the input views of a labeled scene mesh.
pub fn scene_context(render_mesh: &TriMesh, views: &ViewConfig, net: &NetworkConfig) -> Result<ViewContext, TrainError> {
    let cams = scene_cameras(&render_mesh.aabb(), views)?;
    Ok(ViewContext::render(cams, render_mesh, &net.pyramid, views.radius, net.n_freq)?)
}

impl TrainScene {
    pub fn new(
        name: impl Into<String>,
        render_mesh: TriMesh,
        truth: SceneTruth,
        material: impl Into<String>,
        views: &ViewConfig,
        net: &NetworkConfig,
    ) -> Result<Self, TrainError> {
        let context = scene_context(&render_mesh, views, net)?;
        Ok(Self { name: name.into(), render_mesh, truth, material: material.into(), context })
    }

    /// Synthetic scene with instance ground truth; an open human mesh
    /// yields object-only supervision.
    pub fn synthetic(
        name: impl Into<String>,
        human: TriMesh,
        object: TriMesh,
        material: impl Into<String>,
        views: &ViewConfig,
        net: &NetworkConfig,
    ) -> Result<Self, TrainError> {
        let render = human.clone().with_uniform_label(LABEL_HUMAN).merge(&object.clone().with_uniform_label(LABEL_OBJECT));
        let truth = if human.is_watertight() {
            SceneTruth::Instances { human, object }
        } else {
            SceneTruth::ObjectOnly { object }
        };
        Self::new(name, render, truth, material, views, net)
    }

    /// Scan-like scene: the union of the two meshes is the only ground
    /// truth; the instance colors still appear in the rendered views.
    pub fn real(
        name: impl Into<String>,
        human: TriMesh,
        object: TriMesh,
        material: impl Into<String>,
        views: &ViewConfig,
        net: &NetworkConfig,
    ) -> Result<Self, TrainError> {
        let render = human.clone().with_uniform_label(LABEL_HUMAN).merge(&object.clone().with_uniform_label(LABEL_OBJECT));
        Self::new(name, render, SceneTruth::Union { parts: vec![human, object] }, material, views, net)
    }

    /// Loads a composed scene; the manifest's source decides the truth.
    pub fn from_manifest(
        path: &Path,
        material: &str,
        views: &ViewConfig,
        net: &NetworkConfig,
    ) -> Result<Self, TrainError> {
        let manifest = SceneManifest::load(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let scene = mesh::io::load_mesh(&dir.join(&manifest.scene_mesh))?;
        let part = |label| {
            scene.extract_label(label).ok_or_else(|| TrainError::MissingGroundTruth(format!("{}: no part labeled {label}", path.display())))
        };
        let (human, object) = (part(LABEL_HUMAN)?, part(LABEL_OBJECT)?);
        let name = dir.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        match manifest.source {
            SampleSource::RealUnion => Self::real(name, human, object, material, views, net),
            _ => Self::synthetic(name, human, object, material, views, net),
        }
    }

    pub fn source(&self) -> SampleSource {
        self.truth.source()
    }

    /// Box that sampled points are drawn from.
    pub fn sample_bounds(&self, sampling: &SamplingConfig) -> Aabb {
        self.render_mesh.aabb().padded(sampling.bbox_pad)
    }

    /// Fresh labeled points.
    pub fn sample(&self, n: usize, sampling: &SamplingConfig, seed: u64) -> Result<SampleSet, TrainError> {
        let pts = sample_points_in(&self.render_mesh, &self.sample_bounds(sampling), n, sampling, seed)?;
        Ok(self.truth.label(pts))
    }
}
