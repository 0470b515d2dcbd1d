//! Synthetic scene composition: skinning, reposing and randomized
//! human–object placement with labeled occupancy samples.
//!
//! ```
//! use instfield::compose::{compose_scene, PlacementSpec};
//! use instfield::mesh::primitives::{box_mesh, icosphere};
//! use nalgebra::Point3;
//!
//! let human = icosphere(0.3, 2);
//! let object = box_mesh(Point3::new(0.2, -0.2, -0.2), Point3::new(0.6, 0.2, 0.2), 1);
//! let spec = PlacementSpec { n_samples: 500, seed: 3, ..PlacementSpec::default() };
//! let scene = compose_scene(&human, &object, &spec).unwrap();
//! let s = &scene.samples;
//! let (h, o, u) = (s.occ_human().unwrap(), s.occ_object().unwrap(), s.occ_union().unwrap());
//! assert!((0..s.len()).all(|i| u[i] == h[i].max(o[i])));
//! ```

mod lbs;
pub mod template;

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lbs::{
    joint_transforms, lbs_forward, lbs_inverse, repose, skin_forward, skin_inverse, transfer_weights, Affine,
    JointGroup, Pose, SkinWeights, SkinnedTemplate, MIN_BLEND_DET,
};

use crate::mesh::{self, sample_points_in, MeshError, SampleSet, SampleSource, SamplingConfig, TriMesh};

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("invalid skin weights: {0}")]
    InvalidWeights(String),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("blended transform of vertex {vertex} is singular (det {det:e})")]
    SingularBlend { vertex: usize, det: f64 },
    #[error("invalid placement spec: {0}")]
    InvalidSpec(String),
    #[error("no placement within the overlap limit after {0} attempts")]
    PlacementFailed(usize),
    #[error("scene manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Raw(#[from] crate::rawio::RawError),
}

/// Ranges for the random object placement and sample generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementSpec {
    /// Per-axis translation interval in meters.
    pub translation_min: [f64; 3],
    pub translation_max: [f64; 3],
    /// Rotation axis and angle interval in radians.
    pub rotation_axis: [f64; 3],
    pub angle_range: [f64; 2],
    pub scale_range: [f64; 2],
    pub allow_penetration: bool,
    /// Largest accepted fraction of inside samples that are inside both
    /// meshes. Ignored unless penetration is allowed.
    pub max_overlap: f64,
    pub max_attempts: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub sampling: SamplingConfig,
}

impl Default for PlacementSpec {
    fn default() -> Self {
        Self {
            translation_min: [-0.1; 3],
            translation_max: [0.1; 3],
            rotation_axis: [0.0, 1.0, 0.0],
            angle_range: [-std::f64::consts::PI, std::f64::consts::PI],
            scale_range: [0.9, 1.1],
            allow_penetration: true,
            max_overlap: 1.0,
            max_attempts: 64,
            seed: 0,
            n_samples: 6000,
            sampling: SamplingConfig::default(),
        }
    }
}

impl PlacementSpec {
    pub fn validate(&self) -> Result<(), ComposeError> {
        let bad = |m: &str| Err(ComposeError::InvalidSpec(m.into()));
        if !(self.scale_range[0] > 0.0 && self.scale_range[0] <= self.scale_range[1]) {
            return bad("scale interval must be positive and ordered");
        }
        if (0..3).any(|k| self.translation_min[k] > self.translation_max[k]) || self.angle_range[0] > self.angle_range[1] {
            return bad("intervals must be ordered");
        }
        if Vector3::from(self.rotation_axis).norm() < 1e-12 {
            return bad("rotation axis must be non-zero");
        }
        if self.n_samples == 0 || self.max_attempts == 0 {
            return bad("n_samples and max_attempts must be positive");
        }
        Ok(())
    }
}

/// Object transform `x ↦ s·R·(x − pivot) + pivot + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub scale: f64,
    pub pivot: [f64; 3],
}

impl Placement {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity().into(), translation: [0.0; 3], scale: 1.0, pivot: [0.0; 3] }
    }

    /// Row-major rotation as a matrix.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2])
    }

    pub fn apply(&self, mesh: &TriMesh) -> Result<TriMesh, MeshError> {
        let r = self.rotation_matrix();
        let c = Vector3::from(self.pivot);
        let t = c + Vector3::from(self.translation) - r * c * self.scale;
        mesh.transform(&r, &t, self.scale)
    }

    fn sample(spec: &PlacementSpec, pivot: Point3<f64>, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |lo: f64, hi: f64| if lo < hi { rng.random_range(lo..hi) } else { lo };
        let translation = [
            draw(spec.translation_min[0], spec.translation_max[0]),
            draw(spec.translation_min[1], spec.translation_max[1]),
            draw(spec.translation_min[2], spec.translation_max[2]),
        ];
        let angle = draw(spec.angle_range[0], spec.angle_range[1]);
        let scale = draw(spec.scale_range[0], spec.scale_range[1]);
        let axis = Unit::new_normalize(Vector3::from(spec.rotation_axis));
        let r = Rotation3::from_axis_angle(&axis, angle).into_inner();
        let rotation = [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ];
        Self { rotation, translation, scale, pivot: pivot.coords.into() }
    }
}

/// A placed human–object pair with its occupancy samples.
#[derive(Debug, Clone)]
pub struct ComposedScene {
    pub human: TriMesh,
    pub object: TriMesh,
    pub placement: Placement,
    pub samples: SampleSet,
}

impl ComposedScene {
    /// Both meshes in one labeled mesh.
    pub fn scene_mesh(&self) -> TriMesh {
        self.human
            .clone()
            .with_uniform_label(mesh::LABEL_HUMAN)
            .merge(&self.object.clone().with_uniform_label(mesh::LABEL_OBJECT))
    }
}

/// Places `object` at random next to a fixed `human` and labels samples of
/// the joint bounding box against each mesh independently.
///
/// Points inside both meshes carry 1 in both channels. A human mesh that is
/// not watertight yields an object-only sample set.
pub fn compose_scene(human: &TriMesh, object: &TriMesh, spec: &PlacementSpec) -> Result<ComposedScene, ComposeError> {
    spec.validate()?;
    if !object.is_watertight() {
        return Err(MeshError::NonWatertight.into());
    }
    let human_closed = human.is_watertight();
    if !human_closed {
        log::warn!("human mesh is not watertight; emitting object-only samples");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pivot = object.aabb().center();
    let limit = if spec.allow_penetration { spec.max_overlap } else { 0.0 };
    for _ in 0..spec.max_attempts {
        let placement = Placement::sample(spec, pivot, &mut rng);
        let sample_seed: u64 = rng.random();
        let placed = placement.apply(object)?;
        let merged = human.merge(&placed);
        let bounds = merged.aabb().padded(spec.sampling.bbox_pad);
        let points = sample_points_in(&merged, &bounds, spec.n_samples, &spec.sampling, sample_seed)?;
        let occ_o: Vec<u8> = points.par_iter().map(|p| u8::from(placed.inside_unchecked(p))).collect();
        let occ_h: Vec<u8> = if human_closed {
            points.par_iter().map(|p| u8::from(human.inside_unchecked(p))).collect()
        } else {
            // Without a closed human, overlap is judged on the object alone.
            vec![0; points.len()]
        };
        let both = occ_h.iter().zip(&occ_o).filter(|(h, o)| **h == 1 && **o == 1).count();
        let any = occ_h.iter().zip(&occ_o).filter(|(h, o)| **h == 1 || **o == 1).count();
        let overlap = if any == 0 { 0.0 } else { both as f64 / any as f64 };
        if overlap > limit || (limit == 0.0 && both > 0) {
            continue;
        }
        let samples = if human_closed {
            SampleSet::synthetic(points, occ_h, occ_o)
        } else {
            SampleSet::object_only(points, occ_o)
        };
        return Ok(ComposedScene { human: human.clone(), object: placed, placement, samples });
    }
    Err(ComposeError::PlacementFailed(spec.max_attempts))
}

/// Seat height of a chair: the 75th height percentile of a 24³ lattice of
/// cell centers inside the chair.
pub fn seat_height(chair: &TriMesh) -> Result<f64, ComposeError> {
    if !chair.is_watertight() {
        return Err(MeshError::NonWatertight.into());
    }
    const N: usize = 24;
    let b = chair.aabb();
    let e = b.extent();
    let mut heights: Vec<f64> = (0..N * N * N)
        .into_par_iter()
        .filter_map(|i| {
            let (x, y, z) = (i % N, (i / N) % N, i / (N * N));
            let f = |k: usize| (k as f64 + 0.5) / N as f64;
            let p = Point3::new(b.min.x + f(x) * e.x, b.min.y + f(y) * e.y, b.min.z + f(z) * e.z);
            chair.inside_unchecked(&p).then_some(f(y) * e.y)
        })
        .collect();
    if heights.is_empty() {
        return Err(MeshError::EmptyMesh.into());
    }
    heights.sort_by(f64::total_cmp);
    let rank = ((0.75 * heights.len() as f64).ceil() as usize).max(1) - 1;
    // Offsets are relative to the box floor so the estimate moves exactly
    // with the chair.
    Ok(b.min.y + heights[rank])
}

/// Vertical translation that brings the chair seat to the height of the
/// hip vertex of the template posed by `pose`.
pub fn seat_height_align(
    tmpl: &SkinnedTemplate,
    pose: &Pose,
    hip_vertex: usize,
    chair: &TriMesh,
) -> Result<Vector3<f64>, ComposeError> {
    let n = tmpl.rest_mesh().vertices().len();
    if hip_vertex >= n {
        return Err(ComposeError::InvalidSpec(format!("hip vertex {hip_vertex} out of range for {n} vertices")));
    }
    let posed = lbs_forward(tmpl, pose)?;
    let hip = posed.vertices()[hip_vertex].y;
    Ok(Vector3::new(0.0, hip - seat_height(chair)?, 0.0))
}

pub const MANIFEST_VERSION: u32 = 1;

/// Structured record of one composed scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    pub human: PathBuf,
    pub object: PathBuf,
    pub source: SampleSource,
    pub placement: Placement,
    pub spec: PlacementSpec,
    /// Directory of the sample set, relative to the manifest.
    pub samples: PathBuf,
    /// Labeled scene mesh, relative to the manifest.
    pub scene_mesh: PathBuf,
}

impl SceneManifest {
    pub fn save(&self, path: &Path) -> Result<(), ComposeError> {
        let text = toml::to_string(self).map_err(|e| ComposeError::Manifest(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ComposeError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ComposeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ComposeError::Manifest(format!("{}: {e}", path.display())))?;
        let m: Self = toml::from_str(&text).map_err(|e| ComposeError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(ComposeError::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }
}

/// Writes `manifest.toml`, `scene.ply` and `samples/` into `dir`.
pub fn write_scene(
    dir: &Path,
    scene: &ComposedScene,
    human_path: &Path,
    object_path: &Path,
    spec: &PlacementSpec,
) -> Result<SceneManifest, ComposeError> {
    std::fs::create_dir_all(dir.join("samples")).map_err(MeshError::from)?;
    mesh::io::write_ply(&dir.join("scene.ply"), &scene.scene_mesh(), None)?;
    scene.samples.write(&dir.join("samples"))?;
    let manifest = SceneManifest {
        version: MANIFEST_VERSION,
        human: human_path.to_path_buf(),
        object: object_path.to_path_buf(),
        source: scene.samples.source(),
        placement: scene.placement,
        spec: spec.clone(),
        samples: PathBuf::from("samples"),
        scene_mesh: PathBuf::from("scene.ply"),
    };
    manifest.save(&dir.join("manifest.toml"))?;
    Ok(manifest)
}
