//! Two-primitive toy scenes: a sphere standing in for the human and a box
//! standing in for the object, pushed into each other.
//!
//! The scan-like scene is supervised only by union occupancy; its instance
//! meshes are kept so tests can grade how the two channels were separated.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::scene::TrainScene;
use super::TrainError;
use crate::mesh::primitives::{box_mesh, icosphere};
use crate::mesh::TriMesh;

/// Shape and jitter of the toy scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// Synthetic scenes with instance ground truth.
    pub n_synthetic: usize,
    /// Half-width of the uniform jitter applied to each synthetic placement.
    pub jitter: f64,
    /// Largest rotation of the synthetic object about the vertical axis (radians).
    pub max_angle: f64,
    /// Shift of the synthetic object along +x. At 0.15 the box face is
    /// tangent to the sphere, so synthetic pairs touch without overlapping.
    pub synthetic_shift: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { n_synthetic: 8, jitter: 0.05, max_angle: 0.4, synthetic_shift: 0.15, seed: 0 }
    }
}

/// Sphere of radius 0.3 at the origin.
pub fn toy_human() -> TriMesh {
    icosphere(0.3, 3)
}

/// Box reaching 0.15 into the sphere along +x.
pub fn toy_object() -> TriMesh {
    box_mesh(Point3::new(0.15, -0.2, -0.2), Point3::new(0.65, 0.2, 0.2), 4)
}

/// Toy training set. `scenes[real]` is the scan-like scene built from
/// `human` and `object`.
#[derive(Debug, Clone)]
pub struct ToySet {
    pub scenes: Vec<TrainScene>,
    pub real: usize,
    pub human: TriMesh,
    pub object: TriMesh,
}

/// Builds jittered synthetic pairs (touching by default) followed by one scan-like pair. The
/// synthetic scenes use material `rigid`; the scan-like one uses
/// `real_material`, which selects its γ.
pub fn toy_scenes(cfg: &TrainConfig, toy: &ToyConfig, real_material: &str) -> Result<ToySet, TrainError> {
    let (human, object) = (toy_human(), toy_object());
    let mut rng = ChaCha8Rng::seed_from_u64(toy.seed);
    let mut scenes = Vec::with_capacity(toy.n_synthetic + 1);
    for i in 0..toy.n_synthetic {
        let mut jitter = || Vector3::from_fn(|_, _| rng.random_range(-toy.jitter..=toy.jitter));
        let mut to = jitter();
        to.x = toy.synthetic_shift + to.x.abs();
        let angle = rng.random_range(-toy.max_angle..=toy.max_angle);
        // Rotating about the sphere center keeps the box face's distance to it.
        let rot: Matrix3<f64> = Rotation3::from_axis_angle(&Vector3::y_axis(), angle).into_inner();
        let o = object.transform(&Matrix3::identity(), &to, 1.0)?.transform(&rot, &Vector3::zeros(), 1.0)?;
        let h = human.clone();
        scenes.push(TrainScene::synthetic(format!("toy-syn-{i}"), h, o, "rigid", &cfg.views, &cfg.network)?);
    }
    let real = scenes.len();
    scenes.push(TrainScene::real("toy-real", human.clone(), object.clone(), real_material, &cfg.views, &cfg.network)?);
    Ok(ToySet { scenes, real, human, object })
}
