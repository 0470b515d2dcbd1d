//! Training configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::TrainError;
use crate::field::DEFAULT_PYRAMID;
use crate::losses::LossConfig;
use crate::mesh::SamplingConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Network shape and input encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Hidden widths; the first layer is applied per view.
    pub hidden: Vec<usize>,
    /// Octaves of the view-direction embedding.
    pub n_freq: usize,
    /// Box-filter radii of the feature pyramid, in pixels.
    pub pyramid: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![128; 4], n_freq: 6, pyramid: DEFAULT_PYRAMID.to_vec() }
    }
}

/// Input cameras on a horizontal circle around each scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub n_views: usize,
    pub resolution: usize,
    pub fov_deg: f64,
    pub radius: f64,
    pub height: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { n_views: 6, resolution: 512, fov_deg: 40.0, radius: 3.0, height: 0.5 }
    }
}

/// One training scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    /// Scene manifest, relative to the config file.
    pub manifest: PathBuf,
    /// Key into [`TrainConfig::gamma_rig`].
    #[serde(default = "default_material")]
    pub material: String,
}

fn default_material() -> String {
    "rigid".into()
}

/// Complementary-training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub version: u32,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_scenes: usize,
    pub points_per_scene: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Synthetic : real scenes per batch.
    pub mix_ratio: [f64; 2],
    /// Rigidity coefficient per object material.
    pub gamma_rig: BTreeMap<String, f64>,
    pub checkpoint_every: u64,
    /// Points per forward/backward chunk; fixes the summation order.
    pub chunk_points: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub network: NetworkConfig,
    pub views: ViewConfig,
    pub sampling: SamplingConfig,
    pub scenes: Vec<SceneEntry>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            learning_rate: 1e-4,
            batch_scenes: 4,
            points_per_scene: 6000,
            epochs: 10,
            steps_per_epoch: 50,
            mix_ratio: [1.0, 1.0],
            gamma_rig: BTreeMap::from([("rigid".into(), 1.0), ("flexible".into(), 0.75), ("soft".into(), 0.5)]),
            checkpoint_every: 500,
            chunk_points: 512,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            network: NetworkConfig::default(),
            views: ViewConfig::default(),
            sampling: SamplingConfig::default(),
            scenes: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    pub fn gamma_for(&self, material: &str) -> Result<f64, TrainError> {
        self.gamma_rig.get(material).copied().ok_or_else(|| TrainError::Config(format!("no gamma_rig for material {material:?}")))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if self.points_per_scene == 0 || self.batch_scenes == 0 || self.chunk_points == 0 {
            return bad("points_per_scene, batch_scenes and chunk_points must be positive".into());
        }
        if self.mix_ratio.iter().any(|r| !(*r >= 0.0 && r.is_finite())) || self.mix_ratio.iter().all(|r| *r == 0.0) {
            return bad("mix_ratio needs non-negative parts, at least one positive".into());
        }
        if self.network.hidden.is_empty() || self.network.pyramid.is_empty() {
            return bad("network needs hidden layers and pyramid levels".into());
        }
        if self.views.n_views == 0 || self.views.resolution == 0 || !(self.views.radius > 0.0) {
            return bad("views need a positive count, resolution and radius".into());
        }
        for (k, g) in &self.gamma_rig {
            if !(0.0..=1.0).contains(g) {
                return bad(format!("gamma_rig for {k:?} is outside [0, 1]"));
            }
        }
        for s in &self.scenes {
            self.gamma_for(&s.material)?;
        }
        self.loss.validate().map_err(|e| TrainError::Config(e.to_string()))
    }

    /// Synthetic and real scene counts in a batch.
    pub fn batch_split(&self) -> (usize, usize) {
        let [a, b] = self.mix_ratio;
        let syn = (self.batch_scenes as f64 * a / (a + b)).round() as usize;
        (syn, self.batch_scenes - syn)
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.batch_split(), (2, 2));
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = TrainConfig::from_toml(
            "learning_rate = 0.001\nmix_ratio = [1.0, 0.0]\n[[scenes]]\nmanifest = \"a/manifest.toml\"\nmaterial = \"soft\"\n",
        )
        .unwrap();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.batch_split(), (4, 0));
        assert_eq!(c.gamma_for("soft").unwrap(), 0.5);
        assert_eq!(c.points_per_scene, 6000);
    }

    #[test]
    fn invalid_configs() {
        assert!(TrainConfig::from_toml("learning_rate = 0.0").is_err());
        assert!(TrainConfig::from_toml("mix_ratio = [0.0, 0.0]").is_err());
        assert!(TrainConfig::from_toml("[[scenes]]\nmanifest = \"x\"\nmaterial = \"glass\"").is_err());
        assert!(TrainConfig::from_toml("version = 2").is_err());
    }
}
