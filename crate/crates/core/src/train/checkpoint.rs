//! Checkpoints: parameters, optimizer moments, step counter and the config
//! they were trained with.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::TrainConfig;
use super::TrainError;
use crate::field::MlpParams;
use crate::rawio::{self, DType, RawHeader};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub adam: AdamState,
    pub step: u64,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    step: u64,
    adam_t: u64,
    config: TrainConfig,
}

impl Checkpoint {
    /// Writes `params.bin`, `adam_m.bin`, `adam_v.bin` (each with a header)
    /// and `checkpoint.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Io(dir.to_path_buf(), e))?;
        self.params.write(&dir.join("params.bin"))?;
        let n = self.adam.m.len();
        rawio::write_f64(&dir.join("adam_m.bin"), RawHeader::new(DType::F64, vec![n]), &self.adam.m)?;
        rawio::write_f64(&dir.join("adam_v.bin"), RawHeader::new(DType::F64, vec![n]), &self.adam.v)?;
        let meta = CheckpointMeta { version: CHECKPOINT_VERSION, step: self.step, adam_t: self.adam.t, config: self.config.clone() };
        let text = toml::to_string(&meta).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let path = dir.join("checkpoint.toml");
        std::fs::write(&path, text).map_err(|e| TrainError::Io(path, e))
    }

    /// Reads a checkpoint directory, or the directory holding a given
    /// `checkpoint.toml`.
    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let dir = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new(".")) };
        let meta_path = dir.join("checkpoint.toml");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| TrainError::Io(meta_path.clone(), e))?;
        let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported checkpoint version {}", meta.version)));
        }
        let params = MlpParams::read(&dir.join("params.bin"))?;
        let (_, m) = rawio::read_f64(&dir.join("adam_m.bin"))?;
        let (_, v) = rawio::read_f64(&dir.join("adam_v.bin"))?;
        if m.len() != params.len() || v.len() != params.len() {
            return Err(TrainError::Checkpoint("optimizer state does not match parameters".into()));
        }
        Ok(Self { params, adam: AdamState { m, v, t: meta.adam_t }, step: meta.step, config: meta.config })
    }
}

/// `ckpt-<step>` directory name.
pub fn checkpoint_dir(out: &Path, step: u64) -> PathBuf {
    out.join(format!("ckpt-{step:08}"))
}

/// Checkpoint directories under `out`, oldest first.
pub fn list_checkpoints(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("ckpt-")))
                .collect()
        })
        .unwrap_or_default();
    dirs.sort();
    dirs
}

/// Writes a checkpoint and removes all but the newest two.
pub fn save_rotating(out: &Path, ckpt: &Checkpoint) -> Result<PathBuf, TrainError> {
    let dir = checkpoint_dir(out, ckpt.step);
    ckpt.write(&dir)?;
    let all = list_checkpoints(out);
    for old in all.iter().take(all.len().saturating_sub(2)) {
        std::fs::remove_dir_all(old).map_err(|e| TrainError::Io(old.clone(), e))?;
    }
    Ok(dir)
}

/// Newest checkpoint under `out`.
pub fn latest_checkpoint(out: &Path) -> Option<PathBuf> {
    list_checkpoints(out).pop()
}
