//! Complementary training: mixed synthetic and scan-like batches, loss
//! routing by sample source, Adam updates, checkpoints and extraction.
//!
//! Every step draws its scenes from a generator seeded by `(seed, step)`,
//! and every epoch's points from a seed derived from `(seed, epoch, scene)`,
//! so a run resumed from a checkpoint continues exactly as an uninterrupted
//! one would.

mod adam;
mod checkpoint;
mod config;
mod scene;
mod toy;

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{checkpoint_dir, latest_checkpoint, list_checkpoints, save_rotating, Checkpoint, CHECKPOINT_VERSION};
pub use config::{NetworkConfig, SceneEntry, TrainConfig, ViewConfig, CONFIG_VERSION};
pub use scene::{scene_cameras, scene_context, SceneTruth, TrainScene};
pub use toy::{toy_human, toy_object, toy_scenes, ToyConfig, ToySet};

use crate::field::{eval_points, ForwardCache, MlpConfig, MlpParams, ViewContext};
use crate::losses::{loss_batch, BatchPart, LossRecord};
use crate::mesh::{Aabb, SampleSet, SampleSource, TriMesh};
use crate::metrics::{marching_cubes, ScalarGrid};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),
    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Camera(#[from] crate::camera::CameraError),
    #[error(transparent)]
    Compose(#[from] crate::compose::ComposeError),
    #[error(transparent)]
    Raw(#[from] crate::rawio::RawError),
}

/// Mixes seed components into one well-spread 64-bit seed.
pub fn sub_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer.
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// Network shape implied by a config and the scenes' input encoding.
pub fn mlp_config(cfg: &TrainConfig, view_input: usize) -> MlpConfig {
    MlpConfig::new(view_input, cfg.network.hidden.clone())
}

/// Stateful training loop over a fixed scene list.
#[derive(Debug)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    scenes: &'a [TrainScene],
    gammas: Vec<f64>,
    synthetic: Vec<usize>,
    real: Vec<usize>,
    params: MlpParams,
    adam: AdamState,
    step: u64,
    samples: Vec<Option<(u64, SampleSet)>>,
}

struct SceneForward {
    scene: usize,
    chunks: Vec<ForwardCache>,
    s_human: Vec<f64>,
    s_object: Vec<f64>,
}

impl<'a> Trainer<'a> {
    /// Fresh run, optionally warm-started from `init` parameters.
    pub fn new(cfg: TrainConfig, scenes: &'a [TrainScene], init: Option<MlpParams>) -> Result<Self, TrainError> {
        cfg.validate()?;
        let view_input = Self::check_scenes(scenes)?;
        let mcfg = mlp_config(&cfg, view_input);
        let params = match init {
            Some(p) if p.config() == &mcfg => p,
            Some(p) => {
                return Err(TrainError::Config(format!(
                    "initial parameters have shape {:?}, expected {:?}",
                    p.config(),
                    mcfg
                )))
            }
            None => MlpParams::init(mcfg, sub_seed(&[cfg.seed, 0x1417])),
        };
        let adam = AdamState::new(params.len());
        Self::assemble(cfg, scenes, params, adam, 0)
    }

    /// Continues from a checkpoint.
    pub fn resume(ckpt: Checkpoint, scenes: &'a [TrainScene]) -> Result<Self, TrainError> {
        ckpt.config.validate()?;
        let view_input = Self::check_scenes(scenes)?;
        if ckpt.params.config() != &mlp_config(&ckpt.config, view_input) {
            return Err(TrainError::Checkpoint("parameters do not match the scenes' input encoding".into()));
        }
        Self::assemble(ckpt.config, scenes, ckpt.params, ckpt.adam, ckpt.step)
    }

    fn check_scenes(scenes: &[TrainScene]) -> Result<usize, TrainError> {
        let first = scenes.first().ok_or_else(|| TrainError::Config("no training scenes".into()))?;
        let d = first.context.view_input_dim();
        if scenes.iter().any(|s| s.context.view_input_dim() != d || s.context.n_views() != first.context.n_views()) {
            return Err(TrainError::Config("scenes differ in view count or input encoding".into()));
        }
        Ok(d)
    }

    fn assemble(
        cfg: TrainConfig,
        scenes: &'a [TrainScene],
        params: MlpParams,
        adam: AdamState,
        step: u64,
    ) -> Result<Self, TrainError> {
        let gammas = scenes.iter().map(|s| cfg.gamma_for(&s.material)).collect::<Result<Vec<_>, _>>()?;
        let synthetic: Vec<usize> = (0..scenes.len()).filter(|&i| scenes[i].source() != SampleSource::RealUnion).collect();
        let real: Vec<usize> = (0..scenes.len()).filter(|&i| scenes[i].source() == SampleSource::RealUnion).collect();
        let (n_syn, n_real) = cfg.batch_split();
        if n_syn > 0 && synthetic.is_empty() {
            return Err(TrainError::MissingGroundTruth("mix_ratio asks for synthetic scenes but none are given".into()));
        }
        if n_real > 0 && real.is_empty() {
            return Err(TrainError::MissingGroundTruth("mix_ratio asks for real scenes but none are given".into()));
        }
        Ok(Self { samples: vec![None; scenes.len()], cfg, scenes, gammas, synthetic, real, params, adam, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { params: self.params.clone(), adam: self.adam.clone(), step: self.step, config: self.cfg.clone() }
    }

    /// Scenes used by `step`, synthetic first.
    pub fn batch_scenes(&self, step: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(&[self.cfg.seed, 0xba7c]));
        rng.set_stream(step);
        let (n_syn, n_real) = self.cfg.batch_split();
        let mut out = Vec::with_capacity(n_syn + n_real);
        for _ in 0..n_syn {
            out.push(self.synthetic[rng.random_range(0..self.synthetic.len())]);
        }
        for _ in 0..n_real {
            out.push(self.real[rng.random_range(0..self.real.len())]);
        }
        out
    }

    fn ensure_samples(&mut self, scene: usize, epoch: u64) -> Result<(), TrainError> {
        if !matches!(&self.samples[scene], Some((e, _)) if *e == epoch) {
            let seed = sub_seed(&[self.cfg.seed, epoch, scene as u64]);
            let set = self.scenes[scene].sample(self.cfg.points_per_scene, &self.cfg.sampling, seed)?;
            self.samples[scene] = Some((epoch, set));
        }
        Ok(())
    }

    fn samples_of(&self, scene: usize) -> &SampleSet {
        &self.samples[scene].as_ref().expect("samples drawn before use").1
    }

    fn forward_scene(&self, scene: usize) -> Result<SceneForward, TrainError> {
        let ctx = &self.scenes[scene].context;
        let pts = self.samples_of(scene).points();
        let chunks = pts
            .par_chunks(self.cfg.chunk_points)
            .map(|c| Ok(self.params.forward(&ctx.batch(c), c.len(), ctx.n_views())?))
            .collect::<Result<Vec<_>, TrainError>>()?;
        let s_human = chunks.iter().flat_map(|c| c.s_human.iter().copied()).collect();
        let s_object = chunks.iter().flat_map(|c| c.s_object.iter().copied()).collect();
        Ok(SceneForward { scene, chunks, s_human, s_object })
    }

    /// One optimizer step; returns the step's loss record.
    pub fn step(&mut self) -> Result<LossRecord, TrainError> {
        let step = self.step;
        let epoch = step / self.cfg.steps_per_epoch.max(1) as u64;
        let batch = self.batch_scenes(step);
        for &s in &batch {
            self.ensure_samples(s, epoch)?;
        }
        let forwards = batch.iter().map(|&s| self.forward_scene(s)).collect::<Result<Vec<_>, _>>()?;
        let parts: Vec<BatchPart<'_>> = forwards
            .iter()
            .map(|f| BatchPart {
                s_human: &f.s_human,
                s_object: &f.s_object,
                gt: self.samples_of(f.scene),
                gamma_rig: Some(self.gammas[f.scene]),
            })
            .collect();
        let report = loss_batch(&parts, &self.cfg.loss)?;
        debug_assert!(parts
            .iter()
            .all(|p| (p.gt.source() == SampleSource::RealUnion) == p.gt.occ_human().is_none() || p.gt.source() == SampleSource::SyntheticObjectOnly));

        // Per-chunk gradients, summed in a fixed order.
        let mut jobs = Vec::new();
        let mut offset = 0;
        for f in &forwards {
            for c in &f.chunks {
                let n = c.s_human.len();
                jobs.push((c, offset, n));
                offset += n;
            }
        }
        let n_params = self.params.len();
        let partials = jobs
            .par_iter()
            .map(|&(c, off, n)| {
                let mut g = vec![0.0; n_params];
                self.params.backward(c, &report.d_human[off..off + n], &report.d_object[off..off + n], &mut g)?;
                Ok(g)
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let mut grad = vec![0.0; n_params];
        for g in &partials {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let mean_gamma = if batch.is_empty() { 0.0 } else { batch.iter().map(|&s| self.gammas[s]).sum::<f64>() / batch.len() as f64 };
        adam_step(self.params.data_mut(), &grad, &mut self.adam, self.cfg.learning_rate, &self.cfg.adam)?;
        if !self.params.data().iter().all(|v| v.is_finite()) {
            return Err(crate::field::FieldError::NonFinite.into());
        }
        self.step += 1;
        Ok(LossRecord::new(step, &report, mean_gamma))
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

/// Runs a trainer to the end of its schedule. With `out`, appends every
/// step's record to `out/loss_log.jsonl` and writes rotating checkpoints.
pub fn run(mut trainer: Trainer<'_>, out: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| TrainError::Io(dir.to_path_buf(), e))?;
            let path = dir.join("loss_log.jsonl");
            Some((OpenOptions::new().create(true).append(true).open(&path).map_err(|e| TrainError::Io(path.clone(), e))?, path))
        }
        None => None,
    };
    let mut log = Vec::new();
    let every = trainer.config().checkpoint_every;
    while !trainer.is_done() {
        let rec = trainer.step()?;
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", rec.to_json_line()).map_err(|e| TrainError::Io(path.clone(), e))?;
        }
        if rec.step % 100 == 0 {
            log::info!("step {} l_total {:.6}", rec.step, rec.l_total);
        }
        log.push(rec);
        if let Some(dir) = out {
            if every > 0 && trainer.step_count().is_multiple_of(every) && !trainer.is_done() {
                save_rotating(dir, &trainer.checkpoint())?;
            }
        }
    }
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = out {
        save_rotating(dir, &checkpoint)?;
    }
    Ok(TrainOutcome { checkpoint, log })
}

/// Trains from scratch (or from `init`) on `scenes`.
pub fn train(
    cfg: &TrainConfig,
    scenes: &[TrainScene],
    init: Option<MlpParams>,
    out: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    run(Trainer::new(cfg.clone(), scenes, init)?, out)
}

/// Loads every scene listed in a config; paths are relative to `base`.
pub fn load_scenes(cfg: &TrainConfig, base: &Path) -> Result<Vec<TrainScene>, TrainError> {
    cfg.scenes
        .iter()
        .map(|e| TrainScene::from_manifest(&base.join(&e.manifest), &e.material, &cfg.views, &cfg.network))
        .collect()
}

/// Grid settings for [`extract`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub resolution: usize,
    pub iso: f64,
    /// Padding of the scene box, as a fraction of its extent.
    pub pad: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { resolution: 128, iso: 0.5, pad: 0.05 }
    }
}

/// Samples both channels on a grid over `bounds` and extracts each iso
/// surface. The grid border is forced empty so both meshes close.
pub fn extract(
    params: &MlpParams,
    ctx: &ViewContext,
    bounds: &Aabb,
    cfg: &ExtractConfig,
) -> Result<(TriMesh, TriMesh), TrainError> {
    if cfg.resolution < 2 {
        return Err(TrainError::Config("extraction resolution must be at least 2".into()));
    }
    let box_ = bounds.padded(cfg.pad);
    let res = [cfg.resolution; 3];
    let pts: Vec<Point3<f64>> = ScalarGrid::points(res, box_);
    let (sh, so) = eval_points(params, ctx, &pts)?;
    let mesh_of = |values: Vec<f64>| {
        let mut g = ScalarGrid::new(res, box_, values);
        g.fill_border(0.0);
        marching_cubes(&g, cfg.iso)
    };
    Ok((mesh_of(sh), mesh_of(so)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{box_mesh, icosphere};
    use nalgebra::Vector3;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-3,
            batch_scenes: 2,
            points_per_scene: 200,
            epochs: 2,
            steps_per_epoch: 3,
            chunk_points: 64,
            network: NetworkConfig { hidden: vec![16, 16], n_freq: 2, pyramid: vec![0, 2] },
            views: ViewConfig { n_views: 3, resolution: 32, ..ViewConfig::default() },
            ..TrainConfig::default()
        }
    }

    fn tiny_scenes(cfg: &TrainConfig) -> Vec<TrainScene> {
        let h = icosphere(0.3, 2);
        let o = box_mesh(Point3::new(0.1, -0.2, -0.2), Point3::new(0.6, 0.2, 0.2), 1);
        let shifted = o.transform(&nalgebra::Matrix3::identity(), &Vector3::new(0.05, 0.0, 0.0), 1.0).unwrap();
        vec![
            TrainScene::synthetic("syn", h.clone(), o, "rigid", &cfg.views, &cfg.network).unwrap(),
            TrainScene::real("real", h, shifted, "soft", &cfg.views, &cfg.network).unwrap(),
        ]
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(sub_seed(&[0, 1]), sub_seed(&[1, 0]));
        assert_eq!(sub_seed(&[3, 4]), sub_seed(&[3, 4]));
    }

    #[test]
    fn deterministic_and_resumable() {
        let cfg = tiny_cfg();
        let scenes = tiny_scenes(&cfg);
        let a = train(&cfg, &scenes, None, None).unwrap();
        let b = train(&cfg, &scenes, None, None).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.log, b.log);

        // Stop after 4 steps, round-trip through disk, finish.
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(cfg.clone(), &scenes, None).unwrap();
        for _ in 0..4 {
            t.step().unwrap();
        }
        t.checkpoint().write(dir.path()).unwrap();
        let resumed = Trainer::resume(Checkpoint::read(dir.path()).unwrap(), &scenes).unwrap();
        let c = run(resumed, None).unwrap();
        assert_eq!(c.checkpoint, a.checkpoint);
        assert_eq!(c.log[..], a.log[4..]);
    }

    #[test]
    fn synthetic_only_mix_has_no_union_loss() {
        let cfg = TrainConfig { mix_ratio: [1.0, 0.0], ..tiny_cfg() };
        let scenes = tiny_scenes(&cfg);
        let out = train(&cfg, &scenes, None, None).unwrap();
        assert!(out.log.iter().all(|r| r.l_u == 0.0 && r.l_in == 0.0));
        let cfg = TrainConfig { mix_ratio: [0.0, 1.0], ..tiny_cfg() };
        let out = train(&cfg, &scenes, None, None).unwrap();
        assert!(out.log.iter().all(|r| r.l_i == 0.0));
        let only_syn = &scenes[..1];
        assert!(matches!(Trainer::new(cfg, only_syn, None), Err(TrainError::MissingGroundTruth(_))));
    }

    #[test]
    fn checkpoints_rotate_and_log_is_written() {
        let cfg = TrainConfig { checkpoint_every: 2, ..tiny_cfg() };
        let scenes = tiny_scenes(&cfg);
        let dir = tempfile::tempdir().unwrap();
        train(&cfg, &scenes, None, Some(dir.path())).unwrap();
        let ckpts = list_checkpoints(dir.path());
        assert_eq!(ckpts.len(), 2);
        assert!(ckpts[1].ends_with("ckpt-00000006"));
        let log = std::fs::read_to_string(dir.path().join("loss_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 6);
        let first: LossRecord = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first.step, 0);
    }

    #[test]
    fn extract_zero_field_is_empty() {
        let cfg = tiny_cfg();
        let scenes = tiny_scenes(&cfg);
        let p = MlpParams::zeros(mlp_config(&cfg, scenes[0].context.view_input_dim()));
        let ex = ExtractConfig { resolution: 8, ..ExtractConfig::default() };
        let (h, o) = extract(&p, &scenes[0].context, &scenes[0].render_mesh.aabb(), &ex).unwrap();
        assert!(h.is_empty() && o.is_empty());
    }
}
