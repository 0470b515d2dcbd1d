//! `instfield` command-line front end.
//!
//! Usage errors exit with status 2 (reported by clap); data errors exit with
//! status 1 and a message naming the module that failed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use instfield::compose::{compose_scene, write_scene, ComposeError, PlacementSpec};
use instfield::fusion::{label_mesh, Delta, FusionConfig, FusionError};
use instfield::mesh::{io as meshio, MeshError, LABEL_UNLABELED};
use instfield::metrics::{evaluate, EvalConfig, MetricError};
use instfield::train::{
    extract, latest_checkpoint, load_scenes, run, Checkpoint, ExtractConfig, TrainConfig, TrainError, TrainScene, Trainer,
};

#[derive(Parser, Debug)]
#[command(name = "instfield", version, about = "Instance-level occupancy fields for two interacting shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Place an object next to a human and write a scene manifest with samples.
    Compose {
        #[arg(long)]
        human: PathBuf,
        #[arg(long)]
        object: PathBuf,
        /// Placement spec (TOML); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep only union occupancy, as for a scan.
        #[arg(long)]
        real: bool,
    },
    /// Label mesh vertices by fusing rendered label maps from many views.
    Label {
        /// Mesh whose vertex labels are rendered into the label maps.
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 64)]
        views: usize,
        /// Depth threshold as a fraction of the bounding-box diagonal.
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, default_value_t = 512)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a field from the scenes listed in a config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
        /// Warm-start parameters (checkpoint directory).
        #[arg(long)]
        init_ckpt: Option<PathBuf>,
        /// Continue from the newest checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Extract per-instance meshes from a trained field.
    Extract {
        /// Checkpoint directory (or its `checkpoint.toml`).
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene manifest whose rendered views condition the field.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(long, default_value_t = 0.5)]
        iso: f64,
        #[arg(long)]
        out_human: PathBuf,
        #[arg(long)]
        out_object: PathBuf,
    },
    /// Compare predicted instance meshes with a labeled ground-truth mesh.
    Eval {
        #[arg(long)]
        pred_human: PathBuf,
        #[arg(long)]
        pred_object: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 200_000)]
        overlap_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// A data error tagged with the module it came from.
#[derive(Debug)]
struct CliError {
    module: &'static str,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.module, self.message)
    }
}

macro_rules! from_module {
    ($($ty:ty => $module:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                Self { module: $module, message: e.to_string() }
            }
        })*
    };
}

from_module! {
    MeshError => "mesh-core",
    ComposeError => "composer",
    FusionError => "fusion-label",
    MetricError => "recon-metrics",
    TrainError => "trainer-cli",
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError { module: "trainer-cli", message: format!("{}: {e}", path.display()) }
}

fn compose(human: &Path, object: &Path, spec: Option<&Path>, out: &Path, real: bool) -> Result<(), CliError> {
    let spec: PlacementSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            toml::from_str(&text).map_err(|e| CliError { module: "composer", message: format!("{}: {e}", p.display()) })?
        }
        None => PlacementSpec::default(),
    };
    let (h, o) = (meshio::load_mesh(human)?, meshio::load_mesh(object)?);
    let mut scene = compose_scene(&h, &o, &spec)?;
    if real {
        scene.samples = scene.samples.into_real_union()?;
    }
    let manifest = write_scene(out, &scene, human, object, &spec)?;
    println!("{} ({:?}, {} samples)", out.join("manifest.toml").display(), manifest.source, scene.samples.len());
    Ok(())
}

fn label(mesh: &Path, views: usize, delta: f64, resolution: usize, out: &Path) -> Result<(), CliError> {
    let input = meshio::load_mesh(mesh)?;
    let cfg = FusionConfig { n_views: views, delta: Delta::Relative(delta), resolution, ..FusionConfig::default() };
    let result = label_mesh(&input, &cfg)?;
    let labeled = result.apply(&input);
    meshio::write_ply(out, &labeled, Some(&result.confidence))?;
    let n = result.labels.len();
    let unlabeled = result.labels.iter().filter(|&&l| l == LABEL_UNLABELED).count();
    if let Some(orig) = input.labels() {
        let agree = orig.iter().zip(&result.labels).filter(|(a, b)| a == b).count();
        println!("{n} vertices, {unlabeled} unlabeled, {:.3}% agree with input labels", 100.0 * agree as f64 / n as f64);
    } else {
        println!("{n} vertices, {unlabeled} unlabeled");
    }
    Ok(())
}

fn train(config: &Path, out: &Path, init: Option<&Path>, resume: bool) -> Result<(), CliError> {
    let cfg = TrainConfig::load(config)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let scenes = load_scenes(&cfg, base)?;
    let trainer = match (resume, latest_checkpoint(out)) {
        (true, Some(dir)) => {
            log::info!("resuming from {}", dir.display());
            Trainer::resume(Checkpoint::read(&dir)?, &scenes)?
        }
        _ => {
            let init = init.map(|p| Checkpoint::read(p).map(|c| c.params)).transpose()?;
            Trainer::new(cfg, &scenes, init)?
        }
    };
    let outcome = run(trainer, Some(out))?;
    match outcome.log.last() {
        Some(last) => println!("step {} l_total {:.6}", last.step, last.l_total),
        None => println!("nothing to do: schedule already complete"),
    }
    Ok(())
}

fn extract_cmd(ckpt: &Path, scene: &Path, res: usize, iso: f64, out_h: &Path, out_o: &Path) -> Result<(), CliError> {
    let ckpt = Checkpoint::read(ckpt)?;
    let cfg = &ckpt.config;
    let scene = TrainScene::from_manifest(scene, "rigid", &cfg.views, &cfg.network)?;
    let ex = ExtractConfig { resolution: res, iso, ..ExtractConfig::default() };
    let (h, o) = extract(&ckpt.params, &scene.context, &scene.render_mesh.aabb(), &ex)?;
    meshio::save_mesh(out_h, &h)?;
    meshio::save_mesh(out_o, &o)?;
    println!("human {} faces, object {} faces", h.faces().len(), o.faces().len());
    Ok(())
}

fn eval(ph: &Path, po: &Path, gt: &Path, out: &Path, cfg: EvalConfig) -> Result<(), CliError> {
    let (h, o, g) = (meshio::load_mesh(ph)?, meshio::load_mesh(po)?, meshio::load_mesh(gt)?);
    let report = evaluate(&h, &o, &g, &cfg)?;
    std::fs::write(out, report.to_json() + "\n").map_err(|e| io_error(out, e))?;
    println!("{}", instfield::metrics::MetricReport::table(&[("pred", &report)]));
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Compose { human, object, spec, out, real } => compose(&human, &object, spec.as_deref(), &out, real),
        Command::Label { mesh, views, delta, resolution, out } => label(&mesh, views, delta, resolution, &out),
        Command::Train { config, out, init_ckpt, resume } => train(&config, &out, init_ckpt.as_deref(), resume),
        Command::Extract { ckpt, scene, res, iso, out_human, out_object } => {
            extract_cmd(&ckpt, &scene, res, iso, &out_human, &out_object)
        }
        Command::Eval { pred_human, pred_object, gt, out, samples, overlap_samples, seed } => {
            eval(&pred_human, &pred_object, &gt, &out, EvalConfig { surface_samples: samples, overlap_samples, seed })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
