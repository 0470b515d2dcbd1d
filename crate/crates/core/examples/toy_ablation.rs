//! Trains the toy pair once and reports how the two extracted instances
//! overlap and how far each strays from its hidden ground truth.
//!
//! Arguments are `key=value` pairs: `steps`, `w_in`, `material`, `seed`,
//! `points`, `lr`, `res`, `hidden` (comma separated), `views`, `img`, `shift`, `batch`,
//! `mix_syn`, `mix_real`, `n_syn`.

use std::collections::HashMap;
use std::time::Instant;

use instfield::metrics::{mesh_iou_and_volume, p2s};
use instfield::train::{extract, toy_scenes, ExtractConfig, NetworkConfig, ToyConfig, TrainConfig, Trainer, ViewConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: HashMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str, d: &str| args.get(k).cloned().unwrap_or_else(|| d.to_string());
    let steps: usize = get("steps", "2000").parse()?;
    let hidden: Vec<usize> = get("hidden", "64,64,64").split(',').map(|s| s.parse()).collect::<Result<_, _>>()?;
    let mut cfg = TrainConfig {
        seed: get("seed", "0").parse()?,
        learning_rate: get("lr", "1e-3").parse()?,
        batch_scenes: get("batch", "2").parse()?,
        mix_ratio: [get("mix_syn", "1").parse()?, get("mix_real", "1").parse()?],
        points_per_scene: get("points", "1500").parse()?,
        epochs: 1,
        steps_per_epoch: steps,
        chunk_points: 256,
        network: NetworkConfig { hidden, n_freq: 4, ..NetworkConfig::default() },
        views: ViewConfig { n_views: get("views", "6").parse()?, resolution: get("img", "128").parse()?, ..ViewConfig::default() },
        ..TrainConfig::default()
    };
    cfg.loss.w_in = get("w_in", "1").parse()?;
    let toy = ToyConfig { seed: cfg.seed, synthetic_shift: get("shift", "0.15").parse()?, n_synthetic: get("n_syn", "8").parse()?, ..ToyConfig::default() };
    let set = toy_scenes(&cfg, &toy, &get("material", "rigid"))?;
    let t0 = Instant::now();
    let mut trainer = Trainer::new(cfg.clone(), &set.scenes, None)?;
    while !trainer.is_done() {
        let r = trainer.step()?;
        if r.step % 250 == 0 || trainer.is_done() {
            println!("step {:5} l_i {:.4} l_u {:.4} l_in {:.5} total {:.4} ({:.0}s)", r.step, r.l_i, r.l_u, r.l_in, r.l_total, t0.elapsed().as_secs_f64());
        }
    }
    let real = &set.scenes[set.real];
    let ex = ExtractConfig { resolution: get("res", "96").parse()?, ..ExtractConfig::default() };
    let (h, o) = extract(trainer.params(), &real.context, &real.render_mesh.aabb(), &ex)?;
    println!("extracted {} / {} faces ({:.0}s)", h.faces().len(), o.faces().len(), t0.elapsed().as_secs_f64());
    if h.is_empty() || o.is_empty() {
        println!("empty instance");
        return Ok(());
    }
    let ov = mesh_iou_and_volume(&h, &o, 200_000, 7)?;
    let p2s_o = p2s(&o, &set.object, 10_000, 7)?;
    let p2s_h = p2s(&h, &set.human, 10_000, 7)?;
    println!(
        "iou {:.4}% ± {:.4}  vol {:.6}  p2s_object {:.5}  p2s_human {:.5}  ({:.0}s)",
        ov.iou_percent, ov.iou_std_err, ov.intersection_volume, p2s_o, p2s_h, t0.elapsed().as_secs_f64()
    );
    for (name, pred, gt) in [("human", &h, &set.human), ("object", &o, &set.object)] {
        let far: Vec<_> = pred.vertices().iter().filter(|v| gt.nearest(v).map_or(0.0, |n| n.distance) > 0.03).collect();
        if far.is_empty() {
            continue;
        }
        let c = far.iter().fold(nalgebra::Vector3::zeros(), |a, v| a + v.coords) / far.len() as f64;
        let inside_other = far.iter().filter(|v| if name == "human" { set.object.inside_unchecked(v) } else { set.human.inside_unchecked(v) }).count();
        println!("{name}: {} of {} vertices farther than 0.03, centroid {:.2?}, {} inside the other part", far.len(), pred.vertices().len(), c.as_slice(), inside_other);
    }
    Ok(())
}
