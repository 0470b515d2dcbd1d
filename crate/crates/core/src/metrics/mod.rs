//! Iso-surface extraction and reconstruction metrics.
//!
//! Distances are computed in meters; [`MetricReport`] reports them in
//! centimeters.
//!
//! ```
//! use instfield::metrics::{cd_one_directional, chamfer};
//! use nalgebra::Point3;
//!
//! let a = [Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
//! let b = [Point3::new(1.0, 0.0, 0.0)];
//! assert_eq!(cd_one_directional(&a, &b).unwrap(), 1.0);
//! assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
//! ```

mod mcubes;

use std::fmt::Write as _;

use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mcubes::{case_table, marching_cubes, Loop, ScalarGrid, LOOP_CENTER};

use crate::mesh::{MeshError, SurfaceSampler, TriMesh, LABEL_HUMAN, LABEL_OBJECT};
use crate::spatial::PointTree;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("point set is empty")]
    EmptySet,
    #[error("{0} has no labeled {1} part")]
    MissingPart(&'static str, &'static str),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Mean distance from each point of `a` to its nearest point in `b`.
fn directed_mean(a: &[Point3<f64>], tree: &PointTree) -> f64 {
    let d: Vec<f64> = a.par_iter().map(|p| tree.nearest(p).expect("tree is non-empty").1.sqrt()).collect();
    d.iter().sum::<f64>() / a.len() as f64
}

/// `½ [mean_a min_b ‖a − b‖ + mean_b min_a ‖a − b‖]`.
pub fn chamfer(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let (ta, tb) = (PointTree::new(a), PointTree::new(b));
    Ok(0.5 * (directed_mean(a, &tb) + directed_mean(b, &ta)))
}

/// `(1/|A|) Σ_{a∈A} min_{b∈B} ‖a − b‖`.
pub fn cd_one_directional(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySet);
    }
    Ok(directed_mean(a, &PointTree::new(b)))
}

/// One-directional distance from points to the surface of `b`.
pub fn cd_one_directional_mesh(a: &[Point3<f64>], b: &TriMesh) -> Result<f64, MetricError> {
    if a.is_empty() {
        return Err(MetricError::EmptySet);
    }
    if b.faces().is_empty() {
        return Err(MeshError::EmptyMesh.into());
    }
    let d: Vec<f64> = a.par_iter().map(|p| b.nearest_surface_distance(p).expect("mesh is non-empty")).collect();
    Ok(d.iter().sum::<f64>() / a.len() as f64)
}

/// `n` area-weighted surface samples.
pub fn surface_samples(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Point3<f64>>, MetricError> {
    let sampler = SurfaceSampler::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sampler.sample(&mut rng).0).collect())
}

/// Mean distance from `n` surface samples of `pred` to the surface of `gt`.
pub fn p2s(pred: &TriMesh, gt: &TriMesh, n_samples: usize, seed: u64) -> Result<f64, MetricError> {
    cd_one_directional_mesh(&surface_samples(pred, n_samples, seed)?, gt)
}

/// Monte-Carlo overlap of two solids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapEstimate {
    pub iou_percent: f64,
    pub iou_std_err: f64,
    pub intersection_volume: f64,
    pub volume_std_err: f64,
    pub n_samples: usize,
}

/// Uniform samples over the union bounding box, classified by `inside()`.
pub fn mesh_iou_and_volume(a: &TriMesh, b: &TriMesh, n_samples: usize, seed: u64) -> Result<OverlapEstimate, MetricError> {
    if !a.is_watertight() || !b.is_watertight() {
        return Err(MeshError::NonWatertight.into());
    }
    if n_samples == 0 {
        return Err(MetricError::EmptySet);
    }
    let bounds = a.aabb().union(&b.aabb());
    const CHUNK: usize = 16_384;
    let n_chunks = n_samples.div_ceil(CHUNK);
    let counts: Vec<(usize, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(n_samples - c * CHUNK);
            let (mut both, mut any) = (0, 0);
            for _ in 0..n {
                let p = bounds.sample(&mut rng);
                let (ia, ib) = (a.inside_unchecked(&p), b.inside_unchecked(&p));
                both += usize::from(ia && ib);
                any += usize::from(ia || ib);
            }
            (both, any)
        })
        .collect();
    let (both, any) = counts.iter().fold((0, 0), |s, c| (s.0 + c.0, s.1 + c.1));
    let iou = if any == 0 { 0.0 } else { both as f64 / any as f64 };
    let iou_se = if any == 0 { 0.0 } else { (iou * (1.0 - iou) / any as f64).sqrt() };
    let q = both as f64 / n_samples as f64;
    let vol = bounds.volume();
    Ok(OverlapEstimate {
        iou_percent: 100.0 * iou,
        iou_std_err: 100.0 * iou_se,
        intersection_volume: q * vol,
        volume_std_err: vol * (q * (1.0 - q) / n_samples as f64).sqrt(),
        n_samples,
    })
}

/// Sample counts and seed for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub surface_samples: usize,
    pub overlap_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { surface_samples: 10_000, overlap_samples: 200_000, seed: 0 }
    }
}

/// Scores of one reconstructed scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer_cm: f64,
    pub p2s_cm: f64,
    pub cd1_human_cm: f64,
    pub cd1_object_cm: f64,
    /// Absent when either predicted instance is not a closed surface.
    pub iou_percent: Option<f64>,
    pub intersection_volume_m3: Option<f64>,
}

/// Scores predicted instance meshes against a ground-truth scene whose
/// vertices carry human/object labels.
///
/// Chamfer and P2S compare the merged prediction with the whole scene;
/// the one-directional distances go from each labeled part to the matching
/// predicted instance.
pub fn evaluate(
    pred_human: &TriMesh,
    pred_object: &TriMesh,
    gt: &TriMesh,
    cfg: &EvalConfig,
) -> Result<MetricReport, MetricError> {
    let n = cfg.surface_samples;
    let pred = pred_human.merge(pred_object);
    let pred_pts = surface_samples(&pred, n, cfg.seed)?;
    let gt_pts = surface_samples(gt, n, cfg.seed.wrapping_add(1))?;
    let chamfer_m = chamfer(&pred_pts, &gt_pts)?;
    let p2s_m = cd_one_directional_mesh(&pred_pts, gt)?;
    let part = |label, name| -> Result<Vec<Point3<f64>>, MetricError> {
        let m = gt.extract_label(label).ok_or(MetricError::MissingPart("ground truth", name))?;
        surface_samples(&m, n, cfg.seed.wrapping_add(2 + u64::from(label)))
    };
    let cd1_h = cd_one_directional_mesh(&part(LABEL_HUMAN, "human")?, pred_human)?;
    let cd1_o = cd_one_directional_mesh(&part(LABEL_OBJECT, "object")?, pred_object)?;
    let overlap = if pred_human.is_watertight() && pred_object.is_watertight() {
        Some(mesh_iou_and_volume(pred_human, pred_object, cfg.overlap_samples, cfg.seed.wrapping_add(4))?)
    } else {
        log::warn!("predicted instances are not closed; skipping IoU");
        None
    };
    Ok(MetricReport {
        chamfer_cm: 100.0 * chamfer_m,
        p2s_cm: 100.0 * p2s_m,
        cd1_human_cm: 100.0 * cd1_h,
        cd1_object_cm: 100.0 * cd1_o,
        iou_percent: overlap.map(|o| o.iou_percent),
        intersection_volume_m3: overlap.map(|o| o.intersection_volume),
    })
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table, one row per named report.
    pub fn table(rows: &[(&str, &MetricReport)]) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        writeln!(
            out,
            "{:<name_w$}  {:>10}  {:>10}  {:>10}  {:>10}  {:>8}  {:>12}",
            "scene", "Chamfer", "P2S", "CD1 human", "CD1 obj", "IoU(%)", "Volume(m³)"
        )
        .unwrap();
        for (name, r) in rows {
            writeln!(
                out,
                "{:<name_w$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>8}  {:>12}",
                name,
                r.chamfer_cm,
                r.p2s_cm,
                r.cd1_human_cm,
                r.cd1_object_cm,
                opt(r.iou_percent, 3),
                opt(r.intersection_volume_m3, 6)
            )
            .unwrap();
        }
        out
    }
}
