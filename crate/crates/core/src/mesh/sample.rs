//! Labeled point samples and the near-surface / uniform sampler.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{geom, Aabb, MeshError, TriMesh};
use crate::rawio::{self, DType, RawHeader};

/// Where a sample's ground truth comes from, which decides the losses it feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleSource {
    /// Composed scene with both instance channels.
    SyntheticInstance,
    /// Composed scene whose human part is not closed; object channel only.
    SyntheticObjectOnly,
    /// Scan-like scene: union occupancy only.
    RealUnion,
}

impl std::fmt::Display for SampleSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for SampleSource {
    type Err = MeshError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SyntheticInstance" => Ok(Self::SyntheticInstance),
            "SyntheticObjectOnly" => Ok(Self::SyntheticObjectOnly),
            "RealUnion" => Ok(Self::RealUnion),
            _ => Err(MeshError::Format(format!("unknown sample source {s:?}"))),
        }
    }
}

/// Points with per-instance ground-truth occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<Point3<f64>>,
    occ_human: Option<Vec<u8>>,
    occ_object: Option<Vec<u8>>,
    occ_union: Option<Vec<u8>>,
    source: SampleSource,
}

impl SampleSet {
    /// Both instance channels; the union is derived.
    pub fn synthetic(points: Vec<Point3<f64>>, human: Vec<u8>, object: Vec<u8>) -> Self {
        assert_eq!(points.len(), human.len());
        assert_eq!(points.len(), object.len());
        let union = human.iter().zip(&object).map(|(&h, &o)| h.max(o)).collect();
        Self {
            points,
            occ_human: Some(human),
            occ_object: Some(object),
            occ_union: Some(union),
            source: SampleSource::SyntheticInstance,
        }
    }

    pub fn object_only(points: Vec<Point3<f64>>, object: Vec<u8>) -> Self {
        assert_eq!(points.len(), object.len());
        Self { points, occ_human: None, occ_object: Some(object), occ_union: None, source: SampleSource::SyntheticObjectOnly }
    }

    pub fn real_union(points: Vec<Point3<f64>>, union: Vec<u8>) -> Self {
        assert_eq!(points.len(), union.len());
        Self { points, occ_human: None, occ_object: None, occ_union: Some(union), source: SampleSource::RealUnion }
    }

    /// Drops the instance channels, keeping the union: what a scan provides.
    pub fn into_real_union(self) -> Result<Self, MeshError> {
        let union = self.occ_union.ok_or(MeshError::Format("no union channel".into()))?;
        Ok(Self::real_union(self.points, union))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn occ_human(&self) -> Option<&[u8]> {
        self.occ_human.as_deref()
    }

    pub fn occ_object(&self) -> Option<&[u8]> {
        self.occ_object.as_deref()
    }

    pub fn occ_union(&self) -> Option<&[u8]> {
        self.occ_union.as_deref()
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    /// Writes `points.bin` and one `occ_*.bin` per present channel into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), rawio::RawError> {
        let flat: Vec<f64> = self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        rawio::write_f64(
            &dir.join("points.bin"),
            RawHeader::new(DType::F64, vec![self.len(), 3]).with_meta("source", self.source),
            &flat,
        )?;
        for (name, chan) in [("occ_human", &self.occ_human), ("occ_object", &self.occ_object), ("occ_union", &self.occ_union)] {
            if let Some(c) = chan {
                rawio::write_u8(&dir.join(format!("{name}.bin")), RawHeader::new(DType::U8, vec![c.len()]), c)?;
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, MeshError> {
        let fmt = |e: rawio::RawError| MeshError::Format(e.to_string());
        let (header, flat) = rawio::read_f64(&dir.join("points.bin")).map_err(fmt)?;
        if header.shape.len() != 2 || header.shape[1] != 3 {
            return Err(MeshError::Format(format!("points shape {:?}", header.shape)));
        }
        let source: SampleSource = header
            .meta
            .get("source")
            .ok_or_else(|| MeshError::Format("points header lacks source".into()))?
            .parse()?;
        let points: Vec<Point3<f64>> = flat.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let n_points = points.len();
        let chan = |name: &str| -> Result<Option<Vec<u8>>, MeshError> {
            let p = dir.join(format!("{name}.bin"));
            if !p.exists() {
                return Ok(None);
            }
            let (_, v) = rawio::read_u8(&p).map_err(fmt)?;
            if v.len() != n_points {
                return Err(MeshError::Format(format!("{name} has {} entries for {n_points} points", v.len())));
            }
            Ok(Some(v))
        };
        let missing = |name: &str| MeshError::Format(format!("{source} samples need {name}"));
        Ok(match source {
            SampleSource::SyntheticInstance => Self::synthetic(
                points,
                chan("occ_human")?.ok_or_else(|| missing("occ_human"))?,
                chan("occ_object")?.ok_or_else(|| missing("occ_object"))?,
            ),
            SampleSource::SyntheticObjectOnly => {
                Self::object_only(points, chan("occ_object")?.ok_or_else(|| missing("occ_object"))?)
            }
            SampleSource::RealUnion => Self::real_union(points, chan("occ_union")?.ok_or_else(|| missing("occ_union"))?),
        })
    }
}

/// Mixture parameters for [`sample_points`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Standard deviation of the Gaussian offset applied to surface samples.
    pub sigma: f64,
    /// Padding of the uniform-sampling box, as a fraction of the mesh extent.
    pub bbox_pad: f64,
    /// Fraction of samples drawn near the surface; the rest are uniform.
    pub surface_fraction: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { sigma: 0.05, bbox_pad: 0.1, surface_fraction: 0.5 }
    }
}

/// Area-weighted uniform sampling of a mesh surface.
#[derive(Debug, Clone)]
pub struct SurfaceSampler<'a> {
    mesh: &'a TriMesh,
    cumulative: Vec<f64>,
}

impl<'a> SurfaceSampler<'a> {
    pub fn new(mesh: &'a TriMesh) -> Result<Self, MeshError> {
        let mut total = 0.0;
        let cumulative: Vec<f64> = (0..mesh.faces().len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                total += geom::double_area(&a, &b, &c);
                total
            })
            .collect();
        if cumulative.is_empty() || total <= 0.0 {
            return Err(MeshError::EmptyMesh);
        }
        Ok(Self { mesh, cumulative })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Point3<f64>, usize) {
        let total = *self.cumulative.last().unwrap();
        let x = rng.random::<f64>() * total;
        let face = self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1);
        let [a, b, c] = self.mesh.triangle(face);
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let p = a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2);
        (Point3::from(p), face)
    }
}

/// Draws `n` points: `surface_fraction` of them on the surface with a
/// Gaussian offset of scale `sigma`, the rest uniform in the padded AABB.
/// Every point lies inside the padded box (offset samples are clamped).
pub fn sample_points(
    mesh: &TriMesh,
    n: usize,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Vec<Point3<f64>>, MeshError> {
    sample_points_in(mesh, &mesh.aabb().padded(cfg.bbox_pad), n, cfg, seed)
}

/// [`sample_points`] with an explicit uniform-sampling box.
pub fn sample_points_in(
    mesh: &TriMesh,
    bounds: &Aabb,
    n: usize,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Vec<Point3<f64>>, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidSampling("n must be positive"));
    }
    if !(cfg.sigma > 0.0) {
        return Err(MeshError::InvalidSampling("sigma must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.surface_fraction) {
        return Err(MeshError::InvalidSampling("surface fraction must lie in [0, 1]"));
    }
    let sampler = SurfaceSampler::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, cfg.sigma).expect("sigma is positive");
    let n_surface = (n as f64 * cfg.surface_fraction).round() as usize;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n_surface {
        let (p, _) = sampler.sample(&mut rng);
        let offset = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        points.push(bounds.clamp(&(p + offset)));
    }
    for _ in n_surface..n {
        points.push(bounds.sample(&mut rng));
    }
    Ok(points)
}
