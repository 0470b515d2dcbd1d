//! Linear blend skinning over a kinematic tree.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::ComposeError;
use crate::mesh::TriMesh;
use crate::spatial::PointTree;

/// Smallest blended-transform determinant that [`lbs_inverse`] accepts.
pub const MIN_BLEND_DET: f64 = 1e-9;

/// Which half of the body a joint drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointGroup {
    Upper,
    Lower,
}

/// Per-vertex joint weights, row-major `n_vertices × n_joints`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    n_joints: usize,
    data: Vec<f64>,
}

impl SkinWeights {
    /// Checks that every row is non-negative and sums to 1 within 1e-9.
    pub fn new(n_joints: usize, data: Vec<f64>) -> Result<Self, ComposeError> {
        if n_joints == 0 || !data.len().is_multiple_of(n_joints) {
            return Err(ComposeError::InvalidWeights("row length does not match joint count".into()));
        }
        for (v, row) in data.chunks(n_joints).enumerate() {
            if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(ComposeError::InvalidWeights(format!("vertex {v} has a negative weight")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ComposeError::InvalidWeights(format!("vertex {v} weights sum to {sum}")));
            }
        }
        Ok(Self { n_joints, data })
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn n_vertices(&self) -> usize {
        self.data.len() / self.n_joints
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.n_joints..(v + 1) * self.n_joints]
    }

    /// Rows picked by index, in order.
    pub fn gather(&self, rows: impl IntoIterator<Item = usize>) -> SkinWeights {
        let mut data = Vec::new();
        for r in rows {
            data.extend_from_slice(self.row(r));
        }
        SkinWeights { n_joints: self.n_joints, data }
    }
}

/// A rest-pose mesh rigged to a joint tree.
#[derive(Debug, Clone)]
pub struct SkinnedTemplate {
    rest_mesh: TriMesh,
    joints: Vec<Point3<f64>>,
    parents: Vec<Option<usize>>,
    weights: SkinWeights,
    groups: Vec<JointGroup>,
}

impl SkinnedTemplate {
    /// Joints must be listed parents-first: `parents[j] < j`, with joint 0
    /// the only root.
    pub fn new(
        rest_mesh: TriMesh,
        joints: Vec<Point3<f64>>,
        parents: Vec<Option<usize>>,
        weights: SkinWeights,
        groups: Vec<JointGroup>,
    ) -> Result<Self, ComposeError> {
        let n = joints.len();
        if parents.len() != n || groups.len() != n || weights.n_joints() != n {
            return Err(ComposeError::InvalidSkeleton("joint arrays differ in length".into()));
        }
        if weights.n_vertices() != rest_mesh.vertices().len() {
            return Err(ComposeError::InvalidWeights(format!(
                "{} weight rows for {} vertices",
                weights.n_vertices(),
                rest_mesh.vertices().len()
            )));
        }
        for (j, p) in parents.iter().enumerate() {
            match (j, p) {
                (0, None) => {}
                (0, Some(_)) => return Err(ComposeError::InvalidSkeleton("joint 0 must be the root".into())),
                (_, None) => return Err(ComposeError::InvalidSkeleton(format!("joint {j} is a second root"))),
                (_, Some(p)) if *p >= j => {
                    return Err(ComposeError::InvalidSkeleton(format!("joint {j} listed before its parent {p}")))
                }
                _ => {}
            }
        }
        Ok(Self { rest_mesh, joints, parents, weights, groups })
    }

    pub fn rest_mesh(&self) -> &TriMesh {
        &self.rest_mesh
    }

    pub fn joints(&self) -> &[Point3<f64>] {
        &self.joints
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn weights(&self) -> &SkinWeights {
        &self.weights
    }

    pub fn groups(&self) -> &[JointGroup] {
        &self.groups
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }
}

/// Per-joint axis-angle rotations plus a root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotations: Vec<[f64; 3]>,
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity(n_joints: usize) -> Self {
        Self { rotations: vec![[0.0; 3]; n_joints], translation: [0.0; 3] }
    }

    fn validate(&self, n_joints: usize) -> Result<(), ComposeError> {
        if self.rotations.len() != n_joints {
            return Err(ComposeError::InvalidPose(format!(
                "{} rotations for {n_joints} joints",
                self.rotations.len()
            )));
        }
        for r in &self.rotations {
            let v = Vector3::from(*r);
            if !v.iter().all(|x| x.is_finite()) || v.norm() >= std::f64::consts::TAU {
                return Err(ComposeError::InvalidPose(format!("rotation {r:?} is not a valid axis-angle")));
            }
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err(ComposeError::InvalidPose("translation is not finite".into()));
        }
        Ok(())
    }

    /// Upper-group rotations and root translation from `self`, lower-group
    /// rotations from `lower`.
    pub fn concat(&self, lower: &Pose, groups: &[JointGroup]) -> Pose {
        let rotations = groups
            .iter()
            .enumerate()
            .map(|(j, g)| match g {
                JointGroup::Upper => self.rotations[j],
                JointGroup::Lower => lower.rotations[j],
            })
            .collect();
        Pose { rotations, translation: self.translation }
    }
}

/// Affine map `x ↦ m x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Affine {
    fn zero() -> Self {
        Self { m: Matrix3::zeros(), t: Vector3::zeros() }
    }

    fn compose(&self, inner: &Affine) -> Affine {
        Affine { m: self.m * inner.m, t: self.m * inner.t + self.t }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.m * p.coords + self.t)
    }
}

/// Rest-to-posed transform of every joint.
pub fn joint_transforms(tmpl: &SkinnedTemplate, pose: &Pose) -> Result<Vec<Affine>, ComposeError> {
    pose.validate(tmpl.n_joints())?;
    let mut out: Vec<Affine> = Vec::with_capacity(tmpl.n_joints());
    for j in 0..tmpl.n_joints() {
        let r = Rotation3::new(Vector3::from(pose.rotations[j])).into_inner();
        let c = tmpl.joints[j].coords;
        // Rotation about the joint's rest position.
        let local = Affine { m: r, t: c - r * c };
        let global = match tmpl.parents[j] {
            Some(p) => out[p].compose(&local),
            None => Affine { m: Matrix3::identity(), t: Vector3::from(pose.translation) }.compose(&local),
        };
        out.push(global);
    }
    Ok(out)
}

fn blend(transforms: &[Affine], row: &[f64]) -> Affine {
    let mut a = Affine::zero();
    for (w, t) in row.iter().zip(transforms) {
        if *w != 0.0 {
            a.m += t.m * *w;
            a.t += t.t * *w;
        }
    }
    a
}

/// Skins arbitrary vertices with their own weights.
pub fn skin_forward(
    tmpl: &SkinnedTemplate,
    mesh: &TriMesh,
    weights: &SkinWeights,
    pose: &Pose,
) -> Result<TriMesh, ComposeError> {
    check_rows(mesh, weights, tmpl)?;
    let tr = joint_transforms(tmpl, pose)?;
    let vertices = mesh.vertices().iter().enumerate().map(|(v, p)| blend(&tr, weights.row(v)).apply(p)).collect();
    Ok(mesh.with_vertices(vertices))
}

/// Undoes [`skin_forward`] vertex by vertex.
pub fn skin_inverse(
    tmpl: &SkinnedTemplate,
    posed: &TriMesh,
    weights: &SkinWeights,
    pose: &Pose,
) -> Result<TriMesh, ComposeError> {
    check_rows(posed, weights, tmpl)?;
    let tr = joint_transforms(tmpl, pose)?;
    let mut vertices = Vec::with_capacity(posed.vertices().len());
    for (v, p) in posed.vertices().iter().enumerate() {
        let a = blend(&tr, weights.row(v));
        let det = a.m.determinant();
        if det < MIN_BLEND_DET {
            return Err(ComposeError::SingularBlend { vertex: v, det });
        }
        let inv = a.m.try_inverse().ok_or(ComposeError::SingularBlend { vertex: v, det })?;
        vertices.push(Point3::from(inv * (p.coords - a.t)));
    }
    Ok(posed.with_vertices(vertices))
}

fn check_rows(mesh: &TriMesh, weights: &SkinWeights, tmpl: &SkinnedTemplate) -> Result<(), ComposeError> {
    if weights.n_vertices() != mesh.vertices().len() || weights.n_joints() != tmpl.n_joints() {
        return Err(ComposeError::InvalidWeights(format!(
            "{}×{} weights for {} vertices and {} joints",
            weights.n_vertices(),
            weights.n_joints(),
            mesh.vertices().len(),
            tmpl.n_joints()
        )));
    }
    Ok(())
}

/// The template's rest mesh posed by `pose`.
pub fn lbs_forward(tmpl: &SkinnedTemplate, pose: &Pose) -> Result<TriMesh, ComposeError> {
    skin_forward(tmpl, &tmpl.rest_mesh, &tmpl.weights, pose)
}

/// Rest-pose estimate of a mesh that shares the template's vertices.
pub fn lbs_inverse(tmpl: &SkinnedTemplate, posed: &TriMesh, pose: &Pose) -> Result<TriMesh, ComposeError> {
    skin_inverse(tmpl, posed, &tmpl.weights, pose)
}

/// Copies to every scan vertex the weight row of its nearest template
/// rest-mesh vertex.
pub fn transfer_weights(tmpl: &SkinnedTemplate, scan: &TriMesh) -> SkinWeights {
    transfer_from(tmpl.rest_mesh.vertices(), &tmpl.weights, scan)
}

fn transfer_from(source: &[Point3<f64>], weights: &SkinWeights, scan: &TriMesh) -> SkinWeights {
    let tree = PointTree::new(source);
    weights.gather(scan.vertices().iter().map(|p| tree.nearest(p).expect("template has vertices").0))
}

/// Moves a scan posed by `scan_pose` to the pose that keeps its upper-body
/// joints and takes the lower-body joints from `target_lower`.
///
/// Weights are transferred from the template posed by `scan_pose`, where
/// the scan lives. The result may self-intersect and is not guaranteed to
/// stay watertight.
pub fn repose(
    tmpl: &SkinnedTemplate,
    scan: &TriMesh,
    scan_pose: &Pose,
    target_lower: &Pose,
) -> Result<TriMesh, ComposeError> {
    target_lower.validate(tmpl.n_joints())?;
    let posed_template = lbs_forward(tmpl, scan_pose)?;
    let weights = transfer_from(posed_template.vertices(), &tmpl.weights, scan);
    let rest = skin_inverse(tmpl, scan, &weights, scan_pose)?;
    let target = scan_pose.concat(target_lower, &tmpl.groups);
    skin_forward(tmpl, &rest, &weights, &target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::template::{cylinder_template, tube_body};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn max_err(a: &TriMesh, b: &TriMesh) -> f64 {
        a.vertices().iter().zip(b.vertices()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
    }

    fn bend(n: usize, joint: usize, angle: f64) -> Pose {
        let mut p = Pose::identity(n);
        p.rotations[joint] = [0.0, 0.0, angle];
        p
    }

    #[test]
    fn identity_pose_is_rest() {
        let t = tube_body();
        let m = lbs_forward(&t, &Pose::identity(t.n_joints())).unwrap();
        assert!(max_err(&m, t.rest_mesh()) < 1e-12);
        let back = lbs_inverse(&t, t.rest_mesh(), &Pose::identity(t.n_joints())).unwrap();
        assert!(max_err(&back, t.rest_mesh()) < 1e-12);
    }

    #[test]
    fn single_joint_is_rigid() {
        let t = cylinder_template(1);
        let pose = bend(1, 0, FRAC_PI_2);
        let m = lbs_forward(&t, &pose).unwrap();
        let c = t.joints()[0];
        for (p, q) in t.rest_mesh().vertices().iter().zip(m.vertices()) {
            let d = p - c;
            let expect = c + Vector3::new(-d.y, d.x, d.z);
            assert!((q - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn child_rotation_leaves_parent_vertices() {
        let t = cylinder_template(2);
        let m = lbs_forward(&t, &bend(2, 1, 0.7)).unwrap();
        let mut checked = 0;
        for (v, (p, q)) in t.rest_mesh().vertices().iter().zip(m.vertices()).enumerate() {
            if t.weights().row(v)[0] == 1.0 {
                assert!((p - q).norm() < 1e-15);
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn unbending_matches_analytic_cylinder() {
        let t = cylinder_template(2);
        let pose = bend(2, 1, std::f64::consts::FRAC_PI_4);
        let bent = lbs_forward(&t, &pose).unwrap();
        let unbent = lbs_inverse(&t, &bent, &pose).unwrap();
        assert!(max_err(&unbent, t.rest_mesh()) < 1e-12);
    }

    #[test]
    fn repose_keeps_upper_body() {
        let t = tube_body();
        let n = t.n_joints();
        let mut p = Pose::identity(n);
        p.rotations[1] = [0.1, 0.0, 0.2];
        p.translation = [0.1, 0.0, -0.2];
        let scan = lbs_forward(&t, &p).unwrap();
        let mut q = Pose::identity(n);
        for (j, g) in t.groups().iter().enumerate() {
            if *g == JointGroup::Lower {
                q.rotations[j] = [0.4, -0.2, 0.3];
            }
        }
        let out = repose(&t, &scan, &p, &q).unwrap();
        let same = repose(&t, &scan, &p, &p).unwrap();
        assert!(max_err(&same, &scan) < 1e-9);
        let (mut fixed, mut moved) = (0, 0);
        for v in 0..scan.vertices().len() {
            let lower_mass: f64 = t
                .weights()
                .row(v)
                .iter()
                .zip(t.groups())
                .filter(|(_, g)| **g == JointGroup::Lower)
                .map(|(w, _)| w)
                .sum();
            let d = (out.vertices()[v] - scan.vertices()[v]).norm();
            if lower_mass < 1e-9 {
                assert!(d <= 1e-9, "vertex {v} moved {d}");
                fixed += 1;
            } else if d > 1e-3 {
                moved += 1;
            }
        }
        assert!(fixed > 0 && moved > 0);
        let rest = repose(&t, t.rest_mesh(), &Pose::identity(n), &Pose::identity(n)).unwrap();
        assert!(max_err(&rest, t.rest_mesh()) < 1e-12);
    }

    #[test]
    fn transfer_to_self_is_identity() {
        let t = tube_body();
        assert_eq!(&transfer_weights(&t, t.rest_mesh()), t.weights());
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = cylinder_template(2);
        assert!(matches!(lbs_forward(&t, &Pose::identity(3)), Err(ComposeError::InvalidPose(_))));
        assert!(matches!(SkinWeights::new(2, vec![0.5, 0.6]), Err(ComposeError::InvalidWeights(_))));
        assert!(matches!(SkinWeights::new(2, vec![-0.5, 1.5]), Err(ComposeError::InvalidWeights(_))));
        // Opposite half-turns blended evenly collapse a vertex.
        let w = SkinWeights::new(2, vec![0.5; 2 * t.rest_mesh().vertices().len()]).unwrap();
        let mut p = Pose::identity(2);
        p.rotations[1] = [0.0, 0.0, std::f64::consts::PI];
        let posed = skin_forward(&t, t.rest_mesh(), &w, &p).unwrap();
        assert!(matches!(skin_inverse(&t, &posed, &w, &p), Err(ComposeError::SingularBlend { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let t = tube_body();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pose = Pose::identity(t.n_joints());
            for r in &mut pose.rotations {
                *r = [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)];
            }
            pose.translation = [rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0)];
            let posed = lbs_forward(&t, &pose).unwrap();
            let rest = lbs_inverse(&t, &posed, &pose).unwrap();
            prop_assert!(max_err(&rest, t.rest_mesh()) < 1e-9);
            let again = lbs_forward(&t, &pose).unwrap();
            prop_assert!(max_err(&skin_forward(&t, &rest, t.weights(), &pose).unwrap(), &again) < 1e-9);
        }
    }
}
