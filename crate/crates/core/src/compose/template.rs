//! Procedural skinned templates: tubes swept along a joint chain.

use nalgebra::Point3;

use super::lbs::{JointGroup, SkinWeights, SkinnedTemplate};
use crate::mesh::primitives::tube;

/// Index of the hip joint in [`tube_body`].
pub const BODY_HIP_JOINT: usize = 3;

/// Tube along `path` with one joint at each path point except the last.
///
/// A vertex at fractional joint coordinate `s` (joint `j` sits at `s = j`)
/// belongs fully to the bone it lies on, blending linearly into the next
/// bone within `blend` of each interior joint.
pub fn chain_template(
    path: &[Point3<f64>],
    radius: f64,
    blend: f64,
    groups: Vec<JointGroup>,
) -> SkinnedTemplate {
    let n_joints = path.len() - 1;
    assert_eq!(groups.len(), n_joints);
    assert!(blend > 0.0 && blend <= 0.5);
    let (mesh, arcs) = tube(path, radius, 16, 8);
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let mut data = vec![0.0; arcs.len() * n_joints];
    for (v, &a) in arcs.iter().enumerate() {
        let seg = (0..n_joints).rev().find(|&k| a >= cum[k]).unwrap_or(0);
        let s = seg as f64 + (a - cum[seg]) / (cum[seg + 1] - cum[seg]);
        let row = &mut data[v * n_joints..(v + 1) * n_joints];
        // Nearest interior joint and signed offset from it.
        let j = s.round().clamp(1.0, (n_joints.max(2) - 1) as f64) as usize;
        let d = s - j as f64;
        if n_joints == 1 {
            row[0] = 1.0;
        } else if d.abs() < blend {
            let t = 0.5 + 0.5 * d / blend;
            row[j - 1] = 1.0 - t;
            row[j] = t;
        } else {
            row[(s.floor() as usize).min(n_joints - 1)] = 1.0;
        }
    }
    let weights = SkinWeights::new(n_joints, data).expect("chain weights are a partition of unity");
    let parents = (0..n_joints).map(|j| j.checked_sub(1)).collect();
    SkinnedTemplate::new(mesh, path[..n_joints].to_vec(), parents, weights, groups).expect("chain template is valid")
}

/// Straight tube along +x with `bones` bones of length 0.5. Joint 0 is the
/// upper group, the rest are lower.
pub fn cylinder_template(bones: usize) -> SkinnedTemplate {
    let path: Vec<_> = (0..=bones).map(|i| Point3::new(0.5 * i as f64, 0.0, 0.0)).collect();
    let groups = (0..bones).map(|j| if j == 0 { JointGroup::Upper } else { JointGroup::Lower }).collect();
    chain_template(&path, 0.1, 0.25, groups)
}

/// Standing capsule-limb body: head, neck and chest joints form the upper
/// group; hip, knee and ankle the lower group.
pub fn tube_body() -> SkinnedTemplate {
    let path = [
        Point3::new(0.0, 1.7, 0.0),
        Point3::new(0.0, 1.5, 0.0),
        Point3::new(0.0, 1.25, 0.0),
        Point3::new(0.0, 0.95, 0.0),
        Point3::new(0.0, 0.5, 0.05),
        Point3::new(0.0, 0.08, 0.0),
        Point3::new(0.0, 0.02, 0.15),
    ];
    use JointGroup::*;
    chain_template(&path, 0.12, 0.25, vec![Upper, Upper, Upper, Lower, Lower, Lower])
}

/// Rest-mesh vertex closest to a joint.
pub fn nearest_vertex(tmpl: &SkinnedTemplate, joint: usize) -> usize {
    let j = tmpl.joints()[joint];
    let mut best = (0, f64::INFINITY);
    for (i, v) in tmpl.rest_mesh().vertices().iter().enumerate() {
        let d = (v - j).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_are_closed_with_unit_rows() {
        for t in [cylinder_template(1), cylinder_template(2), tube_body()] {
            assert!(t.rest_mesh().is_watertight());
            for v in 0..t.rest_mesh().vertices().len() {
                let s: f64 = t.weights().row(v).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ends_are_rigid() {
        let t = cylinder_template(2);
        let first = t.rest_mesh().vertices().iter().position(|p| p.x < 0.2).unwrap();
        assert_eq!(t.weights().row(first), &[1.0, 0.0]);
        let last = t.rest_mesh().vertices().iter().position(|p| p.x > 0.8).unwrap();
        assert_eq!(t.weights().row(last), &[0.0, 1.0]);
    }
}
