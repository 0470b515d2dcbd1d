//! Training objectives on `(s_H, s_O)` predictions.
//!
//! Every loss returns its value together with the gradient with respect to
//! each prediction. Which loss a point feeds is decided by the
//! [`SampleSource`] of its sample set:
//!
//! | source                | `L_i`         | `L_u` | `L_in` |
//! |-----------------------|---------------|-------|--------|
//! | `SyntheticInstance`   | both channels | no    | no     |
//! | `SyntheticObjectOnly` | object only   | no    | no     |
//! | `RealUnion`           | no            | yes   | yes    |
//!
//! ```
//! use instfield::losses::{loss_intersection, LossConfig};
//!
//! let cfg = LossConfig { gamma_rig: 1.0, ..LossConfig::default() };
//! let t = loss_intersection(&[0.7], &[0.8], &cfg).unwrap();
//! assert!((t.value - 0.2).abs() < 1e-12);
//! assert_eq!(t.d_object[0], 0.0);
//! assert!((t.d_human[0] - 1.0).abs() < 1e-12);
//! ```

use serde::{Deserialize, Serialize};

use crate::mesh::{SampleSet, SampleSource};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("sample set from {0} has no instance ground truth")]
    MissingInstanceGroundTruth(SampleSource),
    #[error("sample set from {0} has no union ground truth")]
    MissingUnionGroundTruth(SampleSource),
    #[error("expected {expected} predictions, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("gamma_rig {0} outside [0, 1]")]
    InvalidGamma(f64),
    #[error("loss weight {0} is negative or not finite")]
    InvalidWeight(f64),
}

/// Rigidity coefficient and loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub gamma_rig: f64,
    pub w_i: f64,
    pub w_u: f64,
    pub w_in: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma_rig: 1.0, w_i: 1.0, w_u: 1.0, w_in: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.gamma_rig) {
            return Err(LossError::InvalidGamma(self.gamma_rig));
        }
        for w in [self.w_i, self.w_u, self.w_in] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(LossError::InvalidWeight(w));
            }
        }
        Ok(())
    }
}

/// One loss: its value and per-point gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub d_human: Vec<f64>,
    pub d_object: Vec<f64>,
}

impl LossTerm {
    fn zeros(n: usize) -> Self {
        Self { value: 0.0, d_human: vec![0.0; n], d_object: vec![0.0; n] }
    }
}

fn check_len(s_h: &[f64], s_o: &[f64], n: usize) -> Result<(), LossError> {
    for got in [s_h.len(), s_o.len()] {
        if got != n {
            return Err(LossError::ShapeMismatch { expected: n, got });
        }
    }
    Ok(())
}

fn target(b: u8) -> f64 {
    f64::from(b)
}

/// `L_i = (1/n) Σ (|s_H − f*_H|² + |s_O − f*_O|²)`.
///
/// Object-only sets contribute the object channel alone.
pub fn loss_instance(s_h: &[f64], s_o: &[f64], gt: &SampleSet) -> Result<LossTerm, LossError> {
    let n = gt.len();
    check_len(s_h, s_o, n)?;
    let mut t = LossTerm::zeros(n);
    let (human, object) = match gt.source() {
        SampleSource::SyntheticInstance => (gt.occ_human(), gt.occ_object()),
        SampleSource::SyntheticObjectOnly => (None, gt.occ_object()),
        SampleSource::RealUnion => return Err(LossError::MissingInstanceGroundTruth(gt.source())),
    };
    let object = object.ok_or(LossError::MissingInstanceGroundTruth(gt.source()))?;
    if n == 0 {
        return Ok(t);
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let eo = s_o[i] - target(object[i]);
        sum += eo * eo;
        t.d_object[i] = 2.0 * eo * inv;
        if let Some(h) = human {
            let eh = s_h[i] - target(h[i]);
            sum += eh * eh;
            t.d_human[i] = 2.0 * eh * inv;
        }
    }
    t.value = sum * inv;
    Ok(t)
}

/// `L_u = (1/n) Σ |max(s_H, s_O) − f*_U|²`, with the subgradient sent to the
/// larger channel and split equally on ties.
pub fn loss_union(s_h: &[f64], s_o: &[f64], gt: &SampleSet) -> Result<LossTerm, LossError> {
    let n = gt.len();
    check_len(s_h, s_o, n)?;
    let union = gt.occ_union().ok_or(LossError::MissingUnionGroundTruth(gt.source()))?;
    let mut t = LossTerm::zeros(n);
    if n == 0 {
        return Ok(t);
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let e = s_h[i].max(s_o[i]) - target(union[i]);
        sum += e * e;
        let g = 2.0 * e * inv;
        if s_h[i] > s_o[i] {
            t.d_human[i] = g;
        } else if s_o[i] > s_h[i] {
            t.d_object[i] = g;
        } else {
            t.d_human[i] = 0.5 * g;
            t.d_object[i] = 0.5 * g;
        }
    }
    t.value = sum * inv;
    Ok(t)
}

/// Value and gradient `(d/ds_H, d/ds_O)` of one intersection term
/// `max(0, s_O − ½)^(1−γ) · max(0, s_H − ½)^γ`.
///
/// The term is zero whenever either base is zero, whatever the exponent.
/// At `γ = 1` the object derivative is exactly zero and at `γ = 0` the
/// human derivative is exactly zero.
pub fn intersection_term(s_h: f64, s_o: f64, gamma: f64) -> (f64, f64, f64) {
    let a = s_o - 0.5;
    let b = s_h - 0.5;
    if !(a > 0.0 && b > 0.0) {
        return (0.0, 0.0, 0.0);
    }
    if gamma == 1.0 {
        return (b, 1.0, 0.0);
    }
    if gamma == 0.0 {
        return (a, 0.0, 1.0);
    }
    let pa = a.powf(1.0 - gamma);
    let pb = b.powf(gamma);
    let value = pa * pb;
    (value, gamma * value / b, (1.0 - gamma) * value / a)
}

/// `L_in = (1/n) Σ max(0, s_O − ½)^(1−γ) · max(0, s_H − ½)^γ`.
pub fn loss_intersection(s_h: &[f64], s_o: &[f64], cfg: &LossConfig) -> Result<LossTerm, LossError> {
    let n = s_h.len();
    check_len(s_h, s_o, n)?;
    if !(0.0..=1.0).contains(&cfg.gamma_rig) {
        return Err(LossError::InvalidGamma(cfg.gamma_rig));
    }
    let mut t = LossTerm::zeros(n);
    if n == 0 {
        return Ok(t);
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let (v, dh, d_o) = intersection_term(s_h[i], s_o[i], cfg.gamma_rig);
        sum += v;
        t.d_human[i] = dh * inv;
        t.d_object[i] = d_o * inv;
    }
    t.value = sum * inv;
    Ok(t)
}

/// Predictions for one sample set.
#[derive(Debug, Clone, Copy)]
pub struct BatchPart<'a> {
    pub s_human: &'a [f64],
    pub s_object: &'a [f64],
    pub gt: &'a SampleSet,
    /// Rigidity for this part's `L_in`, overriding the config value.
    pub gamma_rig: Option<f64>,
}

/// Combined objective with per-point gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_i: f64,
    pub l_u: f64,
    pub l_in: f64,
    pub l_total: f64,
    /// Points that fed `L_i`.
    pub n_instance: usize,
    /// Points that fed `L_u` and `L_in`.
    pub n_union: usize,
    /// Gradient of `l_total` per point, parts concatenated in order.
    pub d_human: Vec<f64>,
    pub d_object: Vec<f64>,
}

/// [`loss_batch`] on a single sample set.
pub fn loss_total(s_h: &[f64], s_o: &[f64], gt: &SampleSet, cfg: &LossConfig) -> Result<LossReport, LossError> {
    loss_batch(&[BatchPart { s_human: s_h, s_object: s_o, gt, gamma_rig: None }], cfg)
}

/// Routes every part to its losses and takes each loss as a mean over the
/// points routed to it, across all parts.
pub fn loss_batch(parts: &[BatchPart<'_>], cfg: &LossConfig) -> Result<LossReport, LossError> {
    cfg.validate()?;
    let n_instance: usize = parts.iter().filter(|p| p.gt.source() != SampleSource::RealUnion).map(|p| p.gt.len()).sum();
    let n_union: usize = parts.iter().filter(|p| p.gt.source() == SampleSource::RealUnion).map(|p| p.gt.len()).sum();
    let total: usize = parts.iter().map(|p| p.gt.len()).sum();
    let mut report = LossReport {
        l_i: 0.0,
        l_u: 0.0,
        l_in: 0.0,
        l_total: 0.0,
        n_instance,
        n_union,
        d_human: Vec::with_capacity(total),
        d_object: Vec::with_capacity(total),
    };
    for part in parts {
        let n = part.gt.len();
        let mut dh = vec![0.0; n];
        let mut d_o = vec![0.0; n];
        // Each term is a mean over its own part; rescaling by n / n_routed
        // turns it into a share of the mean over all routed points.
        if n == 0 {
            check_len(part.s_human, part.s_object, 0)?;
        } else if part.gt.source() == SampleSource::RealUnion {
            debug_assert!(part.gt.occ_human().is_none() && part.gt.occ_object().is_none());
            let share = n as f64 / n_union as f64;
            let u = loss_union(part.s_human, part.s_object, part.gt)?;
            let part_cfg = LossConfig { gamma_rig: part.gamma_rig.unwrap_or(cfg.gamma_rig), ..*cfg };
            let x = loss_intersection(part.s_human, part.s_object, &part_cfg)?;
            report.l_u += share * u.value;
            report.l_in += share * x.value;
            for i in 0..n {
                dh[i] = share * (cfg.w_u * u.d_human[i] + cfg.w_in * x.d_human[i]);
                d_o[i] = share * (cfg.w_u * u.d_object[i] + cfg.w_in * x.d_object[i]);
            }
        } else {
            let share = n as f64 / n_instance as f64;
            let t = loss_instance(part.s_human, part.s_object, part.gt)?;
            report.l_i += share * t.value;
            for i in 0..n {
                dh[i] = share * cfg.w_i * t.d_human[i];
                d_o[i] = share * cfg.w_i * t.d_object[i];
            }
        }
        report.d_human.extend(dh);
        report.d_object.extend(d_o);
    }
    report.l_total = cfg.w_i * report.l_i + cfg.w_u * report.l_u + cfg.w_in * report.l_in;
    Ok(report)
}

/// One line of the training loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub l_i: f64,
    pub l_u: f64,
    pub l_in: f64,
    pub l_total: f64,
    pub gamma_rig: f64,
}

impl LossRecord {
    pub fn new(step: u64, report: &LossReport, gamma_rig: f64) -> Self {
        Self { step, l_i: report.l_i, l_u: report.l_u, l_in: report.l_in, l_total: report.l_total, gamma_rig }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss record serializes")
    }
}
