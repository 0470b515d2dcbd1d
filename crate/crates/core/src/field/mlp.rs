//! Two-headed multilayer perceptron with analytic backpropagation.
//!
//! The first hidden layer is applied to every view's input vector
//! separately; its activations are mean-pooled over views before the rest of
//! the trunk. Both heads are single sigmoid units on top of the trunk.
//!
//! All parameters live in one flat `Vec<f64>`; per layer the weights are
//! stored `[out × in]` row-major followed by the bias `[out]`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::rawio::{self, DType, RawHeader};

/// Network widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Length of each per-view input vector.
    pub view_input: usize,
    /// Hidden widths; the first layer is the per-view layer.
    pub hidden: Vec<usize>,
}

impl MlpConfig {
    pub fn new(view_input: usize, hidden: Vec<usize>) -> Self {
        assert!(!hidden.is_empty(), "at least the per-view layer is required");
        Self { view_input, hidden }
    }

    /// `(out, in)` per layer: hidden layers, then the human and object heads.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 2);
        let mut prev = self.view_input;
        for &w in &self.hidden {
            shapes.push((w, prev));
            prev = w;
        }
        shapes.push((1, prev));
        shapes.push((1, prev));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Flat parameter vector plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    config: MlpConfig,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(config: MlpConfig) -> Self {
        let n = config.n_params();
        let offsets = offsets(&config);
        Self { config, offsets, data: vec![0.0; n] }
    }

    /// Gaussian init with standard deviation `1/√fan_in`, zero biases.
    pub fn init(config: MlpConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, &(o, i)) in p.config.layer_shapes().iter().enumerate() {
            let std = (1.0 / i as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let off = p.offsets[l];
            for w in &mut p.data[off..off + o * i] {
                *w = normal.sample(&mut rng);
            }
        }
        p
    }

    pub fn from_data(config: MlpConfig, data: Vec<f64>) -> Result<Self, FieldError> {
        if data.len() != config.n_params() {
            return Err(FieldError::ShapeMismatch { expected: config.n_params(), got: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        let offsets = offsets(&config);
        Ok(Self { config, offsets, data })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (o, i) = self.config.layer_shapes()[l];
        let off = self.offsets[l];
        (&self.data[off..off + o * i], &self.data[off + o * i..off + o * i + o])
    }

    /// Raw float64 array with a header listing the layer shapes.
    pub fn write(&self, bin: &Path) -> Result<(), FieldError> {
        let layout: Vec<String> = self.config.layer_shapes().iter().map(|(o, i)| format!("{o}x{i}")).collect();
        let header = RawHeader::new(DType::F64, vec![self.data.len()])
            .with_meta("kind", "mlp-params")
            .with_meta("params_version", PARAMS_VERSION)
            .with_meta("view_input", self.config.view_input)
            .with_meta("hidden", self.config.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","))
            .with_meta("layers", layout.join(","));
        rawio::write_f64(bin, header, &self.data)?;
        Ok(())
    }

    pub fn read(bin: &Path) -> Result<Self, FieldError> {
        let (header, data) = rawio::read_f64(bin)?;
        let bad = |m: &str| FieldError::Checkpoint(format!("{}: {m}", bin.display()));
        if header.meta.get("kind").map(String::as_str) != Some("mlp-params") {
            return Err(bad("not a parameter file"));
        }
        let view_input: usize = header
            .meta
            .get("view_input")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing view_input"))?;
        let hidden: Vec<usize> = header
            .meta
            .get("hidden")
            .ok_or_else(|| bad("missing hidden"))?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad hidden width")))
            .collect::<Result<_, _>>()?;
        Self::from_data(MlpConfig::new(view_input, hidden), data)
    }
}

/// Bumped when the parameter layout changes.
pub const PARAMS_VERSION: u32 = 1;

fn offsets(config: &MlpConfig) -> Vec<usize> {
    let mut off = 0;
    config
        .layer_shapes()
        .iter()
        .map(|(o, i)| {
            let cur = off;
            off += o * i + o;
            cur
        })
        .collect()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `C[m×n] = A[m×k] · B[n×k]ᵀ + bias` (bias broadcast over rows).
fn linear_forward(a: &[f64], m: usize, k: usize, w: &[f64], n: usize, bias: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(m * n);
    for _ in 0..m {
        c.extend_from_slice(bias);
    }
    if m > 0 && k > 0 && n > 0 {
        // SAFETY: slices have the declared extents; strides describe
        // row-major A, transposed row-major W, row-major C.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0,
                a.as_ptr(), k as isize, 1,
                w.as_ptr(), 1, k as isize,
                1.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
    c
}

/// `G[n×k] += Dᵀ[n×m] · A[m×k]`.
fn accumulate_weight_grad(d: &[f64], m: usize, n: usize, a: &[f64], k: usize, g: &mut [f64]) {
    if m > 0 && k > 0 && n > 0 {
        // SAFETY: see `linear_forward`.
        unsafe {
            matrixmultiply::dgemm(
                n, m, k, 1.0,
                d.as_ptr(), 1, n as isize,
                a.as_ptr(), k as isize, 1,
                1.0,
                g.as_mut_ptr(), k as isize, 1,
            );
        }
    }
}

/// `P[m×k] = D[m×n] · W[n×k]`.
fn backprop_input(d: &[f64], m: usize, n: usize, w: &[f64], k: usize) -> Vec<f64> {
    let mut p = vec![0.0; m * k];
    if m > 0 && k > 0 && n > 0 {
        // SAFETY: see `linear_forward`.
        unsafe {
            matrixmultiply::dgemm(
                m, n, k, 1.0,
                d.as_ptr(), n as isize, 1,
                w.as_ptr(), k as isize, 1,
                0.0,
                p.as_mut_ptr(), k as isize, 1,
            );
        }
    }
    p
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    n_points: usize,
    n_views: usize,
    /// Pre-activations of each hidden layer; layer 0 has one row per
    /// (point, view) pair.
    pre: Vec<Vec<f64>>,
    /// Inputs to each layer: the raw view inputs, the pooled first-layer
    /// activations, then each trunk activation.
    inputs: Vec<Vec<f64>>,
    pub s_human: Vec<f64>,
    pub s_object: Vec<f64>,
}

impl MlpParams {
    /// Forward pass over `n_points × n_views` rows of `view_input` values,
    /// row index `point * n_views + view`.
    pub fn forward(&self, x: &[f64], n_points: usize, n_views: usize) -> Result<ForwardCache, FieldError> {
        let cfg = &self.config;
        let rows = n_points * n_views;
        if n_views == 0 || x.len() != rows * cfg.view_input {
            return Err(FieldError::ShapeMismatch { expected: rows * cfg.view_input, got: x.len() });
        }
        let shapes = cfg.layer_shapes();
        let n_hidden = cfg.hidden.len();
        let mut pre = Vec::with_capacity(n_hidden);
        let mut inputs = Vec::with_capacity(n_hidden + 1);
        inputs.push(x.to_vec());

        // Per-view layer, then mean over views.
        let (w0, b0) = self.layer(0);
        let width0 = shapes[0].0;
        let z0 = linear_forward(x, rows, cfg.view_input, w0, width0, b0);
        let mut pooled = vec![0.0; n_points * width0];
        let inv_v = 1.0 / n_views as f64;
        for p in 0..n_points {
            let dst = &mut pooled[p * width0..(p + 1) * width0];
            for v in 0..n_views {
                let src = &z0[(p * n_views + v) * width0..(p * n_views + v + 1) * width0];
                for (d, &z) in dst.iter_mut().zip(src) {
                    *d += softplus(z);
                }
            }
            for d in dst.iter_mut() {
                *d *= inv_v;
            }
        }
        pre.push(z0);
        let mut h = pooled;
        for l in 1..n_hidden {
            let (o, i) = shapes[l];
            let (w, b) = self.layer(l);
            let z = linear_forward(&h, n_points, i, w, o, b);
            inputs.push(h);
            h = z.iter().map(|&v| softplus(v)).collect();
            pre.push(z);
        }
        let width = shapes[n_hidden].1;
        let (wh, bh) = self.layer(n_hidden);
        let (wo, bo) = self.layer(n_hidden + 1);
        let zh = linear_forward(&h, n_points, width, wh, 1, bh);
        let zo = linear_forward(&h, n_points, width, wo, 1, bo);
        inputs.push(h);
        Ok(ForwardCache {
            n_points,
            n_views,
            pre,
            inputs,
            s_human: zh.into_iter().map(sigmoid).collect(),
            s_object: zo.into_iter().map(sigmoid).collect(),
        })
    }

    /// Reverse-mode gradients of `Σ g_H·s_H + g_O·s_O` with respect to every
    /// parameter, accumulated into `grad`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        g_human: &[f64],
        g_object: &[f64],
        grad: &mut [f64],
    ) -> Result<(), FieldError> {
        let n = cache.n_points;
        if g_human.len() != n || g_object.len() != n {
            return Err(FieldError::ShapeMismatch { expected: n, got: g_human.len().min(g_object.len()) });
        }
        if grad.len() != self.data.len() {
            return Err(FieldError::ShapeMismatch { expected: self.data.len(), got: grad.len() });
        }
        let cfg = &self.config;
        let shapes = cfg.layer_shapes();
        let n_hidden = cfg.hidden.len();
        let width = shapes[n_hidden].1;
        let h_last = &cache.inputs[n_hidden];

        // Heads.
        let dz_h: Vec<f64> = g_human.iter().zip(&cache.s_human).map(|(g, s)| g * s * (1.0 - s)).collect();
        let dz_o: Vec<f64> = g_object.iter().zip(&cache.s_object).map(|(g, s)| g * s * (1.0 - s)).collect();
        let mut dh = vec![0.0; n * width];
        for (head, dz) in [(n_hidden, &dz_h), (n_hidden + 1, &dz_o)] {
            let off = self.offsets[head];
            let (w, _) = self.layer(head);
            let (gw, gb) = grad[off..off + width + 1].split_at_mut(width);
            for p in 0..n {
                let d = dz[p];
                if d == 0.0 {
                    continue;
                }
                let hrow = &h_last[p * width..(p + 1) * width];
                for k in 0..width {
                    gw[k] += d * hrow[k];
                    dh[p * width + k] += d * w[k];
                }
                gb[0] += d;
            }
        }

        // Trunk layers above the pooled one.
        for l in (1..n_hidden).rev() {
            let (o, i) = shapes[l];
            let z = &cache.pre[l];
            let dz: Vec<f64> = dh.iter().zip(z).map(|(d, &zv)| d * sigmoid(zv)).collect();
            let off = self.offsets[l];
            accumulate_weight_grad(&dz, n, o, &cache.inputs[l], i, &mut grad[off..off + o * i]);
            for p in 0..n {
                for k in 0..o {
                    grad[off + o * i + k] += dz[p * o + k];
                }
            }
            let (w, _) = self.layer(l);
            dh = backprop_input(&dz, n, o, w, i);
        }

        // Mean pooling and the per-view layer.
        let (o, i) = shapes[0];
        let v = cache.n_views;
        let inv_v = 1.0 / v as f64;
        let z0 = &cache.pre[0];
        let mut dz0 = vec![0.0; n * v * o];
        for p in 0..n {
            for view in 0..v {
                let row = p * v + view;
                for k in 0..o {
                    dz0[row * o + k] = dh[p * o + k] * inv_v * sigmoid(z0[row * o + k]);
                }
            }
        }
        let off = self.offsets[0];
        accumulate_weight_grad(&dz0, n * v, o, &cache.inputs[0], i, &mut grad[off..off + o * i]);
        for row in 0..n * v {
            for k in 0..o {
                grad[off + o * i + k] += dz0[row * o + k];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_inputs(n: usize, v: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * v * d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = MlpParams::zeros(MlpConfig::new(5, vec![8, 8]));
        let c = p.forward(&random_inputs(3, 2, 5, 1), 3, 2).unwrap();
        assert!(c.s_human.iter().chain(&c.s_object).all(|&s| s == 0.5));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = MlpParams::init(MlpConfig::new(5, vec![8, 6]), 3);
        let c = p.forward(&random_inputs(4, 3, 5, 2), 4, 3).unwrap();
        let mut g = vec![0.0; p.len()];
        p.backward(&c, &[0.0; 4], &[0.0; 4], &mut g).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let cfg = MlpConfig::new(4, vec![6, 5, 7]);
        let mut p = MlpParams::init(cfg, 7);
        let (n, v) = (5, 3);
        let x = random_inputs(n, v, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gh: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let go: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |p: &MlpParams| {
            let c = p.forward(&x, n, v).unwrap();
            (0..n).map(|i| gh[i] * c.s_human[i] + go[i] * c.s_object[i]).sum::<f64>()
        };
        let c = p.forward(&x, n, v).unwrap();
        let mut g = vec![0.0; p.len()];
        p.backward(&c, &gh, &go, &mut g).unwrap();
        let h = 1e-5;
        for k in 0..p.len() {
            let orig = p.data[k];
            p.data[k] = orig + h;
            let up = objective(&p);
            p.data[k] = orig - h;
            let down = objective(&p);
            p.data[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(g[k].abs()).max(1e-7);
            assert!((fd - g[k]).abs() / denom < 1e-5, "param {k}: fd {fd} analytic {}", g[k]);
        }
    }

    #[test]
    fn single_linear_layer_gradient_is_input_outer_product() {
        // With the heads reading the per-view layer directly and one view,
        // dz_head/dw_head equals the layer activations.
        let cfg = MlpConfig::new(3, vec![2]);
        let p = MlpParams::init(cfg, 1);
        let x = vec![0.3, -0.2, 0.9];
        let c = p.forward(&x, 1, 1).unwrap();
        let mut g = vec![0.0; p.len()];
        p.backward(&c, &[1.0], &[0.0], &mut g).unwrap();
        let s = c.s_human[0];
        let h = &c.inputs[1];
        let head_off = p.offsets[1];
        for k in 0..2 {
            assert!((g[head_off + k] - s * (1.0 - s) * h[k]).abs() < 1e-15);
        }
        assert!((g[head_off + 2] - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn duplicated_views_do_not_change_output() {
        let p = MlpParams::init(MlpConfig::new(4, vec![8, 8]), 5);
        let one = random_inputs(3, 1, 4, 6);
        let mut twice = Vec::new();
        for row in one.chunks(4) {
            twice.extend_from_slice(row);
            twice.extend_from_slice(row);
        }
        let a = p.forward(&one, 3, 1).unwrap();
        let b = p.forward(&twice, 3, 2).unwrap();
        for i in 0..3 {
            assert!((a.s_human[i] - b.s_human[i]).abs() < 1e-15);
            assert!((a.s_object[i] - b.s_object[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = MlpParams::zeros(MlpConfig::new(4, vec![3]));
        assert!(matches!(p.forward(&[0.0; 7], 2, 1), Err(FieldError::ShapeMismatch { .. })));
        let c = p.forward(&[0.0; 8], 2, 1).unwrap();
        let mut g = vec![0.0; p.len()];
        assert!(matches!(p.backward(&c, &[0.0], &[0.0; 2], &mut g), Err(FieldError::ShapeMismatch { .. })));
    }

    #[test]
    fn params_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = MlpParams::init(MlpConfig::new(4, vec![3, 2]), 2);
        p.write(&dir.path().join("p.bin")).unwrap();
        assert_eq!(MlpParams::read(&dir.path().join("p.bin")).unwrap(), p);
    }

    #[test]
    fn activations_are_stable() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
    }
}
