//! Frequency embedding of view directions.

use nalgebra::Vector3;

use super::FieldError;

/// Length of the embedding for `n_freq` octaves.
pub fn embed_dim(n_freq: usize) -> usize {
    6 * n_freq
}

/// `[sin(2ᵏπ d), cos(2ᵏπ d)]` per octave `k < n_freq`, each over x, y, z.
pub fn positional_embed(d: &Vector3<f64>, n_freq: usize) -> Result<Vec<f64>, FieldError> {
    let mut out = vec![0.0; embed_dim(n_freq)];
    positional_embed_into(d, n_freq, &mut out)?;
    Ok(out)
}

pub fn positional_embed_into(d: &Vector3<f64>, n_freq: usize, out: &mut [f64]) -> Result<(), FieldError> {
    if (d.norm() - 1.0).abs() > 1e-6 {
        return Err(FieldError::NonUnitDirection(d.norm()));
    }
    for k in 0..n_freq {
        let scale = (1u64 << k) as f64 * std::f64::consts::PI;
        for j in 0..3 {
            let (s, c) = (scale * d[j]).sin_cos();
            out[6 * k + j] = s;
            out[6 * k + 3 + j] = c;
        }
    }
    Ok(())
}
