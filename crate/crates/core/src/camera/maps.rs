//! Per-pixel depth and label images.

use std::path::Path;

use crate::rawio::{self, DType, RawHeader, RawError};

/// Label value for pixels that see no surface.
pub const LABEL_BACKGROUND: i32 = -1;

/// Euclidean camera distance per pixel, `+∞` where no surface was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![f64::INFINITY; width * height] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.depth[j * self.width + i]
    }

    pub fn covered(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    /// Stored as float32, row-major `[height, width]`.
    pub fn write(&self, bin: &Path) -> Result<(), RawError> {
        let data: Vec<f32> = self.depth.iter().map(|&d| d as f32).collect();
        rawio::write_f32(bin, RawHeader::new(DType::F32, vec![self.height, self.width]).with_meta("kind", "depth"), &data)
    }

    pub fn read(bin: &Path) -> Result<Self, RawError> {
        let (h, data) = rawio::read_f32(bin)?;
        let (height, width) = shape2(bin, &h)?;
        Ok(Self { width, height, depth: data.into_iter().map(f64::from).collect() })
    }
}

/// Instance id per pixel, [`LABEL_BACKGROUND`] where empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<i32>,
}

impl LabelMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![LABEL_BACKGROUND; width * height] }
    }

    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.labels[j * self.width + i]
    }

    /// Stored as int32, row-major `[height, width]`.
    pub fn write(&self, bin: &Path) -> Result<(), RawError> {
        rawio::write_i32(bin, RawHeader::new(DType::I32, vec![self.height, self.width]).with_meta("kind", "labels"), &self.labels)
    }

    pub fn read(bin: &Path) -> Result<Self, RawError> {
        let (h, labels) = rawio::read_i32(bin)?;
        let (height, width) = shape2(bin, &h)?;
        Ok(Self { width, height, labels })
    }
}

fn shape2(bin: &Path, h: &RawHeader) -> Result<(usize, usize), RawError> {
    match h.shape.as_slice() {
        &[height, width] => Ok((height, width)),
        _ => Err(RawError::Header { path: bin.to_path_buf(), msg: format!("expected 2-D shape, got {:?}", h.shape) }),
    }
}
