//! Raw little-endian arrays with a TOML sidecar header.
//!
//! `foo.bin` holds the packed values, `foo.hdr` describes them:
//!
//! ```toml
//! format = "instfield-raw"
//! version = 1
//! dtype = "f32"
//! shape = [512, 512]
//!
//! [meta]
//! kind = "depth"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const FORMAT_TAG: &str = "instfield-raw";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RawError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad header: {msg}")]
    Header { path: PathBuf, msg: String },
    #[error("{path}: expected dtype {expected}, found {found}")]
    DType { path: PathBuf, expected: DType, found: DType },
    #[error("{path}: shape {shape:?} needs {expected} bytes, file has {found}")]
    Size { path: PathBuf, shape: Vec<usize>, expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    F32,
    I32,
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DType::F64 => "f64",
            DType::F32 => "f32",
            DType::I32 => "i32",
            DType::U8 => "u8",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub format: String,
    pub version: u32,
    pub dtype: DType,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl RawHeader {
    pub fn new(dtype: DType, shape: Vec<usize>) -> Self {
        Self { format: FORMAT_TAG.into(), version: FORMAT_VERSION, dtype, shape, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sidecar header path: `x.bin` → `x.hdr`.
pub fn header_path(bin: &Path) -> PathBuf {
    bin.with_extension("hdr")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RawError + '_ {
    move |source| RawError::Io { path: path.to_path_buf(), source }
}

fn write_raw(bin: &Path, header: &RawHeader, bytes: &[u8]) -> Result<(), RawError> {
    let hdr = header_path(bin);
    let text = toml::to_string(header).map_err(|e| RawError::Header { path: hdr.clone(), msg: e.to_string() })?;
    fs::write(&hdr, text).map_err(io_err(&hdr))?;
    fs::write(bin, bytes).map_err(io_err(bin))
}

pub fn read_header(bin: &Path) -> Result<RawHeader, RawError> {
    let hdr = header_path(bin);
    let text = fs::read_to_string(&hdr).map_err(io_err(&hdr))?;
    let header: RawHeader =
        toml::from_str(&text).map_err(|e| RawError::Header { path: hdr.clone(), msg: e.to_string() })?;
    if header.format != FORMAT_TAG {
        return Err(RawError::Header { path: hdr, msg: format!("unknown format tag {:?}", header.format) });
    }
    if header.version > FORMAT_VERSION {
        return Err(RawError::Header { path: hdr, msg: format!("unsupported version {}", header.version) });
    }
    Ok(header)
}

fn read_raw(bin: &Path, expected: DType) -> Result<(RawHeader, Vec<u8>), RawError> {
    let header = read_header(bin)?;
    if header.dtype != expected {
        return Err(RawError::DType { path: bin.to_path_buf(), expected, found: header.dtype });
    }
    let bytes = fs::read(bin).map_err(io_err(bin))?;
    let need = header.len() * expected.size();
    if bytes.len() != need {
        return Err(RawError::Size {
            path: bin.to_path_buf(),
            shape: header.shape.clone(),
            expected: need,
            found: bytes.len(),
        });
    }
    Ok((header, bytes))
}

macro_rules! typed_io {
    ($write:ident, $read:ident, $t:ty, $dtype:expr) => {
        pub fn $write(bin: &Path, header: RawHeader, data: &[$t]) -> Result<(), RawError> {
            assert_eq!(header.dtype, $dtype);
            assert_eq!(header.len(), data.len(), "shape does not match data length");
            let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            write_raw(bin, &header, &bytes)
        }

        pub fn $read(bin: &Path) -> Result<(RawHeader, Vec<$t>), RawError> {
            let (header, bytes) = read_raw(bin, $dtype)?;
            let n = std::mem::size_of::<$t>();
            let data = bytes
                .chunks_exact(n)
                .map(|c| <$t>::from_le_bytes(c.try_into().expect("chunk size")))
                .collect();
            Ok((header, data))
        }
    };
}

typed_io!(write_f64, read_f64, f64, DType::F64);
typed_io!(write_f32, read_f32, f32, DType::F32);
typed_io!(write_i32, read_i32, i32, DType::I32);
typed_io!(write_u8, read_u8, u8, DType::U8);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let data = vec![1.5f32, f32::INFINITY, -0.0, 3.25, 7.0, 8.0];
        write_f32(&p, RawHeader::new(DType::F32, vec![2, 3]).with_meta("kind", "depth"), &data).unwrap();
        let (h, back) = read_f32(&p).unwrap();
        assert_eq!(h.shape, vec![2, 3]);
        assert_eq!(h.meta["kind"], "depth");
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(std::fs::read(&p).unwrap().len(), 24);
        assert!(matches!(read_i32(&p), Err(RawError::DType { .. })));
        std::fs::write(&p, [0u8; 3]).unwrap();
        assert!(matches!(read_f32(&p), Err(RawError::Size { .. })));
    }
}
