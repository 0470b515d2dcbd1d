//! OBJ and PLY mesh I/O.
//!
//! PLY files are written as `binary_little_endian` with double-precision
//! positions. Vertex labels travel as the integer property `instance_id`, an
//! optional vote confidence as the float property `label_conf`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use super::{MeshError, TriMesh, LABEL_UNLABELED};

/// Mesh plus per-vertex attributes that do not live on [`TriMesh`].
#[derive(Debug, Clone, Default)]
pub struct PlyMesh {
    pub mesh: TriMesh,
    pub label_conf: Option<Vec<f32>>,
}

fn fmt_err(msg: impl Into<String>) -> MeshError {
    MeshError::Format(msg.into())
}

/// Loads a mesh by extension (`.obj` or `.ply`).
pub fn load_mesh(path: &Path) -> Result<TriMesh, MeshError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => read_obj(path),
        Some("ply") => Ok(read_ply(path)?.mesh),
        _ => Err(fmt_err(format!("{}: unsupported mesh extension", path.display()))),
    }
}

/// Saves a mesh by extension (`.obj` or `.ply`).
pub fn save_mesh(path: &Path, mesh: &TriMesh) -> Result<(), MeshError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => write_obj(path, mesh),
        Some("ply") => write_ply(path, mesh, None),
        _ => Err(fmt_err(format!("{}: unsupported mesh extension", path.display()))),
    }
}

pub fn read_obj(path: &Path) -> Result<TriMesh, MeshError> {
    let reader = BufReader::new(File::open(path)?);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| fmt_err(format!("line {}: {e}", lineno + 1)))?;
                if c.len() != 3 {
                    return Err(fmt_err(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|e| fmt_err(format!("line {}: {e}", lineno + 1)))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        u32::try_from(resolved).map_err(|_| fmt_err(format!("line {}: bad index {i}", lineno + 1)))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(fmt_err(format!("line {}: face needs 3 indices", lineno + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<(), MeshError> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ply(path: &Path, mesh: &TriMesh, label_conf: Option<&[f32]>) -> Result<(), MeshError> {
    if let Some(c) = label_conf {
        if c.len() != mesh.vertices().len() {
            return Err(fmt_err("label_conf length differs from vertex count"));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices().len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    if mesh.labels().is_some() {
        writeln!(w, "property int instance_id")?;
    }
    if label_conf.is_some() {
        writeln!(w, "property float label_conf")?;
    }
    writeln!(w, "element face {}", mesh.faces().len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices().iter().enumerate() {
        for k in 0..3 {
            w.write_all(&v[k].to_le_bytes())?;
        }
        if let Some(labels) = mesh.labels() {
            w.write_all(&(labels[i] as i32).to_le_bytes())?;
        }
        if let Some(c) = label_conf {
            w.write_all(&c[i].to_le_bytes())?;
        }
    }
    for f in mesh.faces() {
        w.write_all(&[3u8])?;
        for &i in f {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Self, MeshError> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(fmt_err(format!("unknown PLY scalar type {s:?}"))),
        })
    }

    fn read_binary(self, r: &mut impl Read) -> Result<f64, MeshError> {
        macro_rules! rd {
            ($t:ty) => {{
                let mut b = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut b)?;
                <$t>::from_le_bytes(b) as f64
            }};
        }
        Ok(match self {
            Scalar::I8 => rd!(i8),
            Scalar::U8 => rd!(u8),
            Scalar::I16 => rd!(i16),
            Scalar::U16 => rd!(u16),
            Scalar::I32 => rd!(i32),
            Scalar::U32 => rd!(u32),
            Scalar::F32 => rd!(f32),
            Scalar::F64 => rd!(f64),
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

/// Reads ASCII or binary little-endian PLY.
pub fn read_ply(path: &Path) -> Result<PlyMesh, MeshError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(fmt_err(format!("{}: not a PLY file", path.display())));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(fmt_err("PLY header ends early"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", other, _] => return Err(fmt_err(format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| fmt_err("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| fmt_err("property before element"))?
                .props
                .push(Property::List { name: name.to_string(), count: Scalar::parse(count)?, item: Scalar::parse(item)? }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| fmt_err("property before element"))?
                .props
                .push(Property::Scalar { name: name.to_string(), ty: Scalar::parse(ty)? }),
            ["end_header"] => break,
            _ => {}
        }
    }
    let encoding = encoding.ok_or_else(|| fmt_err("PLY header lacks format"))?;
    let mut ascii_tokens: Option<std::vec::IntoIter<String>> = None;
    if encoding == Encoding::Ascii {
        let mut rest = String::new();
        r.read_to_string(&mut rest)?;
        ascii_tokens = Some(rest.split_whitespace().map(String::from).collect::<Vec<_>>().into_iter());
    }
    let mut next = |ty: Scalar| -> Result<f64, MeshError> {
        match ascii_tokens.as_mut() {
            Some(toks) => toks
                .next()
                .ok_or_else(|| fmt_err("PLY body ends early"))?
                .parse::<f64>()
                .map_err(|e| fmt_err(e.to_string())),
            None => ty.read_binary(&mut r),
        }
    };

    let mut vertices = Vec::new();
    let mut labels: Option<Vec<u32>> = None;
    let mut conf: Option<Vec<f32>> = None;
    let mut faces = Vec::new();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            vertices.reserve(el.count);
            if el.props.iter().any(|p| matches!(p, Property::Scalar { name, .. } if name == "instance_id")) {
                labels = Some(Vec::with_capacity(el.count));
            }
            if el.props.iter().any(|p| matches!(p, Property::Scalar { name, .. } if name == "label_conf")) {
                conf = Some(Vec::with_capacity(el.count));
            }
        }
        for _ in 0..el.count {
            let mut pos = [0.0f64; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = next(*ty)?;
                        if is_vertex {
                            match name.as_str() {
                                "x" => pos[0] = v,
                                "y" => pos[1] = v,
                                "z" => pos[2] = v,
                                "instance_id" => labels.as_mut().unwrap().push(if v < 0.0 { LABEL_UNLABELED } else { v as u32 }),
                                "label_conf" => conf.as_mut().unwrap().push(v as f32),
                                _ => {}
                            }
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = next(*count)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(next(*item)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if n < 3 {
                                return Err(fmt_err("face with fewer than 3 vertices"));
                            }
                            for k in 1..n - 1 {
                                faces.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(Point3::new(pos[0], pos[1], pos[2]));
            }
        }
    }
    let mut mesh = TriMesh::new(vertices, faces)?;
    if let Some(l) = labels {
        mesh = mesh.with_labels(l)?;
    }
    Ok(PlyMesh { mesh, label_conf: conf })
}
