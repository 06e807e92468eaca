//! Flat binary field files with a JSON sidecar.
//!
//! Layout (little endian): magic `QCFD`, then `u32` version, dim, N and kind
//! (0 scalar, 1 vector, 2 matrix), then `f64` samples in row-major node order,
//! node-major within a node (vector components, or matrix entries row by row).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Field, FieldError, MatrixField, PeriodicGrid, ScalarField, VectorField};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"QCFD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub n: usize,
    pub kind: String,
    pub components: usize,
    pub payload: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn kind_code(f: &Field) -> (u32, &'static str, usize) {
    let d = f.grid().dim;
    match f {
        Field::Scalar(_) => (0, "scalar", 1),
        Field::Vector(_) => (1, "vector", d),
        Field::Matrix(_) => (2, "matrix", d * d),
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `field` to `path` and its metadata to `path.json`.
pub fn write_field(path: &Path, field: &Field, extra: serde_json::Value) -> Result<FieldMetadata, FieldError> {
    let grid = field.grid();
    let (code, name, comps) = kind_code(field);
    let mut buf = Vec::with_capacity(20 + 8 * grid.nodes() * comps);
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, grid.dim as u32, grid.n as u32, code] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for node in 0..grid.nodes() {
        match field {
            Field::Scalar(f) => buf.extend_from_slice(&f.values[node].to_le_bytes()),
            Field::Vector(f) => {
                for c in &f.comps {
                    buf.extend_from_slice(&c[node].to_le_bytes());
                }
            }
            Field::Matrix(f) => {
                for v in f.values[node].row_major() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    let meta = FieldMetadata {
        format: "qcfield".into(),
        version: VERSION,
        dim: grid.dim,
        n: grid.n,
        kind: name.into(),
        components: comps,
        payload: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        extra,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn read_field(path: &Path) -> Result<Field, FieldError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(FieldError::Format("missing QCFD header".into()));
    }
    let version = read_u32(&bytes, 4);
    if version != VERSION {
        return Err(FieldError::Format(format!("unsupported version {version}")));
    }
    let grid = PeriodicGrid::new(read_u32(&bytes, 8) as usize, read_u32(&bytes, 12) as usize)?;
    let code = read_u32(&bytes, 16);
    let comps = match code {
        0 => 1,
        1 => grid.dim,
        2 => grid.dim * grid.dim,
        _ => return Err(FieldError::Format(format!("unknown kind {code}"))),
    };
    let expected = 20 + 8 * comps * grid.nodes();
    if bytes.len() != expected {
        return Err(FieldError::Format(format!("payload length {} != {expected}", bytes.len())));
    }
    let data: Vec<f64> =
        bytes[20..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(match code {
        0 => Field::Scalar(ScalarField { grid, values: data }),
        1 => {
            let mut v = VectorField::zeros(grid);
            for (node, chunk) in data.chunks_exact(comps).enumerate() {
                for (c, val) in chunk.iter().enumerate() {
                    v.comps[c][node] = *val;
                }
            }
            Field::Vector(v)
        }
        _ => Field::Matrix(MatrixField {
            grid,
            values: data.chunks_exact(comps).map(|c| Matrix::from_row_major(grid.dim, c)).collect(),
        }),
    })
}

pub fn read_metadata(path: &Path) -> Result<FieldMetadata, FieldError> {
    Ok(serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?)
}
