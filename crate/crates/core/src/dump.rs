//! Flat little-endian `f64` tensor dumps with a JSON sidecar header.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub plane_names: Vec<String>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes `values` to `path` and the header to `path.json`.
pub fn write_dump(path: impl AsRef<Path>, shape: &[usize], plane_names: &[String], values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if shape.iter().product::<usize>() != values.len() {
        return Err(Error::Shape(format!(
            "shape {shape:?} does not hold {} values",
            values.len()
        )));
    }
    let header = DumpHeader {
        shape: shape.to_vec(),
        dtype: "f64le".into(),
        plane_names: plane_names.to_vec(),
    };
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    let head = sidecar(path);
    std::fs::write(&head, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&head, e))
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<(DumpHeader, Vec<f64>)> {
    let path = path.as_ref();
    let head = sidecar(path);
    let header: DumpHeader =
        serde_json::from_slice(&std::fs::read(&head).map_err(|e| Error::io(&head, e))?)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * header.shape.iter().product::<usize>() {
        return Err(Error::Shape("dump length disagrees with header".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}
