use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

/// One raw tensor file: little-endian f32, row-major, no header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    #[serde(default = "f32_dtype")]
    pub dtype: String,
    pub shape: Vec<usize>,
    pub file: String,
}

fn f32_dtype() -> String {
    "f32".into()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub tensors: Vec<TensorEntry>,
}

impl TensorManifest {
    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.tensors.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("duplicate tensor names in manifest".into()));
        }
        if let Some(t) = self.tensors.iter().find(|t| t.dtype != "f32") {
            return Err(Error::Format(format!("tensor {} has unsupported dtype {}", t.name, t.dtype)));
        }
        Ok(())
    }
}

pub fn write_raw_tensor(path: &Path, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a raw tensor whose element count must equal the product of `shape`.
pub fn read_raw_floats(path: &Path, shape: &[usize]) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let count: usize = shape.iter().product();
    if bytes.len() != count * 4 {
        return Err(Error::Format(format!(
            "{}: {} bytes do not match shape {shape:?}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

/// Read a `rows x dim` raw tensor as a token matrix.
pub fn read_raw_tensor(path: &Path, rows: usize, dim: usize) -> Result<TokenMatrix> {
    TokenMatrix::new(rows, dim, read_raw_floats(path, &[rows, dim])?)
}
