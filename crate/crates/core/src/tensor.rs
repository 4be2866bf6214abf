use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `rows x dim` matrix of 32-bit floats.
///
/// Used for visual tokens, keyword embeddings and attention matrices alike.
/// Every entry is finite and `dim >= 1`; zero rows is allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("matrix dim must be >= 1".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::Contract(format!(
                "matrix data length {} does not match {rows}x{dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite matrix entry at row {} col {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Result<Self> {
        Self::new(rows, dim, vec![0.0; rows * dim])
    }

    /// Empty matrix with room for `capacity` rows.
    pub fn with_capacity(dim: usize, capacity: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("matrix dim must be >= 1".into()));
        }
        Ok(Self {
            rows: 0,
            dim,
            data: Vec::with_capacity(dim * capacity),
        })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Contract(format!(
                    "row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Contract(format!(
                "pushed row has length {}, expected {}",
                row.len(),
                self.dim
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite row entry".into()));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// New matrix made of the given rows, in the given order.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::Contract(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            dim: self.dim,
            data,
        })
    }

    /// Stack matrices vertically. All parts must share `dim`.
    pub fn vstack(dim: usize, parts: &[&TokenMatrix]) -> Result<Self> {
        let mut out = Self::with_capacity(dim, parts.iter().map(|p| p.rows).sum())?;
        for part in parts {
            if part.dim != dim {
                return Err(Error::InvalidArgument(format!(
                    "cannot stack dim {} onto dim {dim}",
                    part.dim
                )));
            }
            out.data.extend_from_slice(&part.data);
            out.rows += part.rows;
        }
        Ok(out)
    }

    /// Mean of all rows, accumulated in f64. `None` when there are no rows.
    pub fn mean_row(&self) -> Option<Vec<f64>> {
        if self.rows == 0 {
            return None;
        }
        let mut acc = vec![0.0f64; self.dim];
        for row in self.iter_rows() {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(acc)
    }

    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.rows,
            self.dim,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}
