use std::path::Path;

use crate::attention::SelectionResult;
use crate::error::{Error, Result};

pub const MASK_MAGIC: &[u8; 4] = b"EGOM";

/// Subject mask at patch resolution, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl PatchMask {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "mask has {} cells for a {rows}x{cols} grid",
                cells.len()
            )));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn from_indices(rows: usize, cols: usize, indices: &[usize]) -> Result<Self> {
        let mut cells = vec![false; rows * cols];
        for &i in indices {
            *cells
                .get_mut(i)
                .ok_or_else(|| Error::InvalidArgument(format!("patch {i} outside {rows}x{cols} grid")))? = true;
        }
        Ok(Self { rows, cols, cells })
    }

    /// Down-sample a pixel mask: a patch is in the mask when at least half
    /// of its pixels are.
    pub fn from_pixels(height: usize, width: usize, pixels: &[bool], grid: (usize, usize)) -> Result<Self> {
        let (rows, cols) = grid;
        if pixels.len() != height * width {
            return Err(Error::InvalidArgument("pixel mask size mismatch".into()));
        }
        if rows == 0 || cols == 0 || !height.is_multiple_of(rows) || !width.is_multiple_of(cols) {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} mask does not divide into a {rows}x{cols} grid"
            )));
        }
        let (ph, pw) = (height / rows, width / cols);
        let mut cells = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let on = (0..ph)
                    .flat_map(|y| (0..pw).map(move |x| (r * ph + y) * width + c * pw + x))
                    .filter(|&i| pixels[i])
                    .count();
                cells.push(2 * on >= ph * pw);
            }
        }
        Self::new(rows, cols, cells)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn contains(&self, patch: usize) -> bool {
        self.cells.get(patch).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i]).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.cells.len());
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend(self.cells.iter().map(|&c| c as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MASK_MAGIC {
            return Err(Error::Format("not an EGOM mask".into()));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if Some(body.len()) != rows.checked_mul(cols) {
            return Err(Error::Format(format!(
                "mask body has {} bytes for a {rows}x{cols} grid",
                body.len()
            )));
        }
        let cells = body
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("mask byte {other} is not 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        Self::new(rows, cols, cells)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Fraction of selected patches that fall inside the mask.
pub fn patch_mask_overlap(selection: &SelectionResult, mask: &PatchMask) -> Result<f64> {
    overlap_of_indices(&selection.indices, mask)
}

pub(crate) fn overlap_of_indices(indices: &[usize], mask: &PatchMask) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("selection is empty".into()));
    }
    let n = mask.rows * mask.cols;
    if let Some(bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("patch {bad} outside the {n}-patch mask")));
    }
    let hits = indices.iter().filter(|&&i| mask.contains(i)).count();
    Ok(hits as f64 / indices.len() as f64)
}
