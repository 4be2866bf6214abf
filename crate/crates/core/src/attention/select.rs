use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::importance::ImportanceVector;
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

/// Kept visual-token indices (ascending) and the corresponding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub tokens: TokenMatrix,
}

/// Indices of the `k` largest scores, highest first. Ties go to the lower index.
pub fn top_k_indices(scores: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Keep the `k` most important rows of `source`, in their original order.
pub fn select_top_tokens(
    source: &TokenMatrix,
    importance: &ImportanceVector,
    k: usize,
) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if importance.len() != source.rows() {
        return Err(Error::Contract(format!(
            "importance has {} entries for {} tokens",
            importance.len(),
            source.rows()
        )));
    }
    let mut indices = top_k_indices(importance.scores(), k);
    indices.sort_unstable();
    select_indices(source, indices)
}

/// Selection made of explicit indices. They are sorted and deduplicated.
pub fn select_indices(source: &TokenMatrix, mut indices: Vec<usize>) -> Result<SelectionResult> {
    indices.sort_unstable();
    indices.dedup();
    let tokens = source.gather_rows(&indices)?;
    Ok(SelectionResult { indices, tokens })
}

/// `k` evenly spaced indices over `0..n` (the content-blind baseline).
pub fn uniform_indices(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    (0..k).map(|i| i * n / k).collect()
}
