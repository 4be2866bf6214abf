use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::keywords::KeywordSpan;
use crate::error::{Error, Result};

/// Slack allowed on stored row sums (rows are slices of a wider softmax).
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Attention rows recorded during generation.
///
/// `layers[l][h][s]` is the attention row of the token generated at step `s`
/// (sequence position `first_position + s`) over every position up to and
/// including itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapturedAttention {
    pub first_position: usize,
    pub layers: BTreeMap<usize, Vec<Vec<Vec<f32>>>>,
}

impl CapturedAttention {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn row(&self, layer: usize, head: usize, position: usize) -> Option<&[f32]> {
        let step = position.checked_sub(self.first_position)?;
        self.layers
            .get(&layer)?
            .get(head)?
            .get(step)
            .map(|r| r.as_slice())
    }

    pub fn heads(&self) -> usize {
        self.layers.values().next().map_or(0, |h| h.len())
    }
}

/// Keyword-to-visual attention for a set of layers.
///
/// Stored as one `n_w x n_r` matrix per (layer, head), layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    layers: Vec<usize>,
    heads: usize,
    n_w: usize,
    n_r: usize,
    data: Vec<f32>,
}

impl AttentionStack {
    /// `matrices[l][h]` is the row-major `n_w x n_r` matrix for `layers[l]`, head `h`.
    pub fn new(
        layers: Vec<usize>,
        n_w: usize,
        n_r: usize,
        matrices: Vec<Vec<Vec<f32>>>,
    ) -> Result<Self> {
        if matrices.len() != layers.len() {
            return Err(Error::Contract(format!(
                "{} layer indices but {} layer matrices",
                layers.len(),
                matrices.len()
            )));
        }
        let heads = matrices.first().map_or(0, |m| m.len());
        let mut data = Vec::with_capacity(layers.len() * heads * n_w * n_r);
        for (l, per_head) in matrices.iter().enumerate() {
            if per_head.len() != heads {
                return Err(Error::Contract(format!(
                    "layer {} has {} heads, expected {heads}",
                    layers[l],
                    per_head.len()
                )));
            }
            for m in per_head {
                if m.len() != n_w * n_r {
                    return Err(Error::Contract(format!(
                        "attention matrix has {} entries, expected {n_w}x{n_r}",
                        m.len()
                    )));
                }
                for row in m.chunks(n_r.max(1)) {
                    validate_row(row)?;
                }
                data.extend_from_slice(m);
            }
        }
        Ok(Self {
            layers,
            heads,
            n_w,
            n_r,
            data,
        })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty() || self.heads == 0 || self.n_w == 0
    }

    /// Matrix for the `l`-th stored layer (position in `layers()`, not layer id).
    pub fn matrix(&self, l: usize, head: usize) -> &[f32] {
        let size = self.n_w * self.n_r;
        let start = (l * self.heads + head) * size;
        &self.data[start..start + size]
    }

    pub fn entry(&self, l: usize, head: usize, n: usize, j: usize) -> f32 {
        self.matrix(l, head)[n * self.n_r + j]
    }

    /// Stack restricted to the given layer ids, in the given order.
    pub fn select_layers(&self, layer_ids: &[usize]) -> Result<Self> {
        let mut matrices = Vec::with_capacity(layer_ids.len());
        for id in layer_ids {
            let l = self
                .layers
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::MissingCapture(format!("layer {id} not in stack")))?;
            matrices.push((0..self.heads).map(|h| self.matrix(l, h).to_vec()).collect());
        }
        Self::new(layer_ids.to_vec(), self.n_w, self.n_r, matrices)
    }

    pub fn scaled(&self, c: f32) -> Result<Self> {
        let matrices = (0..self.layers.len())
            .map(|l| {
                (0..self.heads)
                    .map(|h| self.matrix(l, h).iter().map(|v| v * c).collect())
                    .collect()
            })
            .collect();
        Self::new(self.layers.clone(), self.n_w, self.n_r, matrices)
    }
}

fn validate_row(row: &[f32]) -> Result<()> {
    let mut sum = 0.0f64;
    for &v in row {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "attention entry {v} is negative or non-finite"
            )));
        }
        sum += v as f64;
    }
    if sum > 1.0 + ROW_SUM_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "attention row sums to {sum}, above 1"
        )));
    }
    Ok(())
}

/// Slice keyword rows over the visual columns out of captured attention.
///
/// Rows are copied as-is; the slice is not renormalized over the visual
/// columns. Row `n` of every matrix belongs to `span.token_positions[n]`.
pub fn extract_cross_attention(
    captured: &CapturedAttention,
    span: &KeywordSpan,
    visual_range: Range<usize>,
    layers: &[usize],
) -> Result<AttentionStack> {
    if span.token_positions.is_empty() {
        return Err(Error::MissingCapture("keyword span is empty".into()));
    }
    if visual_range.is_empty() {
        return Err(Error::InvalidArgument("visual range is empty".into()));
    }
    if layers.is_empty() {
        return Err(Error::InvalidArgument("no layers requested".into()));
    }
    let heads = captured.heads();
    let n_w = span.token_positions.len();
    let n_r = visual_range.len();
    let mut matrices = Vec::with_capacity(layers.len());
    for &layer in layers {
        let per_head = captured
            .layers
            .get(&layer)
            .ok_or_else(|| Error::MissingCapture(format!("layer {layer} was not captured")))?;
        if per_head.len() != heads {
            return Err(Error::Contract(format!(
                "layer {layer} captured {} heads, expected {heads}",
                per_head.len()
            )));
        }
        let mut head_mats = Vec::with_capacity(heads);
        for head in 0..heads {
            let mut m = Vec::with_capacity(n_w * n_r);
            for &pos in &span.token_positions {
                if pos < visual_range.end {
                    return Err(Error::Contract(format!(
                        "keyword position {pos} does not follow the visual range {visual_range:?}"
                    )));
                }
                let row = captured.row(layer, head, pos).ok_or_else(|| {
                    Error::MissingCapture(format!(
                        "no attention row for position {pos} (layer {layer}, head {head})"
                    ))
                })?;
                if row.len() < visual_range.end {
                    return Err(Error::Contract(format!(
                        "captured row of length {} does not cover visual range {visual_range:?}",
                        row.len()
                    )));
                }
                m.extend_from_slice(&row[visual_range.clone()]);
            }
            head_mats.push(m);
        }
        matrices.push(head_mats);
    }
    AttentionStack::new(layers.to_vec(), n_w, n_r, matrices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn captured(first: usize, steps: usize, ctx: usize) -> CapturedAttention {
        let mut layers = BTreeMap::new();
        for layer in [0usize, 2] {
            let heads = (0..2)
                .map(|h| {
                    (0..steps)
                        .map(|s| {
                            let len = first + s + 1;
                            assert!(len > ctx);
                            let mut row = vec![0.0f32; len];
                            // deterministic, non-uniform mass that sums to 1
                            let total: f32 = (1..=len).map(|x| x as f32).sum();
                            for (j, r) in row.iter_mut().enumerate() {
                                *r = (j + 1 + layer + h) as f32 / (total + (layer + h) as f32 * len as f32);
                            }
                            row
                        })
                        .collect()
                })
                .collect();
            layers.insert(layer, heads);
        }
        CapturedAttention {
            first_position: first,
            layers,
        }
    }

    #[test]
    fn shape_follows_span_and_visual_range() {
        let cap = captured(70, 10, 64);
        let span = KeywordSpan {
            token_positions: vec![72, 74],
            decoded_words: vec!["a".into(), "b".into()],
        };
        let stack = extract_cross_attention(&cap, &span, 0..64, &[0, 2]).unwrap();
        assert_eq!(stack.n_w(), 2);
        assert_eq!(stack.n_r(), 64);
        assert_eq!(stack.heads(), 2);
        assert_eq!(stack.layers(), &[0, 2]);
    }

    #[test]
    fn raw_slice_is_not_renormalized() {
        let cap = captured(70, 3, 64);
        let span = KeywordSpan {
            token_positions: vec![71],
            decoded_words: vec!["x".into()],
        };
        let stack = extract_cross_attention(&cap, &span, 0..64, &[2]).unwrap();
        let row = cap.row(2, 1, 71).unwrap();
        assert_eq!(stack.matrix(0, 1), &row[0..64]);
        let s: f64 = stack.matrix(0, 1).iter().map(|&v| v as f64).sum();
        assert!(s < 1.0);
    }

    #[test]
    fn missing_rows_and_empty_span() {
        let cap = captured(70, 3, 64);
        let empty = KeywordSpan::default();
        assert!(matches!(
            extract_cross_attention(&cap, &empty, 0..64, &[0]),
            Err(Error::MissingCapture(_))
        ));
        let beyond = KeywordSpan {
            token_positions: vec![90],
            decoded_words: vec!["x".into()],
        };
        assert!(matches!(
            extract_cross_attention(&cap, &beyond, 0..64, &[0]),
            Err(Error::MissingCapture(_))
        ));
        let ok = KeywordSpan {
            token_positions: vec![70],
            decoded_words: vec!["x".into()],
        };
        assert!(matches!(
            extract_cross_attention(&cap, &ok, 0..64, &[1]),
            Err(Error::MissingCapture(_))
        ));
    }

    #[test]
    fn stack_rejects_invalid_rows() {
        assert!(AttentionStack::new(vec![0], 1, 2, vec![vec![vec![0.7, 0.7]]]).is_err());
        assert!(AttentionStack::new(vec![0], 1, 2, vec![vec![vec![-0.1, 0.5]]]).is_err());
        assert!(AttentionStack::new(vec![0], 1, 2, vec![vec![vec![0.2, 0.5]]]).is_ok());
    }
}
