use serde::{Deserialize, Serialize};

use super::stack::AttentionStack;
use crate::error::{Error, Result};

/// Per-visual-token importance, one entry per column of the source stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    scores: Vec<f32>,
}

impl ImportanceVector {
    pub fn new(scores: Vec<f32>) -> Result<Self> {
        if let Some(v) = scores.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "importance score {v} is negative or non-finite"
            )));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// How head and layer axes are collapsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceReduction {
    /// Mean over layers, heads and keyword tokens.
    #[default]
    Mean,
    /// Max over layers and heads of the keyword-mean.
    MaxOverHeadsAndLayers,
}

/// Mean attention each visual token receives from the keyword tokens,
/// averaged over heads and then over layers.
pub fn importance_scores(stack: &AttentionStack) -> Result<ImportanceVector> {
    importance_scores_with(stack, ImportanceReduction::Mean)
}

pub fn importance_scores_with(
    stack: &AttentionStack,
    reduction: ImportanceReduction,
) -> Result<ImportanceVector> {
    if stack.is_empty() {
        return Err(Error::InvalidArgument(
            "importance needs at least one layer, head and keyword row".into(),
        ));
    }
    let n_r = stack.n_r();
    let n_w = stack.n_w() as f64;
    let heads = stack.heads();
    let n_layers = stack.layers().len();

    let mut out = vec![0.0f64; n_r];
    let mut keyword_mean = vec![0.0f64; n_r];
    for l in 0..n_layers {
        for h in 0..heads {
            keyword_mean.iter_mut().for_each(|v| *v = 0.0);
            for row in stack.matrix(l, h).chunks_exact(n_r) {
                for (acc, &a) in keyword_mean.iter_mut().zip(row) {
                    *acc += a as f64;
                }
            }
            for (o, &k) in out.iter_mut().zip(&keyword_mean) {
                let k = k / n_w;
                match reduction {
                    ImportanceReduction::Mean => *o += k,
                    ImportanceReduction::MaxOverHeadsAndLayers => *o = o.max(k),
                }
            }
        }
    }
    if reduction == ImportanceReduction::Mean {
        let denom = (heads * n_layers) as f64;
        out.iter_mut().for_each(|v| *v /= denom);
    }
    ImportanceVector::new(out.into_iter().map(|v| v as f32).collect())
}
