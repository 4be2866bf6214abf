use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::CalibrationSample;
use super::mask::overlap_of_indices;
use crate::attention::{importance_scores, top_k_indices};
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::memory::MemoryBudget;
use crate::pipeline::{describe_view, PromptTemplateSet};

pub const DEFAULT_TOP_L: usize = 5;
pub const DEFAULT_CALIBRATION_FRACTION: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRanking {
    /// Mean overlap per candidate layer, in ascending layer order.
    pub scores: Vec<LayerScore>,
    /// Layers by descending score, lower index first on ties.
    pub order: Vec<usize>,
    pub samples_used: usize,
    pub samples_skipped: usize,
    /// Tokens selected per sample.
    pub k: usize,
    /// Overlap of every layer (in `scores` order) per sample; `None` when skipped.
    pub per_sample: Vec<Option<Vec<f64>>>,
}

impl LayerRanking {
    pub fn score(&self, layer: usize) -> Option<f64> {
        self.scores.iter().find(|s| s.layer == layer).map(|s| s.score)
    }
}

pub struct CalibrationOptions {
    pub budget: MemoryBudget,
    /// Layers to rank; `None` means every backend layer.
    pub candidate_layers: Option<Vec<usize>>,
    pub templates: PromptTemplateSet,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            budget: MemoryBudget::fraction(DEFAULT_CALIBRATION_FRACTION).expect("valid fraction"),
            candidate_layers: None,
            templates: PromptTemplateSet::default(),
        }
    }
}

/// Overlap of the top-k single-layer selection with the mask, per layer.
fn sample_overlaps(
    backend: &dyn Backend,
    sample: &CalibrationSample,
    layers: &[usize],
    k: usize,
    templates: &PromptTemplateSet,
) -> Result<Option<Vec<f64>>> {
    let tokens = sample.visual.encode(backend)?;
    let (rows, cols) = backend.config().patch_grid;
    if sample.mask.rows() != rows || sample.mask.cols() != cols || tokens.rows() != rows * cols {
        return Err(Error::Calibration(format!(
            "sample `{}`: mask {}x{} / {} tokens do not match the {rows}x{cols} patch grid",
            sample.category,
            sample.mask.rows(),
            sample.mask.cols(),
            tokens.rows()
        )));
    }
    let description = match describe_view(backend, templates, &tokens, layers) {
        Ok(d) => d,
        Err(Error::EmptyKeywords | Error::MissingCapture(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let k = k.min(tokens.rows());
    layers
        .iter()
        .map(|&l| {
            let single = description.stack.select_layers(&[l])?;
            let importance = importance_scores(&single)?;
            overlap_of_indices(&top_k_indices(importance.scores(), k), &sample.mask)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Rank layers by how well their keyword attention lands on the subject mask.
///
/// Samples whose keyword extraction fails are skipped and counted. Means are
/// accumulated in sample order, so the result does not depend on whether
/// samples ran in parallel.
pub fn rank_layers(
    backend: &dyn Backend,
    samples: &[CalibrationSample],
    options: &CalibrationOptions,
) -> Result<LayerRanking> {
    if samples.is_empty() {
        return Err(Error::Calibration("no calibration samples".into()));
    }
    let mut layers = options
        .candidate_layers
        .clone()
        .unwrap_or_else(|| (0..backend.config().layers).collect());
    layers.sort_unstable();
    layers.dedup();
    if layers.is_empty() {
        return Err(Error::Calibration("no candidate layers".into()));
    }
    let k = options.budget.cap(backend.config().n_r());
    let run = |s: &CalibrationSample| sample_overlaps(backend, s, &layers, k, &options.templates);
    let per_sample: Vec<Option<Vec<f64>>> = if backend.supports_concurrent_calls() {
        samples.par_iter().map(run).collect::<Result<_>>()?
    } else {
        samples.iter().map(run).collect::<Result<_>>()?
    };

    let used: Vec<&Vec<f64>> = per_sample.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::Calibration(format!(
            "keyword extraction failed for all {} samples",
            samples.len()
        )));
    }
    let scores: Vec<LayerScore> = layers
        .iter()
        .enumerate()
        .map(|(i, &layer)| {
            let mut sum = 0.0f64;
            for s in &used {
                sum += s[i];
            }
            LayerScore {
                layer,
                score: sum / used.len() as f64,
            }
        })
        .collect();
    let mut order_scores = scores.clone();
    order_scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.layer.cmp(&b.layer)));
    Ok(LayerRanking {
        order: order_scores.iter().map(|s| s.layer).collect(),
        scores,
        samples_used: used.len(),
        samples_skipped: samples.len() - used.len(),
        k,
        per_sample,
    })
}

/// The `l` best layers, ascending.
pub fn select_top_l(ranking: &LayerRanking, l: usize) -> Result<Vec<usize>> {
    if l == 0 || l > ranking.order.len() {
        return Err(Error::InvalidArgument(format!(
            "top-l {l} outside 1..={}",
            ranking.order.len()
        )));
    }
    let mut out = ranking.order[..l].to_vec();
    out.sort_unstable();
    Ok(out)
}

pub const CALIBRATION_FILE_VERSION: u32 = 1;

/// Calibration result on disk (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub version: u32,
    pub backend_fingerprint: String,
    pub top_l: usize,
    pub selected_layers: Vec<usize>,
    pub ranking: LayerRanking,
}

impl CalibrationFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if file.version != CALIBRATION_FILE_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported calibration file version {}",
                path.display(),
                file.version
            )));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::backend::write_json_atomic(path, self)
    }
}
