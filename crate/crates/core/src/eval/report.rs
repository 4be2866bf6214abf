use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::harness::{
    captioning_recall, multi_concept_protocol, recognition_protocol, vqa_accuracy, CaptionOutcome, Coverage,
    EvalTask, Evaluator, ItemError, RecognitionOutcome, VqaOutcome,
};
use super::manifest::DatasetManifest;
use super::metrics::{ConfusionCounts, PrfSummary};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetrics {
    pub name: String,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub per_concept: Vec<ConceptMetrics>,
    /// Averaged P, averaged R, and F1 of those averages.
    #[serde(flatten)]
    pub summary: PrfSummary,
    pub flagged: usize,
}

impl From<&RecognitionOutcome> for RecognitionReport {
    fn from(o: &RecognitionOutcome) -> Self {
        Self {
            per_concept: o
                .counts
                .iter()
                .map(|(name, c)| ConceptMetrics {
                    name: name.clone(),
                    counts: *c,
                    precision: c.precision(),
                    recall: c.recall(),
                    f1: c.f1(),
                })
                .collect(),
            summary: PrfSummary::from_counts(o.counts.values()),
            flagged: o.flagged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaReport {
    pub accuracy: f64,
    pub correct: usize,
    pub scored: usize,
    pub needs_judge: usize,
    pub ambiguous: usize,
}

impl From<&VqaOutcome> for VqaReport {
    fn from(o: &VqaOutcome) -> Self {
        Self {
            accuracy: o.accuracy(),
            correct: o.correct,
            scored: o.scored,
            needs_judge: o.needs_judge,
            ambiguous: o.ambiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionGroup {
    pub concepts: String,
    pub hits: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub recall: f64,
    pub groups: Vec<CaptionGroup>,
}

impl From<&CaptionOutcome> for CaptionReport {
    fn from(o: &CaptionOutcome) -> Self {
        Self {
            recall: o.recall(),
            groups: o
                .groups
                .iter()
                .map(|(k, &(hits, total))| CaptionGroup {
                    concepts: k.clone(),
                    hits,
                    total,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub backend_fingerprint: String,
    pub tasks: Vec<EvalTask>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recognition: Option<RecognitionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi_concept: Option<RecognitionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vqa: Option<VqaReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub captioning: Option<CaptionReport>,
    pub flagged_parses: usize,
    pub coverage: Coverage,
}

/// Run the requested protocols and assemble one report.
pub fn evaluate(manifest: &DatasetManifest, ev: &Evaluator<'_>, tasks: &[EvalTask]) -> Result<EvalReport> {
    let mut tasks = tasks.to_vec();
    tasks.sort();
    tasks.dedup();
    let mut report = EvalReport {
        version: REPORT_VERSION,
        backend_fingerprint: ev.backend.fingerprint(),
        tasks: tasks.clone(),
        recognition: None,
        multi_concept: None,
        vqa: None,
        captioning: None,
        flagged_parses: 0,
        coverage: Coverage::default(),
    };
    let mut errors: Vec<ItemError> = Vec::new();
    let mut merge = |c: &Coverage, report: &mut EvalReport| {
        report.coverage.total += c.total;
        report.coverage.evaluated += c.evaluated;
        errors.extend(c.errors.iter().cloned());
    };
    for task in tasks {
        match task {
            EvalTask::Recognition => {
                let o = recognition_protocol(manifest, ev)?;
                merge(&o.coverage, &mut report);
                report.flagged_parses += o.flagged;
                report.recognition = Some((&o).into());
            }
            EvalTask::MultiConcept => {
                let o = multi_concept_protocol(manifest, ev)?;
                merge(&o.coverage, &mut report);
                report.flagged_parses += o.flagged;
                report.multi_concept = Some((&o).into());
            }
            EvalTask::Vqa => {
                let o = vqa_accuracy(manifest, ev)?;
                merge(&o.coverage, &mut report);
                report.vqa = Some((&o).into());
            }
            EvalTask::Captioning => {
                let o = captioning_recall(manifest, ev)?;
                merge(&o.coverage, &mut report);
                report.captioning = Some((&o).into());
            }
        }
    }
    errors.sort();
    report.coverage.errors = errors;
    Ok(report)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Summary table followed by per-concept rows.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16}{:>8}{:>8}{:>8}{:>8}{:>8}",
            "Task", "Prec", "Rec", "F1", "Acc", "CapRec"
        );
        let prf = |name: &str, r: &RecognitionReport, out: &mut String| {
            let _ = writeln!(
                out,
                "{:<16}{:>8}{:>8}{:>8}{:>8}{:>8}",
                name,
                cell(Some(r.summary.precision)),
                cell(Some(r.summary.recall)),
                cell(Some(r.summary.f1)),
                "-",
                "-"
            );
        };
        if let Some(r) = &self.recognition {
            prf("recognition", r, &mut out);
        }
        if let Some(r) = &self.multi_concept {
            prf("multi-concept", r, &mut out);
        }
        if let Some(v) = &self.vqa {
            let _ = writeln!(
                out,
                "{:<16}{:>8}{:>8}{:>8}{:>8}{:>8}",
                "vqa",
                "-",
                "-",
                "-",
                cell(Some(v.accuracy)),
                "-"
            );
        }
        if let Some(c) = &self.captioning {
            let _ = writeln!(
                out,
                "{:<16}{:>8}{:>8}{:>8}{:>8}{:>8}",
                "captioning",
                "-",
                "-",
                "-",
                "-",
                cell(Some(c.recall))
            );
        }
        for (label, r) in [("recognition", &self.recognition), ("multi-concept", &self.multi_concept)] {
            let Some(r) = r else { continue };
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<24}{:>6}{:>6}{:>6}{:>6}{:>8}{:>8}{:>8}",
                label, "TP", "FP", "FN", "TN", "Prec", "Rec", "F1"
            );
            for c in &r.per_concept {
                let _ = writeln!(
                    out,
                    "{:<24}{:>6}{:>6}{:>6}{:>6}{:>8}{:>8}{:>8}",
                    c.name,
                    c.counts.tp,
                    c.counts.fp,
                    c.counts.fn_,
                    c.counts.tn,
                    cell(Some(c.precision)),
                    cell(Some(c.recall)),
                    cell(Some(c.f1))
                );
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "coverage: {}/{} queries evaluated, {} load errors, {} flagged parses",
            self.coverage.evaluated,
            self.coverage.total,
            self.coverage.errors.len(),
            self.flagged_parses
        );
        if let Some(v) = &self.vqa {
            if v.needs_judge > 0 || v.ambiguous > 0 {
                let _ = writeln!(
                    out,
                    "vqa: {} open-ended items need a judge, {} ambiguous replies",
                    v.needs_judge, v.ambiguous
                );
            }
        }
        for e in &self.coverage.errors {
            let _ = writeln!(out, "  {} {}: {}", e.task, e.media, e.message);
        }
        out
    }

    /// Write `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.json", self.to_json()), ("report.txt", self.to_table())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
