use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_MANIFEST_VERSION: u32 = 1;

/// A single image path or video frame paths, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MediaRef {
    Image(String),
    Frames(Vec<String>),
}

impl MediaRef {
    pub fn paths(&self) -> Vec<&str> {
        match self {
            MediaRef::Image(p) => vec![p.as_str()],
            MediaRef::Frames(f) => f.iter().map(String::as_str).collect(),
        }
    }

    pub fn label(&self) -> String {
        self.paths().join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub name: String,
    pub reference_views: Vec<String>,
}

/// Recognition query: `concepts` lists the concepts that appear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognitionItem {
    pub media: MediaRef,
    #[serde(default)]
    pub concepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairItem {
    pub media: MediaRef,
    pub pair: Vec<String>,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaItem {
    pub media: MediaRef,
    #[serde(default)]
    pub concepts: Vec<String>,
    pub question: String,
    /// Gold choice letter, gold choice text, or free-text answer.
    pub answer: String,
    /// Options in letter order (A, B, ...). Empty for free-text questions.
    #[serde(default)]
    pub choices: Vec<String>,
    #[serde(default)]
    pub open_ended: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionItem {
    pub media: MediaRef,
    pub concepts: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Queries {
    #[serde(default)]
    pub recognition: Vec<RecognitionItem>,
    #[serde(default)]
    pub multi_concept: Vec<PairItem>,
    #[serde(default)]
    pub vqa: Vec<VqaItem>,
    #[serde(default)]
    pub captioning: Vec<CaptionItem>,
}

/// Evaluation dataset: concepts with reference views and per-task queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub concepts: Vec<ConceptEntry>,
    #[serde(default)]
    pub queries: Queries,
    /// Directory media paths are relative to; set by [`DatasetManifest::read`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let mut manifest: Self =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate().map_err(|e| match e {
            Error::Manifest(m) => Error::Manifest(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(manifest)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    pub fn concept_names(&self) -> Vec<&str> {
        self.concepts.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != DATASET_MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported manifest version {}", self.version)));
        }
        let mut names = BTreeSet::new();
        let mut reference = BTreeSet::new();
        for c in &self.concepts {
            if c.name.trim().is_empty() {
                return Err(Error::Manifest("concept with an empty name".into()));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Manifest(format!("concept `{}` listed twice", c.name)));
            }
            if c.reference_views.is_empty() {
                return Err(Error::Manifest(format!("concept `{}` has no reference views", c.name)));
            }
            reference.extend(c.reference_views.iter().map(String::as_str));
        }
        let known = |list: &[String], what: &str| -> Result<()> {
            match list.iter().find(|n| !names.contains(n.as_str())) {
                Some(n) => Err(Error::Manifest(format!("{what} names unknown concept `{n}`"))),
                None => Ok(()),
            }
        };
        let q = &self.queries;
        let mut media: Vec<&MediaRef> = Vec::new();
        for item in &q.recognition {
            known(&item.concepts, "recognition query")?;
            media.push(&item.media);
        }
        for item in &q.multi_concept {
            if item.pair.len() < 2 {
                return Err(Error::Manifest("multi-concept query needs at least two concepts".into()));
            }
            known(&item.pair, "multi-concept query")?;
            media.push(&item.media);
        }
        for item in &q.vqa {
            known(&item.concepts, "vqa query")?;
            if item.question.trim().is_empty() || item.answer.trim().is_empty() {
                return Err(Error::Manifest("vqa query needs a question and an answer".into()));
            }
            media.push(&item.media);
        }
        for item in &q.captioning {
            if item.concepts.is_empty() {
                return Err(Error::Manifest("captioning query names no concept".into()));
            }
            known(&item.concepts, "captioning query")?;
            media.push(&item.media);
        }
        for m in media {
            if m.paths().is_empty() {
                return Err(Error::Manifest("query with no media".into()));
            }
            if let Some(p) = m.paths().into_iter().find(|p| reference.contains(p)) {
                return Err(Error::Manifest(format!("`{p}` is both a reference view and a query")));
            }
        }
        Ok(())
    }
}
