use serde::{Deserialize, Serialize};

use super::sizing::SizeEstimate;
use crate::attention::SelectionResult;
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

/// Where one block of a concept memory came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewProvenance {
    pub view_id: String,
    pub k_c: usize,
    pub alpha: f64,
    pub indices: Vec<usize>,
    pub keywords: Vec<String>,
}

/// Selected visual tokens of every reference view, stacked view by view.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMemory {
    pub name: String,
    pub tokens: TokenMatrix,
    pub views: Vec<ViewProvenance>,
    pub backend_fingerprint: String,
}

impl ConceptMemory {
    pub fn dim(&self) -> usize {
        self.tokens.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidArgument("concept name is empty".into()));
        }
        let total: usize = self.views.iter().map(|v| v.k_c).sum();
        if total != self.tokens.rows() {
            return Err(Error::Contract(format!(
                "concept `{}` has {} rows but views account for {total}",
                self.name,
                self.tokens.rows()
            )));
        }
        for v in &self.views {
            if v.indices.len() != v.k_c || v.indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!(
                    "view `{}` of `{}` has inconsistent kept indices",
                    v.view_id, self.name
                )));
            }
        }
        Ok(())
    }
}

/// One reference view ready to be folded into a memory.
pub struct ViewInput<'a> {
    pub view_id: String,
    pub source: &'a TokenMatrix,
    pub selection: SelectionResult,
    pub size: SizeEstimate,
    pub keywords: Vec<String>,
}

pub fn build_concept_memory(
    name: &str,
    views: Vec<ViewInput<'_>>,
    backend_fingerprint: &str,
) -> Result<ConceptMemory> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidArgument("a concept needs at least one view".into()))?;
    let dim = first.source.dim();
    let mut blocks = Vec::with_capacity(views.len());
    let mut provenance = Vec::with_capacity(views.len());
    for view in &views {
        if view.source.dim() != dim || view.selection.tokens.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "view `{}` has dim {}, expected {dim}",
                view.view_id,
                view.source.dim()
            )));
        }
        let sel = &view.selection;
        if sel.indices.windows(2).any(|w| w[0] >= w[1]) || sel.tokens.rows() != sel.indices.len() {
            return Err(Error::Contract(format!("view `{}` selection is not ascending", view.view_id)));
        }
        for (i, &idx) in sel.indices.iter().enumerate() {
            if idx >= view.source.rows() || sel.tokens.row(i) != view.source.row(idx) {
                return Err(Error::Contract(format!(
                    "view `{}` selection row {i} does not match source row {idx}",
                    view.view_id
                )));
            }
        }
        blocks.push(&sel.tokens);
        provenance.push(ViewProvenance {
            view_id: view.view_id.clone(),
            k_c: sel.indices.len(),
            alpha: view.size.alpha(),
            indices: sel.indices.clone(),
            keywords: view.keywords.clone(),
        });
    }
    let memory = ConceptMemory {
        name: name.to_string(),
        tokens: TokenMatrix::vstack(dim, &blocks)?,
        views: provenance,
        backend_fingerprint: backend_fingerprint.to_string(),
    };
    memory.validate()?;
    Ok(memory)
}

/// Ordered set of concept memories sharing one embedding space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConceptLibrary {
    concepts: Vec<ConceptMemory>,
}

impl ConceptLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_concepts(concepts: Vec<ConceptMemory>) -> Result<Self> {
        let mut lib = Self::new();
        for c in concepts {
            lib.insert(c)?;
        }
        Ok(lib)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &ConceptMemory> {
        self.concepts.iter()
    }

    pub fn concepts(&self) -> &[ConceptMemory] {
        &self.concepts
    }

    pub fn get(&self, name: &str) -> Option<&ConceptMemory> {
        self.concepts.iter().find(|c| c.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn dim(&self) -> Option<usize> {
        self.concepts.first().map(|c| c.dim())
    }

    pub fn backend_fingerprint(&self) -> Option<&str> {
        self.concepts.first().map(|c| c.backend_fingerprint.as_str())
    }

    /// Fail unless memories in this library can be used with `fingerprint`.
    pub fn check_backend(&self, fingerprint: &str) -> Result<()> {
        match self.backend_fingerprint() {
            Some(fp) if fp != fingerprint => Err(Error::BackendMismatch {
                expected: fp.to_string(),
                found: fingerprint.to_string(),
            }),
            _ => Ok(()),
        }
    }

    pub fn insert(&mut self, memory: ConceptMemory) -> Result<()> {
        memory.validate()?;
        if self.contains(&memory.name) {
            return Err(Error::DuplicateConcept(memory.name));
        }
        if let Some(dim) = self.dim() {
            if dim != memory.dim() {
                return Err(Error::InvalidArgument(format!(
                    "concept `{}` has dim {}, library has {dim}",
                    memory.name,
                    memory.dim()
                )));
            }
        }
        self.check_backend(&memory.backend_fingerprint)?;
        self.concepts.push(memory);
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<ConceptMemory> {
        let i = self.concepts.iter().position(|c| c.name == name)?;
        Some(self.concepts.remove(i))
    }
}
