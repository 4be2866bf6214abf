use serde::{Deserialize, Serialize};

use super::media::VisualInput;
use super::templates::PromptTemplateSet;
use crate::attention::{
    extract_cross_attention, filter_keyword_tokens, importance_scores_with, select_indices, select_top_tokens,
    uniform_indices, AttentionStack, ImportanceReduction, KeywordSpan, SelectionResult,
};
use crate::backend::{Backend, ContextSegment, GenerationRequest};
use crate::error::{Error, Result};
use crate::memory::{
    build_concept_memory, dynamic_k, parse_size_reply, ConceptLibrary, ConceptMemory, MemoryBudget, SizeEstimate,
    ViewInput,
};
use crate::tensor::TokenMatrix;

const SIZE_REPLY_TOKENS: usize = 16;
const KEYWORD_REPLY_TOKENS: usize = 64;

/// How the kept tokens of a view are chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Keyword-to-visual attention importance.
    #[default]
    Attention,
    /// Evenly spaced patches, ignoring content.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct EnrollmentView {
    pub id: String,
    pub input: VisualInput,
}

#[derive(Debug, Clone)]
pub struct EnrollmentRequest {
    pub name: String,
    pub views: Vec<EnrollmentView>,
    pub budget: MemoryBudget,
    pub layers: Vec<usize>,
    pub reduction: ImportanceReduction,
    pub strategy: SelectionStrategy,
}

impl EnrollmentRequest {
    pub fn new(name: impl Into<String>, views: Vec<EnrollmentView>, budget: MemoryBudget, layers: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            views,
            budget,
            layers,
            reduction: ImportanceReduction::Mean,
            strategy: SelectionStrategy::Attention,
        }
    }
}

/// Keyword description of one view with the attention of its keyword tokens.
#[derive(Debug, Clone)]
pub struct ViewDescription {
    pub keywords: KeywordSpan,
    pub stack: AttentionStack,
}

/// Ask for keywords about `tokens` and slice their attention over the
/// visual columns at `layers`. One retry when no keyword survives filtering.
pub fn describe_view(
    backend: &dyn Backend,
    templates: &PromptTemplateSet,
    tokens: &TokenMatrix,
    layers: &[usize],
) -> Result<ViewDescription> {
    check_layers(backend, layers)?;
    let request = GenerationRequest::new(
        vec![ContextSegment::VisualTokens(tokens.clone())],
        templates.keyword_generation.clone(),
    )
    .capture(layers)
    .max_new_tokens(KEYWORD_REPLY_TOKENS);
    let mut attempt = 0;
    let (trace, keywords) = loop {
        let trace = backend.generate_with_attention(&request)?;
        match filter_keyword_tokens(&trace.generated) {
            Ok(span) => break (trace, span),
            Err(Error::EmptyKeywords) if attempt == 0 => attempt += 1,
            Err(e) => return Err(e),
        }
    };
    let visual = trace
        .visual_span(0)
        .ok_or_else(|| Error::Contract("trace has no visual segment".into()))?;
    let stack = extract_cross_attention(&trace.attention, &keywords, visual.range(), layers)?;
    Ok(ViewDescription { keywords, stack })
}

pub fn estimate_size(backend: &dyn Backend, templates: &PromptTemplateSet, tokens: &TokenMatrix) -> Result<SizeEstimate> {
    let request = GenerationRequest::new(
        vec![ContextSegment::VisualTokens(tokens.clone())],
        templates.size_estimation.clone(),
    )
    .max_new_tokens(SIZE_REPLY_TOKENS);
    Ok(parse_size_reply(&backend.generate_with_attention(&request)?.text))
}

fn check_layers(backend: &dyn Backend, layers: &[usize]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("layer set is empty".into()));
    }
    let total = backend.config().layers;
    if let Some(l) = layers.iter().find(|&&l| l >= total) {
        return Err(Error::InvalidArgument(format!("layer {l} out of range (backend has {total})")));
    }
    Ok(())
}

/// Build a concept memory without touching any library.
pub fn build_memory(
    request: &EnrollmentRequest,
    backend: &dyn Backend,
    templates: &PromptTemplateSet,
) -> Result<ConceptMemory> {
    if request.name.trim().is_empty() {
        return Err(Error::InvalidArgument("concept name is empty".into()));
    }
    if request.views.is_empty() {
        return Err(Error::InvalidArgument(format!("concept `{}` has no views", request.name)));
    }
    check_layers(backend, &request.layers)?;
    let enrollment_error = |view: &str, e: Error| match e {
        Error::EmptyKeywords | Error::MissingCapture(_) => Error::Enrollment {
            view: view.to_string(),
            reason: e.to_string(),
        },
        other => other,
    };

    let mut sources = Vec::with_capacity(request.views.len());
    for view in &request.views {
        sources.push(view.input.encode(backend)?);
    }
    let mut inputs = Vec::with_capacity(sources.len());
    for (view, source) in request.views.iter().zip(&sources) {
        let size = estimate_size(backend, templates, source)?;
        let k = dynamic_k(size, source.rows(), &request.budget);
        let description =
            describe_view(backend, templates, source, &request.layers).map_err(|e| enrollment_error(&view.id, e))?;
        let selection: SelectionResult = match request.strategy {
            SelectionStrategy::Attention => {
                let importance = importance_scores_with(&description.stack, request.reduction)?;
                select_top_tokens(source, &importance, k)?
            }
            SelectionStrategy::Uniform => select_indices(source, uniform_indices(source.rows(), k))?,
        };
        inputs.push(ViewInput {
            view_id: view.id.clone(),
            source,
            selection,
            size,
            keywords: description.keywords.decoded_words,
        });
    }
    build_concept_memory(&request.name, inputs, &backend.fingerprint())
}

/// Enroll a concept and insert it into `library`.
pub fn enroll(
    request: &EnrollmentRequest,
    backend: &dyn Backend,
    templates: &PromptTemplateSet,
    library: &mut ConceptLibrary,
) -> Result<ConceptMemory> {
    if library.contains(&request.name) {
        return Err(Error::DuplicateConcept(request.name.clone()));
    }
    library.check_backend(&backend.fingerprint())?;
    let memory = build_memory(request, backend, templates)?;
    library.insert(memory.clone())?;
    Ok(memory)
}
