use super::media::QueryMedia;
use super::templates::PromptTemplateSet;
use crate::backend::{layout_context, Backend, ContextSegment, SegmentSpan};
use crate::error::Result;
use crate::memory::ConceptMemory;

/// Concept prompts with their memories, then the query frames.
///
/// For concept `i` this emits the text before `<memory>`, the memory rows,
/// and the text after `<memory>` when that is non-empty. The instruction is
/// not part of the context; it goes last in the generation request.
pub fn build_incontext_context(
    concepts: &[&ConceptMemory],
    templates: &PromptTemplateSet,
    media: &QueryMedia,
) -> Vec<ContextSegment> {
    let mut segments = Vec::with_capacity(concepts.len() * 2 + media.frames().len());
    for (i, concept) in concepts.iter().enumerate() {
        let (before, after) = templates.concept_prompt(i, &concept.name);
        if !before.is_empty() {
            segments.push(ContextSegment::Text(before));
        }
        segments.push(ContextSegment::VisualTokens(concept.tokens.clone()));
        if !after.is_empty() {
            segments.push(ContextSegment::Text(after));
        }
    }
    for frame in media.frames() {
        segments.push(ContextSegment::VisualTokens(frame.clone()));
    }
    segments
}

/// Lay the context out against the backend's limit, failing with the
/// overflow amount when it does not fit.
pub fn check_context_fits(
    backend: &dyn Backend,
    context: &[ContextSegment],
    instruction: &str,
) -> Result<Vec<SegmentSpan>> {
    layout_context(backend, context, instruction)
}
