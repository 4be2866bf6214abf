use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TEMPLATES: &str = include_str!("../../templates/default.toml");

pub const PH_INDEX: &str = "<i>";
pub const PH_CONCEPT: &str = "<c>";
pub const PH_MEMORY: &str = "<memory>";
pub const PH_QUERY_INDEX: &str = "<I+1>";
pub const PH_QUERY_INDEX_ALT: &str = "<N+1>";
pub const PH_MEDIA: &str = "{media}";
pub const PH_QUESTION: &str = "{question}";
pub const PH_ANSWER: &str = "{answer}";
pub const PH_PRED: &str = "{pred}";

/// Every prompt the engine sends to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplateSet {
    pub size_estimation: String,
    pub keyword_generation: String,
    pub in_context_concept: String,
    /// With `{media}` one reply covers all concepts; with `<c>` the model is
    /// asked once per concept.
    pub recognition: String,
    pub vqa: String,
    pub captioning: String,
    pub judge: String,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TEMPLATES).expect("shipped templates are valid")
    }
}

impl PromptTemplateSet {
    pub fn from_toml(text: &str) -> Result<Self> {
        let set: Self = toml::from_str(text).map_err(|e| Error::Format(format!("template set: {e}")))?;
        set.validate()?;
        Ok(set)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let need = |name: &str, template: &str, placeholders: &[&str]| -> Result<()> {
            for ph in placeholders {
                if !template.contains(ph) {
                    return Err(Error::Format(format!("template `{name}` lacks placeholder {ph}")));
                }
            }
            Ok(())
        };
        need("in_context_concept", &self.in_context_concept, &[PH_CONCEPT, PH_MEMORY])?;
        if self.in_context_concept.matches(PH_MEMORY).count() != 1 {
            return Err(Error::Format("template `in_context_concept` must contain <memory> once".into()));
        }
        need("vqa", &self.vqa, &[PH_QUESTION])?;
        need("judge", &self.judge, &[PH_QUESTION, PH_ANSWER, PH_PRED])?;
        if !self.recognition.contains(PH_MEDIA) && !self.recognition.contains(PH_CONCEPT) {
            return Err(Error::Format(
                "template `recognition` needs {media} or <c>".into(),
            ));
        }
        for (name, t) in [
            ("size_estimation", &self.size_estimation),
            ("keyword_generation", &self.keyword_generation),
            ("captioning", &self.captioning),
        ] {
            if t.trim().is_empty() {
                return Err(Error::Format(format!("template `{name}` is empty")));
            }
        }
        Ok(())
    }

    pub fn recognition_per_concept(&self) -> bool {
        self.recognition.contains(PH_CONCEPT)
    }

    /// Text before and after `<memory>` for the concept at 0-based `index`.
    pub fn concept_prompt(&self, index: usize, name: &str) -> (String, String) {
        let idx = (index + 1).to_string();
        let (before, after) = self
            .in_context_concept
            .split_once(PH_MEMORY)
            .expect("validated template");
        let vars = [(PH_INDEX, idx.as_str()), (PH_CONCEPT, name)];
        (render(before, &vars), render(after, &vars))
    }
}

/// Substitute placeholders in one pass; substituted text is never rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        let next = vars
            .iter()
            .filter_map(|(k, v)| rest.find(k).map(|at| (at, *k, *v)))
            .min_by_key(|(at, k, _)| (*at, std::cmp::Reverse(k.len())));
        match next {
            Some((at, key, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + key.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_and_render() {
        let t = PromptTemplateSet::default();
        let (before, after) = t.concept_prompt(0, "my-mug");
        assert_eq!(before, "Image 1 shows the entity my-mug. Image 1: ");
        assert_eq!(after, "");
        assert!(t.size_estimation.ends_with("If you can not answer, say 0"));
        assert!(t.judge.starts_with("You are an intelligent chatbot"));
        assert!(t.judge.ends_with("EXPLANATION."));
        assert!(!t.recognition_per_concept());
    }

    #[test]
    fn qwen_variant_is_per_concept() {
        let t = PromptTemplateSet::from_toml(include_str!("../../templates/qwen2.5-vl.toml")).unwrap();
        assert!(t.recognition_per_concept());
        assert_eq!(t.in_context_concept, PromptTemplateSet::default().in_context_concept);
    }

    #[test]
    fn render_is_single_pass() {
        let s = render("<c> and <i>", &[("<c>", "<i>"), ("<i>", "2")]);
        assert_eq!(s, "<i> and 2");
    }

    #[test]
    fn missing_placeholder_rejected() {
        let t = PromptTemplateSet {
            vqa: "Answer something".into(),
            ..PromptTemplateSet::default()
        };
        assert!(t.validate().is_err());
        let text = toml::to_string(&t).unwrap();
        assert!(PromptTemplateSet::from_toml(&text).is_err());
    }
}
