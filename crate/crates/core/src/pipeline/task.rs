use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::context::{build_incontext_context, check_context_fits};
use super::media::QueryMedia;
use super::templates::{
    render, PromptTemplateSet, PH_CONCEPT, PH_INDEX, PH_MEDIA, PH_QUERY_INDEX, PH_QUERY_INDEX_ALT, PH_QUESTION,
};
use crate::backend::{Backend, GenerationRequest};
use crate::error::{Error, Result};
use crate::memory::{filter_concepts_by_similarity, ConceptLibrary, ConceptMemory};

const TASK_REPLY_TOKENS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Recognition,
    Vqa,
    Captioning,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Recognition => "recognition",
            Task::Vqa => "vqa",
            Task::Captioning => "captioning",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recognition" => Ok(Task::Recognition),
            "vqa" => Ok(Task::Vqa),
            "captioning" => Ok(Task::Captioning),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

pub struct TaskQuery<'a> {
    pub task: Task,
    pub media: QueryMedia,
    pub question: Option<String>,
    pub concepts: Vec<&'a ConceptMemory>,
}

impl TaskQuery<'_> {
    pub fn validate(&self) -> Result<()> {
        match (self.task, &self.question) {
            (Task::Vqa, None) => Err(Error::InvalidArgument("vqa needs a question".into())),
            (Task::Recognition | Task::Captioning, Some(_)) => Err(Error::InvalidArgument(format!(
                "{} does not take a question",
                self.task
            ))),
            _ => Ok(()),
        }
    }
}

/// Parsed presence of one offered concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptVerdict {
    pub name: String,
    pub present: bool,
    /// The reply had no clean yes/no for this concept; `present` is false.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskOutcome {
    Recognition { verdicts: Vec<ConceptVerdict> },
    Vqa { answer: String },
    Captioning { caption: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub raw_text: String,
    pub outcome: TaskOutcome,
    pub offered: Vec<String>,
}

impl TaskResult {
    pub fn verdicts(&self) -> &[ConceptVerdict] {
        match &self.outcome {
            TaskOutcome::Recognition { verdicts } => verdicts,
            _ => &[],
        }
    }

    pub fn answer_text(&self) -> &str {
        match &self.outcome {
            TaskOutcome::Recognition { .. } => &self.raw_text,
            TaskOutcome::Vqa { answer } => answer,
            TaskOutcome::Captioning { caption } => caption,
        }
    }
}

/// Concepts to offer for `media`: the whole library, or the `m` most similar
/// ones (kept in library order) when `filter_m` is set.
pub fn offered_concepts<'a>(
    library: &'a ConceptLibrary,
    media: &QueryMedia,
    filter_m: Option<usize>,
) -> Result<Vec<&'a ConceptMemory>> {
    match filter_m {
        None => Ok(library.iter().collect()),
        Some(m) => {
            let ranked = filter_concepts_by_similarity(library, &media.stacked()?, m)?;
            Ok(library
                .iter()
                .filter(|c| ranked.iter().any(|r| r.name == c.name))
                .collect())
        }
    }
}

pub fn run_task(query: &TaskQuery<'_>, backend: &dyn Backend, templates: &PromptTemplateSet) -> Result<TaskResult> {
    query.validate()?;
    let fingerprint = backend.fingerprint();
    for c in &query.concepts {
        if c.backend_fingerprint != fingerprint {
            return Err(Error::BackendMismatch {
                expected: c.backend_fingerprint.clone(),
                found: fingerprint,
            });
        }
    }
    let offered: Vec<String> = query.concepts.iter().map(|c| c.name.clone()).collect();
    let context = build_incontext_context(&query.concepts, templates, &query.media);
    let query_index = (query.concepts.len() + 1).to_string();
    let base_vars = [
        (PH_QUERY_INDEX, query_index.as_str()),
        (PH_QUERY_INDEX_ALT, query_index.as_str()),
        (PH_MEDIA, query.media.noun()),
    ];
    let generate = |instruction: String| -> Result<String> {
        check_context_fits(backend, &context, &instruction)?;
        let request = GenerationRequest::new(context.clone(), instruction).max_new_tokens(TASK_REPLY_TOKENS);
        Ok(backend.generate_with_attention(&request)?.text)
    };

    match query.task {
        Task::Recognition if templates.recognition_per_concept() => {
            let mut raw = Vec::with_capacity(offered.len());
            let mut verdicts = Vec::with_capacity(offered.len());
            for (i, name) in offered.iter().enumerate() {
                let idx = (i + 1).to_string();
                let mut vars = base_vars.to_vec();
                vars.extend([(PH_CONCEPT, name.as_str()), (PH_INDEX, idx.as_str())]);
                let text = generate(render(&templates.recognition, &vars))?;
                let (present, flagged) = match final_answer(&text) {
                    Some(yes) => (yes, false),
                    None => (false, true),
                };
                verdicts.push(ConceptVerdict {
                    name: name.clone(),
                    present,
                    flagged,
                });
                raw.push(text);
            }
            Ok(TaskResult {
                raw_text: raw.join("\n"),
                outcome: TaskOutcome::Recognition { verdicts },
                offered,
            })
        }
        Task::Recognition => {
            let text = generate(render(&templates.recognition, &base_vars))?;
            let verdicts = parse_recognition(&text, &offered);
            Ok(TaskResult {
                raw_text: text,
                outcome: TaskOutcome::Recognition { verdicts },
                offered,
            })
        }
        Task::Vqa => {
            let question = query.question.as_deref().unwrap_or_default();
            let mut vars = base_vars.to_vec();
            vars.push((PH_QUESTION, question));
            let text = generate(render(&templates.vqa, &vars))?;
            Ok(TaskResult {
                outcome: TaskOutcome::Vqa { answer: text.clone() },
                raw_text: text,
                offered,
            })
        }
        Task::Captioning => {
            let text = generate(render(&templates.captioning, &base_vars))?;
            Ok(TaskResult {
                outcome: TaskOutcome::Captioning { caption: text.clone() },
                raw_text: text,
                offered,
            })
        }
    }
}

static FINAL_ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)final\s+answer\s*:\s*\[?\s*(yes|no)\b").unwrap());

fn yes_no(value: &str) -> Option<bool> {
    let v = value
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase();
    match v.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// "Final Answer: yes/no" anywhere in the reply, or a bare yes/no reply.
fn final_answer(text: &str) -> Option<bool> {
    FINAL_ANSWER
        .captures(text)
        .map(|c| c[1].eq_ignore_ascii_case("yes"))
        .or_else(|| yes_no(text))
}

/// Read `name: yes/no` lines, one verdict per offered concept in offered
/// order. Case and surrounding punctuation are ignored; the first line
/// naming a concept wins. A concept without a clean yes/no is a flagged "no".
pub fn parse_recognition(text: &str, offered: &[String]) -> Vec<ConceptVerdict> {
    let lines: Vec<(String, String)> = text
        .lines()
        .filter_map(|line| {
            let line = line.trim().trim_start_matches(['-', '*', '•', ' ']);
            let (name, value) = line.rsplit_once(':')?;
            let name = name.trim().trim_matches(|c: char| c == '*' || c == '`' || c.is_whitespace());
            Some((name.to_lowercase(), value.to_string()))
        })
        .collect();
    offered
        .iter()
        .map(|name| {
            let key = name.to_lowercase();
            let found = lines.iter().find(|(n, _)| *n == key).map(|(_, v)| yes_no(v));
            let answer = match found {
                Some(answer) => answer,
                None if offered.len() == 1 => final_answer(text),
                None => None,
            };
            ConceptVerdict {
                name: name.clone(),
                present: answer.unwrap_or(false),
                flagged: answer.is_none(),
            }
        })
        .collect()
}
