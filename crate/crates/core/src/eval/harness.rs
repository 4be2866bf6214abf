use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::judge::{judge_answer, Judge};
use super::manifest::{DatasetManifest, MediaRef};
use super::matching::{caption_hit, match_answer, ChoiceMatch};
use super::metrics::ConfusionCounts;
use crate::attention::ImportanceReduction;
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::memory::{ConceptLibrary, MemoryBudget};
use crate::pipeline::{
    build_memory, offered_concepts, run_task, EnrollmentRequest, EnrollmentView, PromptTemplateSet, QueryMedia,
    SelectionStrategy, Task, TaskQuery, TaskResult, VisualInput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Recognition,
    MultiConcept,
    Vqa,
    Captioning,
}

impl EvalTask {
    pub const ALL: [EvalTask; 4] = [
        EvalTask::Recognition,
        EvalTask::MultiConcept,
        EvalTask::Vqa,
        EvalTask::Captioning,
    ];
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalTask::Recognition => "recognition",
            EvalTask::MultiConcept => "multi-concept",
            EvalTask::Vqa => "vqa",
            EvalTask::Captioning => "captioning",
        })
    }
}

impl FromStr for EvalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recognition" => Ok(EvalTask::Recognition),
            "multi-concept" | "multi_concept" => Ok(EvalTask::MultiConcept),
            "vqa" => Ok(EvalTask::Vqa),
            "captioning" => Ok(EvalTask::Captioning),
            other => Err(Error::InvalidArgument(format!("unknown eval task `{other}`"))),
        }
    }
}

/// A query that could not be evaluated because its media failed to load.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemError {
    pub task: EvalTask,
    pub media: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub total: usize,
    pub evaluated: usize,
    pub errors: Vec<ItemError>,
}

impl Coverage {
    fn absorb<T>(&mut self, results: Vec<Outcome<T>>) -> Vec<T> {
        self.total += results.len();
        let mut ok = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Outcome::Done(v) => ok.push(v),
                Outcome::LoadFailed(e) => self.errors.push(e),
            }
        }
        self.evaluated += ok.len();
        self.errors.sort();
        ok
    }
}

enum Outcome<T> {
    Done(T),
    LoadFailed(ItemError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognitionOutcome {
    /// Keyed by concept name (or `A+B` for pairs).
    pub counts: BTreeMap<String, ConfusionCounts>,
    pub flagged: usize,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaOutcome {
    pub correct: usize,
    /// Items that received a verdict.
    pub scored: usize,
    pub needs_judge: usize,
    pub ambiguous: usize,
    pub coverage: Coverage,
}

impl VqaOutcome {
    pub fn accuracy(&self) -> f64 {
        super::metrics::ratio(self.correct as u64, self.scored as u64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionOutcome {
    /// `(hits, total)` per concept group, keyed `A` or `A+B`.
    pub groups: BTreeMap<String, (usize, usize)>,
    pub coverage: Coverage,
}

impl CaptionOutcome {
    /// Hit rate averaged over concept groups.
    pub fn recall(&self) -> f64 {
        if self.groups.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .groups
            .values()
            .map(|&(h, t)| super::metrics::ratio(h as u64, t as u64))
            .sum();
        sum / self.groups.len() as f64
    }
}

/// Runs tasks for the protocols: one backend, one library, one template set.
pub struct Evaluator<'a> {
    pub backend: &'a dyn Backend,
    pub templates: &'a PromptTemplateSet,
    pub library: &'a ConceptLibrary,
    pub judge: Option<&'a dyn Judge>,
    pub filter_m: Option<usize>,
    /// Worker threads for query evaluation; 1 runs in the calling thread.
    pub jobs: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(backend: &'a dyn Backend, templates: &'a PromptTemplateSet, library: &'a ConceptLibrary) -> Self {
        Self {
            backend,
            templates,
            library,
            judge: None,
            filter_m: None,
            jobs: 1,
        }
    }

    fn check_library(&self, manifest: &DatasetManifest) -> Result<()> {
        match manifest.concept_names().into_iter().find(|n| !self.library.contains(n)) {
            Some(n) => Err(Error::Manifest(format!("library has no memory for concept `{n}`"))),
            None => Ok(()),
        }
    }

    fn map_items<'t, T, R, F>(&self, items: &'t [T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&'t T) -> Result<R> + Sync + Send,
    {
        if self.jobs > 1 && self.backend.supports_concurrent_calls() && items.len() > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            pool.install(|| items.par_iter().map(&f).collect())
        } else {
            items.iter().map(f).collect()
        }
    }

    fn load_media(&self, manifest: &DatasetManifest, media: &MediaRef, task: EvalTask) -> Result<Outcome<QueryMedia>> {
        let inputs: Vec<VisualInput> = media
            .paths()
            .into_iter()
            .map(|p| VisualInput::File(manifest.resolve(p)))
            .collect();
        match QueryMedia::load(&inputs, self.backend) {
            Ok(m) => Ok(Outcome::Done(m)),
            Err(e @ (Error::Io { .. } | Error::Format(_))) => Ok(Outcome::LoadFailed(ItemError {
                task,
                media: media.label(),
                message: e.to_string(),
            })),
            Err(e) => Err(e),
        }
    }

    fn ask(&self, media: QueryMedia, task: Task, question: Option<&str>) -> Result<TaskResult> {
        let concepts = offered_concepts(self.library, &media, self.filter_m)?;
        let query = TaskQuery {
            task,
            media,
            question: question.map(str::to_string),
            concepts,
        };
        run_task(&query, self.backend, self.templates)
    }

    fn present(result: &TaskResult, name: &str) -> bool {
        result.verdicts().iter().any(|v| v.name == name && v.present)
    }

    fn flagged(result: &TaskResult) -> usize {
        result.verdicts().iter().filter(|v| v.flagged).count()
    }
}

/// Every recognition image against every manifest concept.
pub fn recognition_protocol(manifest: &DatasetManifest, ev: &Evaluator<'_>) -> Result<RecognitionOutcome> {
    ev.check_library(manifest)?;
    let results = ev.map_items(&manifest.queries.recognition, |item| {
        Ok(match ev.load_media(manifest, &item.media, EvalTask::Recognition)? {
            Outcome::Done(media) => Outcome::Done((item, ev.ask(media, Task::Recognition, None)?)),
            Outcome::LoadFailed(e) => Outcome::LoadFailed(e),
        })
    })?;
    let mut out = RecognitionOutcome::default();
    for name in manifest.concept_names() {
        out.counts.insert(name.to_string(), ConfusionCounts::default());
    }
    for (item, result) in out.coverage.absorb(results) {
        out.flagged += Evaluator::flagged(&result);
        for (name, counts) in out.counts.iter_mut() {
            counts.record(item.concepts.contains(name), Evaluator::present(&result, name));
        }
    }
    Ok(out)
}

/// Pair queries: a hit needs every concept of the pair predicted present.
pub fn multi_concept_protocol(manifest: &DatasetManifest, ev: &Evaluator<'_>) -> Result<RecognitionOutcome> {
    ev.check_library(manifest)?;
    let results = ev.map_items(&manifest.queries.multi_concept, |item| {
        Ok(match ev.load_media(manifest, &item.media, EvalTask::MultiConcept)? {
            Outcome::Done(media) => Outcome::Done((item, ev.ask(media, Task::Recognition, None)?)),
            Outcome::LoadFailed(e) => Outcome::LoadFailed(e),
        })
    })?;
    let mut out = RecognitionOutcome::default();
    for item in &manifest.queries.multi_concept {
        out.counts.entry(item.pair.join("+")).or_default();
    }
    for (item, result) in out.coverage.absorb(results) {
        out.flagged += Evaluator::flagged(&result);
        let predicted = item.pair.iter().all(|n| Evaluator::present(&result, n));
        out.counts
            .get_mut(&item.pair.join("+"))
            .expect("pair registered")
            .record(item.positive, predicted);
    }
    Ok(out)
}

pub fn vqa_accuracy(manifest: &DatasetManifest, ev: &Evaluator<'_>) -> Result<VqaOutcome> {
    ev.check_library(manifest)?;
    #[derive(Clone, Copy)]
    enum Verdict {
        Correct,
        Wrong,
        Ambiguous,
        NeedsJudge,
    }
    let results = ev.map_items(&manifest.queries.vqa, |item| {
        let media = match ev.load_media(manifest, &item.media, EvalTask::Vqa)? {
            Outcome::Done(m) => m,
            Outcome::LoadFailed(e) => return Ok(Outcome::LoadFailed(e)),
        };
        if item.open_ended && ev.judge.is_none() {
            return Ok(Outcome::Done(Verdict::NeedsJudge));
        }
        let result = ev.ask(media, Task::Vqa, Some(&item.question))?;
        let answer = result.answer_text();
        let verdict = match ev.judge {
            Some(judge) if item.open_ended => {
                if judge_answer(judge, ev.templates, &item.question, &item.answer, answer)? {
                    Verdict::Correct
                } else {
                    Verdict::Wrong
                }
            }
            _ => match match_answer(answer, &item.answer, &item.choices) {
                ChoiceMatch::Correct => Verdict::Correct,
                ChoiceMatch::Wrong => Verdict::Wrong,
                ChoiceMatch::Ambiguous => Verdict::Ambiguous,
            },
        };
        Ok(Outcome::Done(verdict))
    })?;
    let mut out = VqaOutcome::default();
    for v in out.coverage.absorb(results) {
        match v {
            Verdict::NeedsJudge => out.needs_judge += 1,
            Verdict::Correct => {
                out.correct += 1;
                out.scored += 1;
            }
            Verdict::Wrong => out.scored += 1,
            Verdict::Ambiguous => {
                out.ambiguous += 1;
                out.scored += 1;
            }
        }
    }
    Ok(out)
}

pub fn captioning_recall(manifest: &DatasetManifest, ev: &Evaluator<'_>) -> Result<CaptionOutcome> {
    ev.check_library(manifest)?;
    let results = ev.map_items(&manifest.queries.captioning, |item| {
        Ok(match ev.load_media(manifest, &item.media, EvalTask::Captioning)? {
            Outcome::Done(media) => {
                let result = ev.ask(media, Task::Captioning, None)?;
                Outcome::Done((item, caption_hit(result.answer_text(), &item.concepts)))
            }
            Outcome::LoadFailed(e) => Outcome::LoadFailed(e),
        })
    })?;
    let mut out = CaptionOutcome::default();
    for item in &manifest.queries.captioning {
        out.groups.entry(item.concepts.join("+")).or_default();
    }
    for (item, hit) in out.coverage.absorb(results) {
        let g = out.groups.get_mut(&item.concepts.join("+")).expect("group registered");
        g.1 += 1;
        if hit {
            g.0 += 1;
        }
    }
    Ok(out)
}

/// How manifest concepts are enrolled before evaluation.
#[derive(Debug, Clone)]
pub struct EnrollSettings {
    pub budget: MemoryBudget,
    pub layers: Vec<usize>,
    /// Use only the first `n` reference views of each concept.
    pub views: Option<usize>,
    pub strategy: SelectionStrategy,
    pub reduction: ImportanceReduction,
}

impl EnrollSettings {
    pub fn new(layers: Vec<usize>) -> Self {
        Self {
            budget: MemoryBudget::default(),
            layers,
            views: None,
            strategy: SelectionStrategy::Attention,
            reduction: ImportanceReduction::Mean,
        }
    }
}

/// Enroll every manifest concept from its reference views, in manifest order.
pub fn enroll_manifest(
    manifest: &DatasetManifest,
    backend: &dyn Backend,
    templates: &PromptTemplateSet,
    settings: &EnrollSettings,
    jobs: usize,
) -> Result<ConceptLibrary> {
    let library = ConceptLibrary::new();
    let ev = Evaluator {
        jobs,
        ..Evaluator::new(backend, templates, &library)
    };
    let memories = ev.map_items(&manifest.concepts, |concept| {
        let take = settings.views.unwrap_or(usize::MAX);
        let views = concept
            .reference_views
            .iter()
            .take(take)
            .map(|p| {
                let path = manifest.resolve(p);
                if !path.is_file() {
                    return Err(Error::Manifest(format!("reference view {} not found", path.display())));
                }
                Ok(EnrollmentView {
                    id: p.clone(),
                    input: VisualInput::File(path),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let request = EnrollmentRequest {
            reduction: settings.reduction,
            strategy: settings.strategy,
            ..EnrollmentRequest::new(&concept.name, views, settings.budget, settings.layers.clone())
        };
        build_memory(&request, backend, templates)
    })?;
    ConceptLibrary::from_concepts(memories)
}
