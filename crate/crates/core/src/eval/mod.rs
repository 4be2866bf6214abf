//! Recognition, multi-concept, VQA and captioning protocols over dataset manifests.

mod harness;
mod judge;
mod manifest;
mod matching;
mod metrics;
mod report;

pub use harness::{
    captioning_recall, enroll_manifest, multi_concept_protocol, recognition_protocol, vqa_accuracy, CaptionOutcome,
    Coverage, EnrollSettings, EvalTask, Evaluator, ItemError, RecognitionOutcome, VqaOutcome,
};
pub use judge::{judge_answer, ChatCompletionJudge, Judge, ScriptedJudge, DEFAULT_JUDGE_MODEL};
pub use manifest::{
    CaptionItem, ConceptEntry, DatasetManifest, MediaRef, PairItem, Queries, RecognitionItem, VqaItem,
    DATASET_MANIFEST_VERSION,
};
pub use matching::{caption_hit, contains_phrase, match_answer, normalize, ChoiceMatch};
pub use metrics::{f1, mean_of_f1, ratio, ConfusionCounts, PrfSummary};
pub use report::{evaluate, CaptionGroup, CaptionReport, ConceptMetrics, EvalReport, RecognitionReport, VqaReport, REPORT_VERSION};
