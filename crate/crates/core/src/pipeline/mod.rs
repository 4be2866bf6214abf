//! Enrollment of concepts from reference views and personalized inference.

mod context;
mod enroll;
mod media;
mod task;
mod templates;

pub use context::{build_incontext_context, check_context_fits};
pub use enroll::{
    build_memory, describe_view, enroll, estimate_size, EnrollmentRequest, EnrollmentView, SelectionStrategy,
    ViewDescription,
};
pub use media::{QueryMedia, VisualInput};
pub use task::{
    offered_concepts, parse_recognition, run_task, ConceptVerdict, Task, TaskOutcome, TaskQuery, TaskResult,
};
pub use templates::{render, PromptTemplateSet};
