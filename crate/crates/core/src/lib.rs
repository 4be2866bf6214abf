//! Training-free personalization of vision-language models.
//!
//! A concept is enrolled by asking the model to describe a reference view,
//! scoring every visual token by the attention it receives from the generated
//! keyword tokens, and keeping the highest-scoring tokens as a compact memory.
//! At inference the stored memories are placed in the model context next to
//! the concept names, and the model is asked about the query media.
//!
//! Module map:
//! - [`attention`]: numerical kernels (softmax attention, importance scores, top-K selection)
//! - [`backend`]: the model runtime contract plus a toy transformer, a scripted backend
//!   and a file-session adapter client
//! - [`memory`]: dynamic memory sizing, concept libraries and their on-disk format
//! - [`calibration`]: layer ranking by mask overlap
//! - [`pipeline`]: enrollment and personalized task execution
//! - [`eval`]: recognition / VQA / captioning protocols and reports
//! - [`synthetic`]: planted-signal scenes used by tests and demos

pub mod attention;
pub mod backend;
pub mod calibration;
mod error;
pub mod eval;
pub mod memory;
pub mod pipeline;
pub mod synthetic;
mod tensor;

pub use error::{Error, LibraryError, Result};
pub use tensor::TokenMatrix;
