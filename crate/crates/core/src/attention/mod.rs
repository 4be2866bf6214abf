//! Pure numerical kernels: softmax attention, cross-modal attention
//! extraction, per-token importance and order-preserving top-K selection.
//!
//! Everything here is a pure function over immutable inputs. Accumulation
//! happens in `f64`; stored outputs are `f32`.

mod importance;
mod keywords;
mod kernel;
mod select;
mod stack;

pub use importance::{importance_scores, importance_scores_with, ImportanceReduction, ImportanceVector};
pub use keywords::{filter_keyword_tokens, is_separator_token, DecodedToken, KeywordSpan};
pub use kernel::{attention_from_logits, scaled_dot_attention};
pub use select::{select_indices, select_top_tokens, top_k_indices, uniform_indices, SelectionResult};
pub use stack::{extract_cross_attention, AttentionStack, CapturedAttention, ROW_SUM_TOLERANCE};
