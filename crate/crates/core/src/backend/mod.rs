//! The model runtime contract and its shipped implementations.
//!
//! A backend turns images into visual tokens and generates text from an
//! ordered context of text and visual-token segments, optionally recording
//! the attention rows of every generated token at the requested layers.

mod adapter;
mod encoder;
mod image;
mod rng;
mod scripted;
mod tensor_io;
mod toy;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adapter::{
    write_json_atomic, AdapterBackend, AdapterCapabilities, AdapterRequest, AdapterResponse, ContextItem, ErrorEnvelope,
    RequestBody, ResponseBody, SessionLayout, ADAPTER_PROTOCOL_VERSION,
};
pub use encoder::PatchEncoder;
pub use image::ToyImage;
pub use rng::SplitMix64;
pub use scripted::{
    AttentionProbe, AttentionSpec, AttentionSynth, CosineResponder, Reply, ReplySpec, SaliencyAttention, ScriptFile,
    ScriptFileRule, ScriptRule, ScriptedBackend, UniformAttention,
};
pub use tensor_io::{read_raw_floats, read_raw_tensor, write_raw_tensor, TensorEntry, TensorManifest};
pub use toy::{QueryKeyProbe, ToyBackend};

use crate::attention::{CapturedAttention, DecodedToken};
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

/// Shape and seed of a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub head_dim: usize,
    /// `(rows, cols)`; one visual token per patch.
    pub patch_grid: (usize, usize),
    pub vocab_size: usize,
    pub max_context: usize,
    pub seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 2,
            dim: 16,
            head_dim: 8,
            patch_grid: (8, 8),
            vocab_size: 256,
            max_context: 2048,
            seed: 0,
        }
    }
}

impl BackendConfig {
    pub fn n_r(&self) -> usize {
        self.patch_grid.0 * self.patch_grid.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 {
            return Err(Error::InvalidArgument(
                "layers, heads and head_dim must be positive".into(),
            ));
        }
        if self.dim != self.heads * self.head_dim {
            return Err(Error::InvalidArgument(format!(
                "dim {} != heads {} x head_dim {}",
                self.dim, self.heads, self.head_dim
            )));
        }
        if self.n_r() == 0 {
            return Err(Error::InvalidArgument("patch grid must be non-empty".into()));
        }
        if self.max_context < self.n_r() + 64 {
            return Err(Error::InvalidArgument(format!(
                "max_context {} must be at least N_r + 64 = {}",
                self.max_context,
                self.n_r() + 64
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be positive".into()));
        }
        Ok(())
    }

    /// Stable identifier of the embedding space produced under this config.
    pub fn fingerprint(&self, backend_kind: &str) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(format!("{backend_kind}|{canonical}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One piece of model context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ContextSegment {
    Text(String),
    VisualTokens(TokenMatrix),
}

impl ContextSegment {
    pub fn kind(&self) -> SegmentKind {
        match self {
            ContextSegment::Text(_) => SegmentKind::Text,
            ContextSegment::VisualTokens(_) => SegmentKind::VisualTokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Text,
    VisualTokens,
    Instruction,
}

/// Position interval occupied by one context segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub kind: SegmentKind,
    pub start: usize,
    pub len: usize,
}

impl SegmentSpan {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub context: Vec<ContextSegment>,
    pub instruction: String,
    pub capture_layers: Vec<usize>,
    pub max_new_tokens: usize,
    pub deterministic: bool,
}

impl GenerationRequest {
    pub fn new(context: Vec<ContextSegment>, instruction: impl Into<String>) -> Self {
        Self {
            context,
            instruction: instruction.into(),
            capture_layers: Vec::new(),
            max_new_tokens: 64,
            deterministic: true,
        }
    }

    pub fn capture(mut self, layers: &[usize]) -> Self {
        self.capture_layers = layers.to_vec();
        self
    }

    pub fn max_new_tokens(mut self, n: usize) -> Self {
        self.max_new_tokens = n;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub generated: Vec<DecodedToken>,
    pub text: String,
    pub attention: CapturedAttention,
    /// One span per context segment, then the instruction. Disjoint,
    /// contiguous, starting at 0.
    pub segments: Vec<SegmentSpan>,
    pub prefix_len: usize,
}

impl GenerationTrace {
    /// Span of the `n`-th visual segment of the context.
    pub fn visual_span(&self, n: usize) -> Option<SegmentSpan> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::VisualTokens)
            .nth(n)
            .copied()
    }
}

/// Runtime contract every model backend satisfies.
pub trait Backend: Send + Sync {
    fn config(&self) -> &BackendConfig;

    /// Identifies the embedding space; memories from different
    /// fingerprints never mix.
    fn fingerprint(&self) -> String;

    fn encode_image(&self, image: &ToyImage) -> Result<TokenMatrix>;

    /// Encode an image file. The default reads the toy image format.
    fn encode_file(&self, path: &Path) -> Result<TokenMatrix> {
        self.encode_image(&ToyImage::read(path)?)
    }

    fn count_text_tokens(&self, text: &str) -> usize {
        text.len()
    }

    fn generate_with_attention(&self, request: &GenerationRequest) -> Result<GenerationTrace>;

    /// Whether `generate_with_attention` may be called from several threads at once.
    fn supports_concurrent_calls(&self) -> bool {
        true
    }
}

/// Lay out context segments and the instruction, enforcing the context limit.
pub fn layout_context(
    backend: &dyn Backend,
    context: &[ContextSegment],
    instruction: &str,
) -> Result<Vec<SegmentSpan>> {
    let mut spans = Vec::with_capacity(context.len() + 1);
    let mut cursor = 0;
    for seg in context {
        let len = match seg {
            ContextSegment::Text(t) => backend.count_text_tokens(t),
            ContextSegment::VisualTokens(m) => {
                if m.dim() != backend.config().dim {
                    return Err(Error::Contract(format!(
                        "visual segment dim {} != backend dim {}",
                        m.dim(),
                        backend.config().dim
                    )));
                }
                m.rows()
            }
        };
        spans.push(SegmentSpan {
            kind: seg.kind(),
            start: cursor,
            len,
        });
        cursor += len;
    }
    let len = backend.count_text_tokens(instruction);
    spans.push(SegmentSpan {
        kind: SegmentKind::Instruction,
        start: cursor,
        len,
    });
    cursor += len;
    let limit = backend.config().max_context;
    if cursor > limit {
        return Err(Error::ContextLimit {
            used: cursor,
            limit,
            overflow: cursor - limit,
        });
    }
    Ok(spans)
}
