//! Backend whose replies come from a script and whose attention rows come
//! from a pluggable synthesizer. Used to force exact keyword/size replies and
//! to plant known attention structure.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::encoder::PatchEncoder;
use super::rng::{derive_seed, SplitMix64};
use super::{
    layout_context, Backend, BackendConfig, ContextSegment, GenerationRequest, GenerationTrace, SegmentSpan,
    ToyImage,
};
use crate::attention::{CapturedAttention, DecodedToken};
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

type ReplyFn = dyn Fn(&GenerationRequest) -> Result<String> + Send + Sync;

#[derive(Clone)]
pub enum Reply {
    Fixed(String),
    Dynamic(Arc<ReplyFn>),
}

impl fmt::Debug for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Fixed(s) => f.debug_tuple("Fixed").field(s).finish(),
            Reply::Dynamic(_) => f.write_str("Dynamic(..)"),
        }
    }
}

/// Instructions containing `pattern` get `reply`.
#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub pattern: String,
    pub reply: Reply,
}

impl ScriptRule {
    pub fn fixed(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            reply: Reply::Fixed(reply.into()),
        }
    }

    pub fn dynamic(
        pattern: impl Into<String>,
        f: impl Fn(&GenerationRequest) -> Result<String> + Send + Sync + 'static,
    ) -> Self {
        Self {
            pattern: pattern.into(),
            reply: Reply::Dynamic(Arc::new(f)),
        }
    }
}

/// Everything a synthesizer may look at when producing one attention row.
pub struct AttentionProbe<'a> {
    pub layer: usize,
    pub head: usize,
    pub step: usize,
    /// Sequence position of the generated token; the row has `position + 1` entries.
    pub position: usize,
    pub request: &'a GenerationRequest,
    pub segments: &'a [SegmentSpan],
    pub token_text: &'a str,
}

pub trait AttentionSynth: Send + Sync {
    fn row(&self, probe: &AttentionProbe<'_>) -> Vec<f32>;
}

impl<F> AttentionSynth for F
where
    F: Fn(&AttentionProbe<'_>) -> Vec<f32> + Send + Sync,
{
    fn row(&self, probe: &AttentionProbe<'_>) -> Vec<f32> {
        self(probe)
    }
}

/// Equal mass on every visible position.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformAttention;

impl AttentionSynth for UniformAttention {
    fn row(&self, probe: &AttentionProbe<'_>) -> Vec<f32> {
        let len = probe.position + 1;
        vec![1.0 / len as f32; len]
    }
}

/// In `focus_layers`, visual positions share `visual_mass` in proportion to
/// `norm^exponent` of their token; the rest goes uniformly to non-visual
/// positions. Other layers get seeded pseudo-random rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyAttention {
    pub focus_layers: Vec<usize>,
    #[serde(default = "default_visual_mass")]
    pub visual_mass: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_visual_mass() -> f64 {
    0.9
}

fn default_exponent() -> f64 {
    4.0
}

impl SaliencyAttention {
    pub fn new(focus_layers: Vec<usize>) -> Self {
        Self {
            focus_layers,
            visual_mass: default_visual_mass(),
            exponent: default_exponent(),
            seed: 0,
        }
    }

    fn noise_row(&self, probe: &AttentionProbe<'_>) -> Vec<f32> {
        let len = probe.position + 1;
        let mut rng = SplitMix64::new(derive_seed(&[
            self.seed,
            probe.layer as u64,
            probe.head as u64,
            probe.position as u64,
        ]));
        let raw: Vec<f64> = (0..len).map(|_| rng.next_f64() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| (v / total) as f32).collect()
    }
}

impl AttentionSynth for SaliencyAttention {
    fn row(&self, probe: &AttentionProbe<'_>) -> Vec<f32> {
        if !self.focus_layers.contains(&probe.layer) {
            return self.noise_row(probe);
        }
        let len = probe.position + 1;
        let mut weights = vec![0.0f64; len];
        let mut visual = vec![false; len];
        let mut total = 0.0;
        let visual_segments = probe
            .request
            .context
            .iter()
            .zip(probe.segments)
            .filter_map(|(seg, span)| match seg {
                ContextSegment::VisualTokens(m) => Some((m, span)),
                ContextSegment::Text(_) => None,
            });
        for (m, span) in visual_segments {
            for (i, row) in m.iter_rows().enumerate() {
                let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
                let w = norm.powf(self.exponent);
                weights[span.start + i] = w;
                visual[span.start + i] = true;
                total += w;
            }
        }
        let n_visual = visual.iter().filter(|v| **v).count();
        if total <= 0.0 || n_visual == 0 {
            return UniformAttention.row(probe);
        }
        let rest = len - n_visual;
        let visual_mass = if rest == 0 { 1.0 } else { self.visual_mass };
        weights
            .iter()
            .zip(&visual)
            .map(|(&w, &is_visual)| {
                if is_visual {
                    (visual_mass * w / total) as f32
                } else {
                    ((1.0 - visual_mass) / rest as f64) as f32
                }
            })
            .collect()
    }
}

/// Recognition or captioning replies computed from cosine similarity between
/// query tokens and the concept memories present in the context.
///
/// Concept memories are visual segments preceded by a text segment ending in
/// `... entity <name>. Image <i>:`; every other visual segment is query media.
/// A concept is present when the mean, over its memory rows, of the best
/// cosine against any query row reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineResponder {
    pub threshold: f64,
}

static ENTITY_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)entity\s+(.+?)\.\s*Image\s+\d+\s*:\s*$").unwrap());

impl CosineResponder {
    /// `(name, present)` for every concept in context order.
    pub fn decide(&self, request: &GenerationRequest) -> Vec<(String, bool)> {
        let mut concepts: Vec<(String, &TokenMatrix)> = Vec::new();
        let mut queries: Vec<&TokenMatrix> = Vec::new();
        let mut pending_name: Option<String> = None;
        for seg in &request.context {
            match seg {
                ContextSegment::Text(t) => {
                    pending_name = ENTITY_NAME.captures(t).map(|c| c[1].trim().to_string());
                }
                ContextSegment::VisualTokens(m) => match pending_name.take() {
                    Some(name) => concepts.push((name, m)),
                    None => queries.push(m),
                },
            }
        }
        concepts
            .into_iter()
            .map(|(name, memory)| {
                let score = memory_match(memory, &queries);
                (name, score >= self.threshold)
            })
            .collect()
    }

    pub fn recognition_reply(&self, request: &GenerationRequest) -> String {
        self.decide(request)
            .into_iter()
            .map(|(name, yes)| format!("{name}: {}", if yes { "yes" } else { "no" }))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn caption_reply(&self, request: &GenerationRequest) -> String {
        let present: Vec<String> = self
            .decide(request)
            .into_iter()
            .filter_map(|(n, yes)| yes.then_some(n))
            .collect();
        if present.is_empty() {
            "A detailed photo of an unfamiliar scene.".into()
        } else {
            format!("A detailed photo showing {}.", present.join(" and "))
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return -1.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn memory_match(memory: &TokenMatrix, queries: &[&TokenMatrix]) -> f64 {
    if memory.rows() == 0 {
        return -1.0;
    }
    let mut total = 0.0;
    for m in memory.iter_rows() {
        let best = queries
            .iter()
            .flat_map(|q| q.iter_rows())
            .map(|q| cosine(m, q))
            .fold(-1.0f64, f64::max);
        total += best;
    }
    total / memory.rows() as f64
}

/// Serializable reply description for script files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySpec {
    Fixed(String),
    CosineRecognition { threshold: f64 },
    CosineCaption { threshold: f64 },
}

impl ReplySpec {
    fn into_reply(self) -> Reply {
        match self {
            ReplySpec::Fixed(s) => Reply::Fixed(s),
            ReplySpec::CosineRecognition { threshold } => {
                let r = CosineResponder { threshold };
                Reply::Dynamic(Arc::new(move |req| Ok(r.recognition_reply(req))))
            }
            ReplySpec::CosineCaption { threshold } => {
                let r = CosineResponder { threshold };
                Reply::Dynamic(Arc::new(move |req| Ok(r.caption_reply(req))))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionSpec {
    #[default]
    Uniform,
    Saliency(SaliencyAttention),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptFileRule {
    pub pattern: String,
    pub reply: ReplySpec,
}

/// On-disk script: JSON with `config`, `rules` and `attention`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub config: Option<BackendConfig>,
    pub rules: Vec<ScriptFileRule>,
    #[serde(default)]
    pub attention: AttentionSpec,
}

impl ScriptFile {
    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn into_backend(self, seed_override: Option<u64>) -> Result<ScriptedBackend> {
        let mut config = self.config.unwrap_or_default();
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        let rules = self
            .rules
            .into_iter()
            .map(|r| ScriptRule {
                pattern: r.pattern,
                reply: r.reply.into_reply(),
            })
            .collect();
        let attention: Arc<dyn AttentionSynth> = match self.attention {
            AttentionSpec::Uniform => Arc::new(UniformAttention),
            AttentionSpec::Saliency(s) => Arc::new(s),
        };
        ScriptedBackend::new(config, rules, attention)
    }
}

pub struct ScriptedBackend {
    config: BackendConfig,
    encoder: PatchEncoder,
    rules: Vec<ScriptRule>,
    attention: Arc<dyn AttentionSynth>,
}

static REPLY_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s*[\p{L}\p{N}_]+|\s*[^\s\p{L}\p{N}_]|\s+").unwrap());

/// Split a reply into word-piece tokens; leading whitespace stays attached.
pub(crate) fn tokenize_reply(text: &str) -> Vec<String> {
    REPLY_TOKEN.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

impl ScriptedBackend {
    pub fn new(config: BackendConfig, rules: Vec<ScriptRule>, attention: Arc<dyn AttentionSynth>) -> Result<Self> {
        config.validate()?;
        for (i, a) in rules.iter().enumerate() {
            if a.pattern.is_empty() {
                return Err(Error::InvalidArgument("empty script pattern".into()));
            }
            for b in &rules[i + 1..] {
                if a.pattern.contains(&b.pattern) || b.pattern.contains(&a.pattern) {
                    return Err(Error::AmbiguousScript(vec![a.pattern.clone(), b.pattern.clone()]));
                }
            }
        }
        Ok(Self {
            encoder: PatchEncoder::new(&config),
            config,
            rules,
            attention,
        })
    }

    fn reply_for(&self, request: &GenerationRequest) -> Result<String> {
        let matches: Vec<&ScriptRule> = self
            .rules
            .iter()
            .filter(|r| request.instruction.contains(&r.pattern))
            .collect();
        match matches.as_slice() {
            [] => Err(Error::NoScript(request.instruction.clone())),
            [rule] => match &rule.reply {
                Reply::Fixed(s) => Ok(s.clone()),
                Reply::Dynamic(f) => f(request),
            },
            many => Err(Error::AmbiguousScript(many.iter().map(|r| r.pattern.clone()).collect())),
        }
    }
}

impl Backend for ScriptedBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn fingerprint(&self) -> String {
        self.config.fingerprint("scripted")
    }

    fn encode_image(&self, image: &ToyImage) -> Result<TokenMatrix> {
        self.encoder.encode(image)
    }

    fn generate_with_attention(&self, request: &GenerationRequest) -> Result<GenerationTrace> {
        let segments = layout_context(self, &request.context, &request.instruction)?;
        for &l in &request.capture_layers {
            if l >= self.config.layers {
                return Err(Error::InvalidArgument(format!("capture layer {l} out of range")));
            }
        }
        let prefix_len = segments.last().map_or(0, |s| s.start + s.len);
        let reply = self.reply_for(request)?;
        let limit = request
            .max_new_tokens
            .min(self.config.max_context - prefix_len);
        let tokens: Vec<String> = tokenize_reply(&reply).into_iter().take(limit).collect();

        let generated: Vec<DecodedToken> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| DecodedToken {
                position: prefix_len + i,
                text: t.clone(),
            })
            .collect();

        let mut layers = BTreeMap::new();
        for &layer in &request.capture_layers {
            let mut heads = Vec::with_capacity(self.config.heads);
            for head in 0..self.config.heads {
                let mut rows = Vec::with_capacity(generated.len());
                for (step, tok) in generated.iter().enumerate() {
                    let probe = AttentionProbe {
                        layer,
                        head,
                        step,
                        position: tok.position,
                        request,
                        segments: &segments,
                        token_text: &tok.text,
                    };
                    let row = self.attention.row(&probe);
                    if row.len() != tok.position + 1 {
                        return Err(Error::Contract(format!(
                            "synthesized attention row has length {}, expected {}",
                            row.len(),
                            tok.position + 1
                        )));
                    }
                    rows.push(row);
                }
                heads.push(rows);
            }
            layers.insert(layer, heads);
        }

        Ok(GenerationTrace {
            text: tokens.concat(),
            generated,
            attention: CapturedAttention {
                first_position: prefix_len,
                layers,
            },
            segments,
            prefix_len,
        })
    }
}
