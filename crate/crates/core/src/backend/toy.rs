//! Deterministic byte-level multimodal transformer for desk-scale runs.
//!
//! Weights come from one `SplitMix64(config.seed)` stream, drawn uniform in
//! `[-1, 1)` and scaled by `1/sqrt(dim)`, in this order: token embeddings
//! (`vocab x dim`), position embeddings (`max_context x dim`), then per layer
//! `W_q, W_k, W_v, W_o` (`dim x dim`), `W_up` (`dim x 4dim`), `W_down`
//! (`4dim x dim`). Blocks are pre-norm (parameter-free LayerNorm, eps 1e-5),
//! ReLU MLP, tied output embedding. Attention rows are produced by
//! [`scaled_dot_attention`] one query at a time over the key cache.

use std::collections::BTreeMap;

use super::encoder::PatchEncoder;
use super::rng::{derive_seed, SplitMix64};
use super::{layout_context, Backend, BackendConfig, ContextSegment, GenerationRequest, GenerationTrace, ToyImage};
use crate::attention::{scaled_dot_attention, CapturedAttention, DecodedToken};
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

const LN_EPS: f32 = 1e-5;

struct LayerWeights {
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    w_up: Vec<f32>,
    w_down: Vec<f32>,
}

pub struct ToyBackend {
    config: BackendConfig,
    encoder: PatchEncoder,
    token_embedding: Vec<f32>,
    position_embedding: Vec<f32>,
    layers: Vec<LayerWeights>,
}

/// Queries and keys of one (layer, head) for every processed position.
#[derive(Debug, Clone)]
pub struct QueryKeyProbe {
    pub queries: TokenMatrix,
    pub keys: TokenMatrix,
}

struct HeadCache {
    keys: TokenMatrix,
    values: Vec<Vec<f32>>,
}

enum Input<'a> {
    Token(u8),
    Visual(&'a [f32]),
}

impl ToyBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != 256 {
            return Err(Error::InvalidArgument(format!(
                "the toy backend is byte-level and needs vocab_size 256, got {}",
                config.vocab_size
            )));
        }
        let d = config.dim;
        let scale = 1.0 / (d as f32).sqrt();
        let mut rng = SplitMix64::new(config.seed);
        let token_embedding = rng.fill(config.vocab_size * d, scale);
        let position_embedding = rng.fill(config.max_context * d, scale);
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                wq: rng.fill(d * d, scale),
                wk: rng.fill(d * d, scale),
                wv: rng.fill(d * d, scale),
                wo: rng.fill(d * d, scale),
                w_up: rng.fill(d * 4 * d, scale),
                w_down: rng.fill(4 * d * d, scale),
            })
            .collect();
        Ok(Self {
            encoder: PatchEncoder::new(&config),
            config,
            token_embedding,
            position_embedding,
            layers,
        })
    }

    /// Record queries and keys of `(layer, head)` over the whole run of `request`.
    pub fn probe_queries_keys(&self, request: &GenerationRequest, layer: usize, head: usize) -> Result<QueryKeyProbe> {
        if layer >= self.config.layers || head >= self.config.heads {
            return Err(Error::InvalidArgument(format!("no layer {layer} head {head}")));
        }
        let mut probe = QueryKeyProbe {
            queries: TokenMatrix::with_capacity(self.config.head_dim, 0)?,
            keys: TokenMatrix::with_capacity(self.config.head_dim, 0)?,
        };
        self.run(request, Some((layer, head, &mut probe)))?;
        Ok(probe)
    }

    fn run(
        &self,
        request: &GenerationRequest,
        mut probe: Option<(usize, usize, &mut QueryKeyProbe)>,
    ) -> Result<GenerationTrace> {
        let segments = layout_context(self, &request.context, &request.instruction)?;
        for &l in &request.capture_layers {
            if l >= self.config.layers {
                return Err(Error::InvalidArgument(format!(
                    "capture layer {l} out of range (backend has {} layers)",
                    self.config.layers
                )));
            }
        }
        let prefix_len = segments.last().map_or(0, |s| s.start + s.len);
        let budget = self.config.max_context - prefix_len;
        let new_tokens = request.max_new_tokens.min(budget);

        let hd = self.config.head_dim;
        let mut caches: Vec<Vec<HeadCache>> = (0..self.config.layers)
            .map(|_| {
                (0..self.config.heads)
                    .map(|_| HeadCache {
                        keys: TokenMatrix::with_capacity(hd, prefix_len + new_tokens).expect("head_dim >= 1"),
                        values: Vec::with_capacity(prefix_len + new_tokens),
                    })
                    .collect()
            })
            .collect();

        let mut captured = CapturedAttention {
            first_position: prefix_len,
            layers: request
                .capture_layers
                .iter()
                .map(|&l| (l, vec![Vec::with_capacity(new_tokens); self.config.heads]))
                .collect::<BTreeMap<_, _>>(),
        };

        let mut pos = 0usize;
        let mut last_hidden = None;
        for seg in request
            .context
            .iter()
            .map(Some)
            .chain(std::iter::once(None))
        {
            match seg {
                Some(ContextSegment::VisualTokens(m)) => {
                    for row in m.iter_rows() {
                        last_hidden = Some(self.forward(Input::Visual(row), pos, &mut caches, None, &mut probe)?);
                        pos += 1;
                    }
                }
                Some(ContextSegment::Text(t)) => {
                    for &b in t.as_bytes() {
                        last_hidden = Some(self.forward(Input::Token(b), pos, &mut caches, None, &mut probe)?);
                        pos += 1;
                    }
                }
                None => {
                    for &b in request.instruction.as_bytes() {
                        last_hidden = Some(self.forward(Input::Token(b), pos, &mut caches, None, &mut probe)?);
                        pos += 1;
                    }
                }
            }
        }
        debug_assert_eq!(pos, prefix_len);

        let mut sampler = SplitMix64::new(derive_seed(&[self.config.seed, 0x53414d50]));
        let mut generated = Vec::with_capacity(new_tokens);
        let mut bytes = Vec::with_capacity(new_tokens);
        for _ in 0..new_tokens {
            let Some(hidden) = last_hidden.as_ref() else {
                break;
            };
            let logits = self.logits(hidden);
            let next = if request.deterministic {
                argmax(&logits)
            } else {
                sample(&logits, &mut sampler)
            };
            generated.push(DecodedToken {
                position: pos,
                text: decode_byte(next),
            });
            bytes.push(next);
            last_hidden = Some(self.forward(Input::Token(next), pos, &mut caches, Some(&mut captured), &mut probe)?);
            pos += 1;
        }

        Ok(GenerationTrace {
            text: generated.iter().map(|t| t.text.as_str()).collect(),
            generated,
            attention: captured,
            segments,
            prefix_len,
        })
    }

    fn forward(
        &self,
        input: Input<'_>,
        pos: usize,
        caches: &mut [Vec<HeadCache>],
        mut capture: Option<&mut CapturedAttention>,
        probe: &mut Option<(usize, usize, &mut QueryKeyProbe)>,
    ) -> Result<Vec<f32>> {
        let d = self.config.dim;
        let hd = self.config.head_dim;
        let mut x: Vec<f32> = match input {
            Input::Token(b) => self.token_embedding[b as usize * d..(b as usize + 1) * d].to_vec(),
            Input::Visual(row) => row.to_vec(),
        };
        let pe = &self.position_embedding[pos * d..(pos + 1) * d];
        x.iter_mut().zip(pe).for_each(|(a, p)| *a += p);

        for (l, w) in self.layers.iter().enumerate() {
            let h = layer_norm(&x);
            let q = matvec(&h, &w.wq, d);
            let k = matvec(&h, &w.wk, d);
            let v = matvec(&h, &w.wv, d);
            let mut attn_out = vec![0.0f32; d];
            for head in 0..self.config.heads {
                let span = head * hd..(head + 1) * hd;
                let cache = &mut caches[l][head];
                cache.keys.push_row(&k[span.clone()])?;
                cache.values.push(v[span.clone()].to_vec());
                let query = TokenMatrix::new(1, hd, q[span.clone()].to_vec())?;
                if let Some((pl, ph, p)) = probe.as_mut() {
                    if *pl == l && *ph == head {
                        p.queries.push_row(&q[span.clone()])?;
                        p.keys.push_row(&k[span.clone()])?;
                    }
                }
                let row = scaled_dot_attention(&query, &cache.keys, hd, false)?;
                let row = row.row(0);
                for (weight, value) in row.iter().zip(&cache.values) {
                    for (o, &vv) in attn_out[span.clone()].iter_mut().zip(value) {
                        *o += weight * vv;
                    }
                }
                if let Some(cap) = capture.as_deref_mut() {
                    if let Some(heads) = cap.layers.get_mut(&l) {
                        heads[head].push(row.to_vec());
                    }
                }
            }
            let projected = matvec(&attn_out, &w.wo, d);
            x.iter_mut().zip(&projected).for_each(|(a, b)| *a += b);

            let h2 = layer_norm(&x);
            let mut up = matvec(&h2, &w.w_up, 4 * d);
            up.iter_mut().for_each(|u| *u = u.max(0.0));
            let down = matvec(&up, &w.w_down, d);
            x.iter_mut().zip(&down).for_each(|(a, b)| *a += b);
        }
        Ok(layer_norm(&x))
    }

    fn logits(&self, hidden: &[f32]) -> Vec<f32> {
        let d = self.config.dim;
        self.token_embedding
            .chunks_exact(d)
            .map(|e| e.iter().zip(hidden).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Backend for ToyBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn fingerprint(&self) -> String {
        self.config.fingerprint("toy")
    }

    fn encode_image(&self, image: &ToyImage) -> Result<TokenMatrix> {
        self.encoder.encode(image)
    }

    fn generate_with_attention(&self, request: &GenerationRequest) -> Result<GenerationTrace> {
        self.run(request, None)
    }
}

/// `x W` for row-major `W` of shape `x.len() x out`.
fn matvec(x: &[f32], w: &[f32], out: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; out];
    for (i, &xi) in x.iter().enumerate() {
        for (yo, &wv) in y.iter_mut().zip(&w[i * out..(i + 1) * out]) {
            *yo += xi * wv;
        }
    }
    y
}

fn layer_norm(x: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn argmax(logits: &[f32]) -> u8 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u8
}

fn sample(logits: &[f32], rng: &mut SplitMix64) -> u8 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let weights: Vec<f64> = logits.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.next_f64() * total;
    for (i, w) in weights.iter().enumerate() {
        target -= w;
        if target < 0.0 {
            return i as u8;
        }
    }
    (logits.len() - 1) as u8
}

fn decode_byte(b: u8) -> String {
    String::from_utf8_lossy(&[b]).into_owned()
}
