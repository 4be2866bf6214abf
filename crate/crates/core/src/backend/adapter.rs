//! Engine side of the out-of-process adapter protocol.
//!
//! Transport is a session directory shared with the adapter process:
//!
//! ```text
//! <session>/capabilities.json        written once by the adapter
//! <session>/requests/<id>.json       request envelope (written last, atomically)
//! <session>/requests/<id>/<file>     raw tensors referenced by the request
//! <session>/responses/<id>.json      response envelope (written last, atomically)
//! <session>/responses/<id>/<file>    raw tensors referenced by the response
//! ```
//!
//! Envelopes are JSON with a `protocol_version`. Tensors are raw
//! little-endian f32, row-major, shapes carried in the envelope's tensor
//! manifest. Attention for layer `l`, head `h` comes back as tensor
//! `attn.l{l}.h{h}` of shape `[steps, prefix_len + steps]`; row `s` is
//! zero-padded past position `prefix_len + s`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::tensor_io::{read_raw_floats, write_raw_tensor, TensorEntry, TensorManifest};
use super::{Backend, BackendConfig, ContextSegment, GenerationRequest, GenerationTrace, SegmentSpan, ToyImage};
use crate::attention::{CapturedAttention, DecodedToken};
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

pub const ADAPTER_PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCapabilities {
    pub protocol_version: u32,
    pub model: String,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub patch_grid: (usize, usize),
    pub max_context: usize,
    #[serde(default)]
    pub vocab_size: usize,
    pub supports_concurrent_calls: bool,
    #[serde(default)]
    pub notes: String,
}

impl AdapterCapabilities {
    pub fn backend_config(&self) -> BackendConfig {
        BackendConfig {
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            head_dim: self.head_dim,
            patch_grid: self.patch_grid,
            vocab_size: self.vocab_size.max(1),
            max_context: self.max_context,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextItem {
    Text { text: String },
    Visual { tensor: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RequestBody {
    /// Encode an image file the adapter can decode.
    EncodeFile { path: String },
    /// Encode raw pixels (tensor `image`, shape `[H, W, C]`).
    EncodePixels { tensors: TensorManifest },
    Generate {
        context: Vec<ContextItem>,
        instruction: String,
        capture_layers: Vec<usize>,
        max_new_tokens: usize,
        deterministic: bool,
        tensors: TensorManifest,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub protocol_version: u32,
    pub id: String,
    #[serde(flatten)]
    pub body: RequestBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub kind: String,
    pub message: String,
    #[serde(default)]
    pub used: Option<usize>,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ResponseBody {
    Encoded {
        tensors: TensorManifest,
    },
    Generated {
        tokens: Vec<DecodedToken>,
        segments: Vec<SegmentSpan>,
        prefix_len: usize,
        tensors: TensorManifest,
    },
    Error(ErrorEnvelope),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub protocol_version: u32,
    pub id: String,
    #[serde(flatten)]
    pub body: ResponseBody,
}

/// Paths inside a session directory.
#[derive(Debug, Clone)]
pub struct SessionLayout {
    pub root: PathBuf,
}

impl SessionLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn capabilities(&self) -> PathBuf {
        self.root.join("capabilities.json")
    }

    pub fn request(&self, id: &str) -> PathBuf {
        self.root.join("requests").join(format!("{id}.json"))
    }

    pub fn request_dir(&self, id: &str) -> PathBuf {
        self.root.join("requests").join(id)
    }

    pub fn response(&self, id: &str) -> PathBuf {
        self.root.join("responses").join(format!("{id}.json"))
    }

    pub fn response_dir(&self, id: &str) -> PathBuf {
        self.root.join("responses").join(id)
    }

    pub fn ensure(&self) -> Result<()> {
        for sub in ["requests", "responses"] {
            let p = self.root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Write JSON so readers never observe a partial document.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let text = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    std::io::Write::write_all(&mut tmp, &text).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Backend served by an external adapter process through a session directory.
pub struct AdapterBackend {
    layout: SessionLayout,
    capabilities: AdapterCapabilities,
    config: BackendConfig,
    timeout: Duration,
    counter: AtomicU64,
    serial: Mutex<()>,
}

impl AdapterBackend {
    /// Connect to a session whose adapter has already written its capabilities.
    pub fn connect(root: impl Into<PathBuf>, timeout: Duration) -> Result<Self> {
        let layout = SessionLayout::new(root);
        let caps_path = layout.capabilities();
        let text = fs::read_to_string(&caps_path).map_err(|e| Error::io(&caps_path, e))?;
        let capabilities: AdapterCapabilities =
            serde_json::from_str(&text).map_err(|e| Error::Adapter(format!("bad capabilities: {e}")))?;
        if capabilities.protocol_version != ADAPTER_PROTOCOL_VERSION {
            return Err(Error::Adapter(format!(
                "adapter speaks protocol {}, engine speaks {ADAPTER_PROTOCOL_VERSION}",
                capabilities.protocol_version
            )));
        }
        let config = capabilities.backend_config();
        if config.dim != config.heads * config.head_dim {
            return Err(Error::Adapter("capabilities: dim != heads x head_dim".into()));
        }
        layout.ensure()?;
        Ok(Self {
            layout,
            capabilities,
            config,
            timeout,
            counter: AtomicU64::new(0),
            serial: Mutex::new(()),
        })
    }

    pub fn capabilities(&self) -> &AdapterCapabilities {
        &self.capabilities
    }

    fn next_id(&self) -> String {
        format!("{}-{:08}", std::process::id(), self.counter.fetch_add(1, Ordering::SeqCst))
    }

    fn call(&self, id: &str, body: RequestBody) -> Result<ResponseBody> {
        let _guard = if self.capabilities.supports_concurrent_calls {
            None
        } else {
            Some(self.serial.lock().unwrap_or_else(|e| e.into_inner()))
        };
        let request = AdapterRequest {
            protocol_version: ADAPTER_PROTOCOL_VERSION,
            id: id.to_string(),
            body,
        };
        write_json_atomic(&self.layout.request(id), &request)?;

        let response_path = self.layout.response(id);
        let start = Instant::now();
        while !response_path.exists() {
            if start.elapsed() > self.timeout {
                return Err(Error::Adapter(format!("timed out waiting for response {id}")));
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        let text = fs::read_to_string(&response_path).map_err(|e| Error::io(&response_path, e))?;
        let response: AdapterResponse =
            serde_json::from_str(&text).map_err(|e| Error::Adapter(format!("bad response {id}: {e}")))?;
        if response.protocol_version != ADAPTER_PROTOCOL_VERSION || response.id != id {
            return Err(Error::Adapter(format!("response {id} has wrong version or id")));
        }
        match response.body {
            ResponseBody::Error(env) => Err(match (env.kind.as_str(), env.used, env.limit) {
                ("context_limit", Some(used), Some(limit)) => Error::ContextLimit {
                    used,
                    limit,
                    overflow: used.saturating_sub(limit),
                },
                _ => Error::Adapter(format!("{}: {}", env.kind, env.message)),
            }),
            body => Ok(body),
        }
    }

    fn read_tensor(&self, id: &str, entry: &TensorEntry) -> Result<Vec<f32>> {
        read_raw_floats(&self.layout.response_dir(id).join(&entry.file), &entry.shape)
    }

    fn visual_from(&self, id: &str, body: ResponseBody) -> Result<TokenMatrix> {
        let ResponseBody::Encoded { tensors } = body else {
            return Err(Error::Adapter("expected an encode response".into()));
        };
        tensors.validate()?;
        let entry = tensors
            .get("visual_tokens")
            .ok_or_else(|| Error::Adapter("encode response lacks visual_tokens".into()))?;
        let [rows, dim] = entry.shape[..] else {
            return Err(Error::Adapter(format!("visual_tokens has shape {:?}", entry.shape)));
        };
        if dim != self.config.dim {
            return Err(Error::Adapter(format!("visual_tokens dim {dim} != capabilities dim")));
        }
        TokenMatrix::new(rows, dim, self.read_tensor(id, entry)?)
    }
}

impl Backend for AdapterBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn fingerprint(&self) -> String {
        self.config.fingerprint(&format!("adapter:{}", self.capabilities.model))
    }

    fn encode_image(&self, image: &ToyImage) -> Result<TokenMatrix> {
        let id = self.next_id();
        let dir = self.layout.request_dir(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_raw_tensor(&dir.join("image.bin"), &image.pixels)?;
        let tensors = TensorManifest {
            tensors: vec![TensorEntry {
                name: "image".into(),
                dtype: "f32".into(),
                shape: vec![image.height, image.width, image.channels],
                file: "image.bin".into(),
            }],
        };
        let body = self.call(&id, RequestBody::EncodePixels { tensors })?;
        self.visual_from(&id, body)
    }

    fn encode_file(&self, path: &Path) -> Result<TokenMatrix> {
        let absolute = fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
        let id = self.next_id();
        let body = self.call(
            &id,
            RequestBody::EncodeFile {
                path: absolute.to_string_lossy().into_owned(),
            },
        )?;
        self.visual_from(&id, body)
    }

    fn generate_with_attention(&self, request: &GenerationRequest) -> Result<GenerationTrace> {
        let id = self.next_id();
        let dir = self.layout.request_dir(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut tensors = TensorManifest::default();
        let mut context = Vec::with_capacity(request.context.len());
        for (i, seg) in request.context.iter().enumerate() {
            match seg {
                ContextSegment::Text(text) => context.push(ContextItem::Text { text: text.clone() }),
                ContextSegment::VisualTokens(m) => {
                    let name = format!("segment.{i}");
                    let file = format!("{name}.bin");
                    write_raw_tensor(&dir.join(&file), m.data())?;
                    tensors.tensors.push(TensorEntry {
                        name: name.clone(),
                        dtype: "f32".into(),
                        shape: vec![m.rows(), m.dim()],
                        file,
                    });
                    context.push(ContextItem::Visual { tensor: name });
                }
            }
        }
        let body = self.call(
            &id,
            RequestBody::Generate {
                context,
                instruction: request.instruction.clone(),
                capture_layers: request.capture_layers.clone(),
                max_new_tokens: request.max_new_tokens,
                deterministic: request.deterministic,
                tensors,
            },
        )?;
        let ResponseBody::Generated {
            tokens,
            segments,
            prefix_len,
            tensors,
        } = body
        else {
            return Err(Error::Adapter("expected a generate response".into()));
        };
        tensors.validate()?;
        let steps = tokens.len();
        let mut layers = BTreeMap::new();
        for &layer in &request.capture_layers {
            let mut heads = Vec::with_capacity(self.config.heads);
            for head in 0..self.config.heads {
                let name = format!("attn.l{layer}.h{head}");
                let entry = tensors
                    .get(&name)
                    .ok_or_else(|| Error::MissingCapture(format!("adapter returned no {name}")))?;
                let width = prefix_len + steps;
                if entry.shape != [steps, width] {
                    return Err(Error::Adapter(format!("{name} has shape {:?}, expected [{steps}, {width}]", entry.shape)));
                }
                let flat = self.read_tensor(&id, entry)?;
                let rows = (0..steps)
                    .map(|s| flat[s * width..s * width + prefix_len + s + 1].to_vec())
                    .collect();
                heads.push(rows);
            }
            layers.insert(layer, heads);
        }
        Ok(GenerationTrace {
            text: tokens.iter().map(|t| t.text.as_str()).collect(),
            generated: tokens,
            attention: CapturedAttention {
                first_position: prefix_len,
                layers,
            },
            segments,
            prefix_len,
        })
    }

    fn supports_concurrent_calls(&self) -> bool {
        self.capabilities.supports_concurrent_calls
    }
}
