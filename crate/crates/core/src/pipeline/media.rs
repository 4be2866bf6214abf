use std::path::PathBuf;

use crate::backend::{Backend, ToyImage};
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

/// An image in one of the forms the engine accepts.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualInput {
    Image(ToyImage),
    /// Read and encoded by the backend (adapters receive the path).
    File(PathBuf),
    /// Already projected visual tokens.
    Tokens(TokenMatrix),
}

impl VisualInput {
    pub fn encode(&self, backend: &dyn Backend) -> Result<TokenMatrix> {
        let tokens = match self {
            VisualInput::Image(img) => backend.encode_image(img)?,
            VisualInput::File(path) => backend.encode_file(path)?,
            VisualInput::Tokens(m) => m.clone(),
        };
        if tokens.dim() != backend.config().dim {
            return Err(Error::Contract(format!(
                "visual tokens have dim {}, backend expects {}",
                tokens.dim(),
                backend.config().dim
            )));
        }
        Ok(tokens)
    }
}

/// What a task looks at: one image, or video frames in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryMedia {
    Image(TokenMatrix),
    Video(Vec<TokenMatrix>),
}

impl QueryMedia {
    pub fn frames(&self) -> &[TokenMatrix] {
        match self {
            QueryMedia::Image(m) => std::slice::from_ref(m),
            QueryMedia::Video(f) => f,
        }
    }

    /// Word substituted for `{media}` in the recognition prompt.
    pub fn noun(&self) -> &'static str {
        match self {
            QueryMedia::Image(_) => "Image",
            QueryMedia::Video(_) => "Video",
        }
    }

    /// All frames stacked, used for similarity filtering.
    pub fn stacked(&self) -> Result<TokenMatrix> {
        let frames = self.frames();
        let dim = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("video has no frames".into()))?
            .dim();
        TokenMatrix::vstack(dim, &frames.iter().collect::<Vec<_>>())
    }

    pub fn load(inputs: &[VisualInput], backend: &dyn Backend) -> Result<Self> {
        let mut frames = inputs
            .iter()
            .map(|v| v.encode(backend))
            .collect::<Result<Vec<_>>>()?;
        match frames.len() {
            0 => Err(Error::InvalidArgument("query media is empty".into())),
            1 => Ok(QueryMedia::Image(frames.pop().unwrap())),
            _ => Ok(QueryMedia::Video(frames)),
        }
    }
}
