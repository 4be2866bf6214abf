use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mask::PatchMask;
use crate::backend::{read_raw_tensor, ToyImage};
use crate::error::{Error, Result};
use crate::pipeline::VisualInput;

pub const CALIBRATION_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct CalibrationSample {
    pub visual: VisualInput,
    pub mask: PatchMask,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRef {
    pub path: String,
    pub rows: usize,
    pub dim: usize,
}

/// One manifest line. Exactly one of `image` and `tensor` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<TensorRef>,
    pub mask: String,
    pub category: String,
    #[serde(default = "one")]
    pub instances: u32,
}

fn one() -> u32 {
    1
}

/// Calibration samples on disk. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationManifest {
    pub version: u32,
    pub samples: Vec<SampleEntry>,
}

impl CalibrationManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate().map_err(|e| match e {
            Error::Manifest(m) => Error::Manifest(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CALIBRATION_MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported manifest version {}", self.version)));
        }
        if self.samples.is_empty() {
            return Err(Error::Manifest("manifest lists no samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.image.is_some() == s.tensor.is_some() {
                return Err(Error::Manifest(format!("sample {i}: set exactly one of `image` and `tensor`")));
            }
            if s.instances != 1 {
                return Err(Error::Manifest(format!(
                    "sample {i}: {} instances; calibration needs single-instance images",
                    s.instances
                )));
            }
        }
        Ok(())
    }

    /// Load masks and images (tensors are read eagerly, images lazily by the backend).
    pub fn load(&self, base: &Path) -> Result<Vec<CalibrationSample>> {
        let resolve = |p: &str| -> PathBuf { base.join(p) };
        self.samples
            .iter()
            .map(|s| {
                let mask_path = resolve(&s.mask);
                let mask = PatchMask::read(&mask_path).map_err(|e| Error::Manifest(e.to_string()))?;
                if mask.count() == 0 {
                    return Err(Error::Manifest(format!("{}: mask is empty", mask_path.display())));
                }
                let visual = match (&s.image, &s.tensor) {
                    (Some(image), _) => {
                        let path = resolve(image);
                        if path.extension().is_some_and(|e| e == "egoi") {
                            VisualInput::Image(ToyImage::read(&path).map_err(|e| Error::Manifest(e.to_string()))?)
                        } else {
                            VisualInput::File(path)
                        }
                    }
                    (None, Some(t)) => VisualInput::Tokens(
                        read_raw_tensor(&resolve(&t.path), t.rows, t.dim).map_err(|e| Error::Manifest(e.to_string()))?,
                    ),
                    (None, None) => unreachable!("validated"),
                };
                Ok(CalibrationSample {
                    visual,
                    mask,
                    category: s.category.clone(),
                })
            })
            .collect()
    }
}

/// Read a manifest and every sample it references.
pub fn load_calibration_samples(path: &Path) -> Result<Vec<CalibrationSample>> {
    let manifest = CalibrationManifest::read(path)?;
    manifest.load(path.parent().unwrap_or(Path::new(".")))
}
