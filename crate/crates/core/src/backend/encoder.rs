use super::rng::{derive_seed, SplitMix64};
use super::{BackendConfig, ToyImage};
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

/// Per-patch linear projection into the language embedding space.
///
/// Patch `(r, c)` becomes row `r * cols + c`. The patch vector is its pixels
/// in `(y, x, channel)` order; the projection for a patch length `P` is drawn
/// from `SplitMix64(derive(seed, P))` and scaled by `1/sqrt(P)`. Each row
/// depends only on its own patch.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    seed: u64,
    grid: (usize, usize),
    dim: usize,
}

impl PatchEncoder {
    pub fn new(config: &BackendConfig) -> Self {
        Self {
            seed: config.seed,
            grid: config.patch_grid,
            dim: config.dim,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    fn projection(&self, patch_len: usize) -> Vec<f32> {
        let mut rng = SplitMix64::new(derive_seed(&[self.seed, 0x0050_4154_4348, patch_len as u64]));
        rng.fill(patch_len * self.dim, 1.0)
    }

    pub fn encode(&self, image: &ToyImage) -> Result<TokenMatrix> {
        let (rows, cols) = self.grid;
        if image.height == 0 || image.width == 0 || image.channels == 0 {
            return Err(Error::InvalidArgument("image has a zero dimension".into()));
        }
        if !image.height.is_multiple_of(rows) || !image.width.is_multiple_of(cols) {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} is not divisible by the {rows}x{cols} patch grid",
                image.height, image.width
            )));
        }
        let ph = image.height / rows;
        let pw = image.width / cols;
        let patch_len = ph * pw * image.channels;
        let proj = self.projection(patch_len);
        let scale = 1.0 / (patch_len as f32).sqrt();

        let mut data = Vec::with_capacity(rows * cols * self.dim);
        let mut patch = Vec::with_capacity(patch_len);
        for r in 0..rows {
            for c in 0..cols {
                patch.clear();
                for y in r * ph..(r + 1) * ph {
                    for x in c * pw..(c + 1) * pw {
                        for ch in 0..image.channels {
                            patch.push(image.pixel(y, x, ch));
                        }
                    }
                }
                let mut out = vec![0.0f32; self.dim];
                for (i, &p) in patch.iter().enumerate() {
                    let w = &proj[i * self.dim..(i + 1) * self.dim];
                    for (o, &wv) in out.iter_mut().zip(w) {
                        *o += p * wv;
                    }
                }
                data.extend(out.into_iter().map(|v| v * scale));
            }
        }
        TokenMatrix::new(rows * cols, self.dim, data)
    }
}
