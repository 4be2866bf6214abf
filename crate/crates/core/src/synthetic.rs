//! Planted-signal scenes: images whose informative patches are known.
//!
//! Each concept owns a disjoint set of signature patches carrying a fixed
//! high-amplitude pattern; everything else is low-amplitude noise. Views of a
//! concept differ only in noise and a small jitter on the pattern. With the
//! scripted backend's saliency attention, keyword attention lands on the
//! signature patches, so the ideal selection is known exactly.
//!
//! The signature sets are built so that each concept shares exactly
//! `uniform_overlap` patches with the evenly spaced baseline selection of
//! the same size.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::attention::uniform_indices;
use crate::backend::{
    write_json_atomic, AttentionSpec, BackendConfig, ReplySpec, SaliencyAttention, ScriptFile, ScriptFileRule,
    SplitMix64, ToyImage,
};
use crate::calibration::{CalibrationManifest, PatchMask, SampleEntry, CALIBRATION_MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::eval::{
    CaptionItem, ConceptEntry, DatasetManifest, MediaRef, PairItem, Queries, RecognitionItem, VqaItem,
    DATASET_MANIFEST_VERSION,
};

pub const SIZE_PATTERN: &str = "estimate the percentage";
pub const KEYWORD_PATTERN: &str = "list of important words";
pub const RECOGNITION_PATTERN: &str = "check the presence";
pub const CAPTION_PATTERN: &str = "Generate a detailed caption";
pub const VQA_PATTERN: &str = "Answer the following question";
pub const PLANTED_KEYWORDS: &str = "striped texture, red dots, zigzag pattern";
pub const COSINE_THRESHOLD: f64 = 0.9;

const DEFAULT_NAMES: [&str; 8] = ["mug", "bike", "cat", "lamp", "kettle", "boot", "plant", "clock"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub seed: u64,
    pub concepts: usize,
    pub reference_views: usize,
    pub held_out_views: usize,
    pub signature_patches: usize,
    /// Signature patches of each concept that sit on the uniform baseline grid.
    pub uniform_overlap: usize,
    pub image_side: usize,
    pub channels: usize,
    pub background: f32,
    pub jitter: f32,
    pub calibration_samples: usize,
    /// Layer whose attention follows token saliency in the scripted backend.
    pub focus_layer: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            concepts: 4,
            reference_views: 5,
            held_out_views: 2,
            signature_patches: 12,
            uniform_overlap: 2,
            image_side: 32,
            channels: 3,
            background: 0.05,
            jitter: 0.05,
            calibration_samples: 32,
            focus_layer: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConcept {
    pub name: String,
    /// Ascending patch indices.
    pub signature: Vec<usize>,
    patterns: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct PlantedSuite {
    pub spec: PlantedSpec,
    pub config: BackendConfig,
    pub concepts: Vec<PlantedConcept>,
}

fn shuffle<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Seed for one rendered image.
fn image_seed(seed: u64, kind: u64, a: u64, b: u64) -> u64 {
    let mut rng = SplitMix64::new(seed ^ kind.rotate_left(48) ^ a.rotate_left(24) ^ b);
    rng.next_u64()
}

impl PlantedSuite {
    pub fn new(spec: PlantedSpec) -> Result<Self> {
        let config = BackendConfig {
            seed: spec.seed,
            ..BackendConfig::default()
        };
        let (rows, cols) = config.patch_grid;
        let n_r = rows * cols;
        if !spec.image_side.is_multiple_of(rows) || !spec.image_side.is_multiple_of(cols) {
            return Err(Error::InvalidArgument("image side must divide into the patch grid".into()));
        }
        if spec.concepts == 0 || spec.concepts > DEFAULT_NAMES.len() {
            return Err(Error::InvalidArgument(format!(
                "between 1 and {} concepts supported",
                DEFAULT_NAMES.len()
            )));
        }
        if spec.focus_layer >= config.layers {
            return Err(Error::InvalidArgument("focus layer out of range".into()));
        }
        let grid = uniform_indices(n_r, spec.signature_patches);
        let off_grid: Vec<usize> = (0..n_r).filter(|i| !grid.contains(i)).collect();
        let per_off = spec.signature_patches - spec.uniform_overlap.min(spec.signature_patches);
        let on = spec.signature_patches - per_off;
        if spec.concepts * on > grid.len() || spec.concepts * per_off > off_grid.len() {
            return Err(Error::InvalidArgument("signatures do not fit disjointly on the grid".into()));
        }
        let mut rng = SplitMix64::new(spec.seed);
        let mut grid = grid;
        let mut off_grid = off_grid;
        shuffle(&mut grid, &mut rng);
        shuffle(&mut off_grid, &mut rng);
        let (ph, pw) = (spec.image_side / rows, spec.image_side / cols);
        let patch_len = ph * pw * spec.channels;
        let concepts = (0..spec.concepts)
            .map(|i| {
                let mut signature: Vec<usize> = grid[i * on..(i + 1) * on]
                    .iter()
                    .chain(&off_grid[i * per_off..(i + 1) * per_off])
                    .copied()
                    .collect();
                signature.sort_unstable();
                let patterns = signature.iter().map(|_| rng.fill(patch_len, 1.0)).collect();
                PlantedConcept {
                    name: DEFAULT_NAMES[i].to_string(),
                    signature,
                    patterns,
                }
            })
            .collect();
        Ok(Self { spec, config, concepts })
    }

    fn patch_dims(&self) -> (usize, usize) {
        let (rows, cols) = self.config.patch_grid;
        (self.spec.image_side / rows, self.spec.image_side / cols)
    }

    fn noise_image(&self, rng: &mut SplitMix64) -> ToyImage {
        let s = self.spec.image_side;
        let pixels = rng.fill(s * s * self.spec.channels, self.spec.background);
        ToyImage::new(s, s, self.spec.channels, pixels).expect("finite pixels")
    }

    fn paint(&self, img: &mut ToyImage, patch: usize, values: &[f32], jitter: &mut SplitMix64) {
        let cols = self.config.patch_grid.1;
        let (ph, pw) = self.patch_dims();
        let (r, c) = (patch / cols, patch % cols);
        let mut k = 0;
        for y in r * ph..(r + 1) * ph {
            for x in c * pw..(c + 1) * pw {
                for ch in 0..self.spec.channels {
                    let v = values[k] + jitter.next_signed_unit() * self.spec.jitter;
                    img.set_pixel(y, x, ch, v);
                    k += 1;
                }
            }
        }
    }

    /// Noise with the signatures of `present` painted in.
    pub fn render(&self, present: &[usize], seed: u64) -> ToyImage {
        let mut rng = SplitMix64::new(seed);
        let mut img = self.noise_image(&mut rng);
        for &ci in present {
            let concept = &self.concepts[ci];
            for (patch, pattern) in concept.signature.iter().zip(&concept.patterns) {
                self.paint(&mut img, *patch, pattern, &mut rng);
            }
        }
        img
    }

    pub fn reference_view(&self, concept: usize, view: usize) -> ToyImage {
        self.render(&[concept], image_seed(self.spec.seed, 1, concept as u64, view as u64))
    }

    pub fn held_out_view(&self, concept: usize, view: usize) -> ToyImage {
        self.render(&[concept], image_seed(self.spec.seed, 2, concept as u64, view as u64))
    }

    pub fn pair_view(&self, a: usize, b: usize, view: usize) -> ToyImage {
        self.render(&[a, b], image_seed(self.spec.seed, 3, (a * 64 + b) as u64, view as u64))
    }

    pub fn background_view(&self, view: usize) -> ToyImage {
        self.render(&[], image_seed(self.spec.seed, 4, 0, view as u64))
    }

    /// Size reply that makes the dynamic budget equal the signature size.
    pub fn size_reply(&self) -> String {
        let n_r = self.config.n_r();
        (100 * self.spec.signature_patches).div_ceil(n_r).to_string()
    }

    /// A single object covering 16 to 24 random patches, with its mask.
    pub fn calibration_sample(&self, index: usize) -> (ToyImage, PatchMask) {
        let (rows, cols) = self.config.patch_grid;
        let mut rng = SplitMix64::new(image_seed(self.spec.seed, 5, 0, index as u64));
        let mut img = self.noise_image(&mut rng);
        let mut patches: Vec<usize> = (0..rows * cols).collect();
        shuffle(&mut patches, &mut rng);
        let count = 16 + (rng.next_u64() % 9) as usize;
        let (ph, pw) = self.patch_dims();
        for &p in &patches[..count] {
            let pattern = rng.fill(ph * pw * self.spec.channels, 1.0);
            self.paint(&mut img, p, &pattern, &mut rng);
        }
        let mask = PatchMask::from_indices(rows, cols, &patches[..count]).expect("indices in grid");
        (img, mask)
    }

    /// Scripted backend description answering the pipeline prompts for this suite.
    pub fn script(&self) -> ScriptFile {
        let rule = |pattern: &str, reply: ReplySpec| ScriptFileRule {
            pattern: pattern.to_string(),
            reply,
        };
        ScriptFile {
            config: Some(self.config.clone()),
            rules: vec![
                rule(SIZE_PATTERN, ReplySpec::Fixed(self.size_reply())),
                rule(KEYWORD_PATTERN, ReplySpec::Fixed(PLANTED_KEYWORDS.to_string())),
                rule(RECOGNITION_PATTERN, ReplySpec::CosineRecognition { threshold: COSINE_THRESHOLD }),
                rule(CAPTION_PATTERN, ReplySpec::CosineCaption { threshold: COSINE_THRESHOLD }),
                rule(VQA_PATTERN, ReplySpec::Fixed("A".to_string())),
            ],
            attention: AttentionSpec::Saliency(SaliencyAttention {
                seed: self.spec.seed,
                ..SaliencyAttention::new(vec![self.spec.focus_layer])
            }),
        }
    }

    /// Write images, masks, manifests and the script under `dir`.
    pub fn write(&self, dir: &Path) -> Result<SuiteFiles> {
        for sub in ["ref", "query", "calib"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let save = |rel: String, img: &ToyImage| -> Result<String> {
            img.write(&dir.join(&rel))?;
            Ok(rel)
        };
        let names: Vec<&str> = self.concepts.iter().map(|c| c.name.as_str()).collect();

        let mut concepts = Vec::new();
        for (ci, name) in names.iter().enumerate() {
            let views = (0..self.spec.reference_views)
                .map(|v| save(format!("ref/{name}_{v}.egoi"), &self.reference_view(ci, v)))
                .collect::<Result<Vec<_>>>()?;
            concepts.push(ConceptEntry {
                name: name.to_string(),
                reference_views: views,
            });
        }

        let mut queries = Queries::default();
        for (ci, name) in names.iter().enumerate() {
            for v in 0..self.spec.held_out_views {
                let rel = save(format!("query/{name}_{v}.egoi"), &self.held_out_view(ci, v))?;
                let media = MediaRef::Image(rel);
                queries.recognition.push(RecognitionItem {
                    media: media.clone(),
                    concepts: vec![name.to_string()],
                });
                queries.captioning.push(CaptionItem {
                    media: media.clone(),
                    concepts: vec![name.to_string()],
                });
                queries.vqa.push(VqaItem {
                    media,
                    concepts: vec![name.to_string()],
                    question: format!("Is {name} in the image?"),
                    answer: "A".into(),
                    choices: vec!["yes".into(), "no".into()],
                    open_ended: false,
                });
            }
        }
        let bg = save("query/background_0.egoi".into(), &self.background_view(0))?;
        queries.recognition.push(RecognitionItem {
            media: MediaRef::Image(bg.clone()),
            concepts: vec![],
        });
        queries.vqa.push(VqaItem {
            media: MediaRef::Image(bg),
            concepts: vec![],
            question: "What is on the table?".into(),
            answer: "nothing".into(),
            choices: vec![],
            open_ended: true,
        });
        for pair in names.chunks_exact(2).enumerate().map(|(i, _)| (2 * i, 2 * i + 1)) {
            let (a, b) = pair;
            let pair_names = vec![names[a].to_string(), names[b].to_string()];
            let rel = save(format!("query/{}_{}_pair.egoi", names[a], names[b]), &self.pair_view(a, b, 0))?;
            queries.multi_concept.push(PairItem {
                media: MediaRef::Image(rel.clone()),
                pair: pair_names.clone(),
                positive: true,
            });
            queries.captioning.push(CaptionItem {
                media: MediaRef::Image(rel),
                concepts: pair_names.clone(),
            });
            queries.multi_concept.push(PairItem {
                media: MediaRef::Image(format!("query/{}_0.egoi", names[a])),
                pair: pair_names,
                positive: false,
            });
        }
        let manifest = DatasetManifest {
            version: DATASET_MANIFEST_VERSION,
            concepts,
            queries,
            base_dir: PathBuf::new(),
        };
        let manifest_path = dir.join("manifest.json");
        write_json_atomic(&manifest_path, &manifest)?;

        let mut samples = Vec::new();
        for i in 0..self.spec.calibration_samples {
            let (img, mask) = self.calibration_sample(i);
            let image = save(format!("calib/{i}.egoi"), &img)?;
            let mask_rel = format!("calib/{i}.egom");
            mask.write(&dir.join(&mask_rel))?;
            samples.push(SampleEntry {
                image: Some(image),
                tensor: None,
                mask: mask_rel,
                category: "planted".into(),
                instances: 1,
            });
        }
        let calibration_path = dir.join("calibration.json");
        write_json_atomic(
            &calibration_path,
            &CalibrationManifest {
                version: CALIBRATION_MANIFEST_VERSION,
                samples,
            },
        )?;

        let script_path = dir.join("script.json");
        write_json_atomic(&script_path, &self.script())?;
        Ok(SuiteFiles {
            manifest: manifest_path,
            calibration: calibration_path,
            script: script_path,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteFiles {
    pub manifest: PathBuf,
    pub calibration: PathBuf,
    pub script: PathBuf,
}
