//! Choosing the layers whose keyword attention best localizes the subject.

mod manifest;
mod mask;
mod rank;

pub use manifest::{
    load_calibration_samples, CalibrationManifest, CalibrationSample, SampleEntry, TensorRef,
    CALIBRATION_MANIFEST_VERSION,
};
pub use mask::{patch_mask_overlap, PatchMask, MASK_MAGIC};
pub use rank::{
    rank_layers, select_top_l, CalibrationFile, CalibrationOptions, LayerRanking, LayerScore,
    CALIBRATION_FILE_VERSION, DEFAULT_CALIBRATION_FRACTION, DEFAULT_TOP_L,
};
