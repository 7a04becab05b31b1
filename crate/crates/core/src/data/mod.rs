//! Stereo sample preparation: raster IO, bicubic degradation, patching,
//! augmentation and the synthetic stereo generator.

pub mod augment;
pub mod bicubic;
pub mod image_io;
pub mod manifest;
pub mod patches;
pub mod sample;
pub mod synth;

pub use augment::{augment, flip_horizontal, flip_vertical, AugmentConfig};
pub use bicubic::bicubic_resize;
pub use image_io::{load_image, save_image};
pub use manifest::{DatasetManifest, Split, SplitCounts};
pub use patches::{extract_patches, PatchSpec};
pub use sample::StereoSample;
pub use synth::{synth_stereo, SynthConfig};
