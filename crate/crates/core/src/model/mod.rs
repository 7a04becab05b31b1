//! Network definition: shared feature extractor, atrous parallax attention
//! and symmetric SR reconstruction.

pub mod apam;
pub mod feature;
pub mod layers;
pub mod network;
pub mod params;

pub use apam::{warp, Direction, DisparityMask, MaskPair};
pub use network::{batch1, Dcssr, ForwardOutputs, Model, ModelConfig, StereoInputs};
pub use params::{Bound, ParamId, ParamStore};

#[cfg(test)]
mod tests;
