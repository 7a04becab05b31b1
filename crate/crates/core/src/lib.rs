//! Disparity-constrained stereo super-resolution.
//!
//! The crate bundles a small define-by-run tensor engine ([`tensor`]), a
//! synthetic stereo data pipeline ([`data`]), the network itself
//! ([`model`]), its composite training objective ([`losses`]), image quality
//! metrics ([`metrics`]) and the optimisation loop ([`train`]).

pub mod data;
pub mod error;
pub mod exec;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
pub use tensor::{Element, Graph, Tensor, Var};
