//! Optimisation: initialisation, Adam, learning-rate schedule, checkpoints
//! and the training loop.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod trainer;

#[cfg(test)]
mod tests;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use optim::{lr_schedule, Adam, AdamConfig};
pub use trainer::{train_from_manifest, Trainer};
