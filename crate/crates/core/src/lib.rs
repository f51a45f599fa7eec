//! Scale-GAN training laboratory.
//!
//! A small reverse-mode autodiff engine, MLP generator and intensity-conditioned
//! discriminator, scaling schedules and augmentation transforms, the variance
//! regularized objective, a training loop with checkpoints, and grid oracles
//! for the optimal discriminator.

pub mod augmentation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod optim;
pub mod oracle;
pub mod par;
pub mod strategy;
pub mod sweep;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
