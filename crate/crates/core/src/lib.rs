//! Generative stochastic networks: a denoising auto-encoder whose
//! reconstruction distribution is an autoregressive density estimator, run as
//! a Markov chain to draw samples.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corruption;
pub mod data;
pub mod error;
pub mod eval;
pub mod gsn;
pub mod net;
pub mod random;
pub mod recon;
pub mod tensor;

pub use corruption::{CorruptionSpec, NoiseLevel};
pub use data::{DataKind, Dataset};
pub use error::{Error, Result};
pub use gsn::{GsnModel, ModelSpec, TrainConfig, TrainMode};
pub use recon::ReconKind;
