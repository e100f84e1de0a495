//! Continual learning with lightweight SVD-based replay generators.
//!
//! Each finished task is summarised per class by a rank-`r` generator (the
//! leading left singular vectors plus a Gaussian over their coefficients),
//! which later feeds A-GEM or Experience Replay in place of raw samples.

pub mod cli;
pub mod config;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod strategies;
pub mod tasks;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::DenseMatrix<f64>;
pub type Dataset = tasks::Dataset<f64>;
pub type TaskSequence = tasks::TaskSequence<f64>;
pub type GeneratorRecord = generator::GeneratorRecord<f64>;
pub type GeneratorStore = generator::GeneratorStore<f64>;
pub type MlpParams = nn::MlpParams<f64>;
pub type GradientVector = nn::GradientVector<f64>;
pub type Batch = nn::Batch<f64>;
