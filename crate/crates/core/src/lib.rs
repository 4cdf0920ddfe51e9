//! Consensus-aware supervision and evaluation for perceptual quality scorers.

pub mod analysis;
pub mod arrays;
pub mod calibration;
pub mod datamodel;
pub mod error;
pub mod gradcheck;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod special;
pub mod synthlab;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Five-level distribution in double precision.
pub type LevelDistributionF64 = datamodel::LevelDistribution<f64>;
/// Five-level distribution in single precision.
pub type LevelDistributionF32 = datamodel::LevelDistribution<f32>;
pub type SoftLabelF64 = labels::SoftLabel<f64>;
pub type SoftLabelF32 = labels::SoftLabel<f32>;
pub type HyperparamsF64 = datamodel::Hyperparams<f64>;
pub type HyperparamsF32 = datamodel::Hyperparams<f32>;
pub type LossBreakdownF64 = losses::LossBreakdown<f64>;
pub type LossBreakdownF32 = losses::LossBreakdown<f32>;
