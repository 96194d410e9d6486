//! Dual-branch VAE-GAN with a learned Mahalanobis metric for generalized
//! zero-shot classification over precomputed feature vectors.
//!
//! The numeric core is generic over [`scalar::Real`]; the aliases below pin
//! it to `f64`, which is what the data, training and CLI layers use.

mod codec;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metric;
pub mod model;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossWeights};
pub use model::{FusionMode, ModelConfig};

pub type Tensor = diffcore::Tensor<f64>;
pub type Tape = diffcore::Tape<f64>;
pub type AdamState = diffcore::AdamState<f64>;
pub type MetricMatrix = metric::MetricMatrix<f64>;
pub type CholeskyFactor = metric::CholeskyFactor<f64>;
pub type ModelParameters = model::ModelParameters<f64>;
pub type LatentSample = model::LatentSample<f64>;
