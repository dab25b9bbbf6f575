//! Variational autoencoders whose latent mean is trained to match a given 2-D
//! projection and whose latent covariance is regularized by its differential
//! entropy. The encoder serves as a parametric projection and the decoder as
//! an inverse projection.
//!
//! Everything runs on a small reverse-mode autodiff engine in [`tensor`].

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod latent;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
pub use latent::{GaussianLatent, Head};
pub use losses::{LossBreakdown, LossWeights, ReconKind};
pub use model::{Model, ModelConfig};
pub use tensor::{Graph, Tensor, Var};
pub use trainer::{TrainReport, TrainSettings};
