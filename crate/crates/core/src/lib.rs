//! Clustering with a vector-quantized autoencoder coupled to a regularized
//! information-maximization discriminator, together with classic baselines,
//! clustering metrics and survival analysis.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod export;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pca;
pub mod pipeline;
pub mod rim;
pub mod rng;
pub mod special;
pub mod survival;
pub mod synthetic;
pub mod vq;

pub use error::{Error, Result};
pub use linalg::Matrix;
