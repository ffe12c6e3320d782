//! Convolutional networks with structural-similarity (SSIM) layers.
//!
//! The [`ssim::SsimLayer`] replaces the dot product of a convolution with the
//! SSIM index between each filter and the input patch under it, and
//! back-propagates through it analytically. Around it sit the usual pieces
//! needed to train and attack small image classifiers on CIFAR-10.

pub mod adversarial;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod ssim;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelSpec, Network};
pub use tensor::Tensor;
