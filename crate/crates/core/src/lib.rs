//! Edge-factorization molecular graph autoencoder.
//!
//! A graph convolutional encoder and LSTM aggregator map a molecule to a
//! latent code; an LSTM generator unrolls node embeddings from that code and
//! edges are recovered by a per-bond-type diagonal bilinear form. The whole
//! decoder output is a continuous probabilistic graph, so a property
//! predictor can steer it by gradient.

pub mod chem;
pub mod conditional;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor used for training and checkpoints.
pub type Tensor = tensor::Tensor<f32>;
pub type ParameterStore = tensor::ParameterStore<f32>;
