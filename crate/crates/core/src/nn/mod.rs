//! Minimal dense-network engine.
//!
//! Networks are stacks of fully connected layers. A layer either owns its
//! weight matrix or reuses the transpose of an earlier layer's matrix, which
//! is how the tied autoencoder decoder is expressed. Training uses batched
//! `ndarray` products; single-pose inference goes through an allocation-light
//! path ([`MlpModel::infer`]).

mod adam;
mod io;
mod loss;
mod model;

pub use adam::{AdamConfig, AdamState};
pub use io::{load_weights, save_weights};
pub use loss::{mse, mse_batch};
pub use model::{
    Activation, DenseLayer, ForwardCache, Gradients, InferenceScratch, LayerSpec, MlpModel, Weights,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid layer stack: {0}")]
    InvalidStack(String),
    #[error("forward cache does not match this model")]
    StaleCache,
    #[error("parameter/gradient shape mismatch")]
    ShapeMismatch,
    #[error("corrupt weight file: {0}")]
    CorruptHeader(String),
    #[error("weight file size mismatch: expected {expected} bytes, got {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("non-finite parameters")]
    NonFinite,
}
