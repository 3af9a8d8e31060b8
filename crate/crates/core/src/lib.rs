//! Desk-scale multimodal bitransformer classifier.
//!
//! A self-contained implementation of a bidirectional transformer that
//! fuses grid-pooled image embeddings with text tokens via early
//! self-attention, together with its unimodal and late-fusion baselines,
//! staged freeze/unfreeze training, evaluation metrics and hard test-set
//! construction. All numerics run on a small reverse-mode autodiff core.

pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Concrete scalar aliases; the tensor core itself is generic over the
/// float type, everything above it runs at f64.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
