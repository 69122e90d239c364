//! Lifelong pre-training engine for tiny byte-level transformer language models.
//!
//! A stream of domain corpora is learned stage by stage: between stages the
//! model can grow in width (function-preserving neuron duplication) and depth
//! (adjacent layer insertion), recover lost function by warming up on replay
//! memory, and condition every input on a per-domain soft prompt. Perplexity
//! bookkeeping (AP / AP+ / ARS) and attention exports make the efficiency and
//! forgetting behaviour of each strategy measurable.
//!
//! All numeric kernels are generic over the scalar type through [`Scalar`];
//! production paths run on `f32` (see the aliases below) while test oracles
//! instantiate the same code at `f64`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod expansion;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Production tensor type (checkpoints store exactly these bits).
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision tensor, used by oracles and available to callers.
pub type Tensor64 = tensor::Tensor<f64>;
/// Production graph/tape type.
pub type Graph32 = tensor::Graph<f32>;
/// Production model type.
pub type Model32 = model::TransformerLM<f32>;
