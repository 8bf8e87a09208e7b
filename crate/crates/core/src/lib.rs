//! Causal knowledge tracing.
//!
//! A GRU knowledge-tracing model whose recurrent weights are masked by
//! `M = P L Pᵀ`, where `P` is a Sinkhorn-relaxed permutation giving a causal
//! ordering of skills and `L` is a lower-triangular structure matrix. After
//! training, thresholding `L` and relabeling it through the hard ordering
//! yields a prerequisite DAG over skills.

// Validation code writes `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod heads;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sinkhorn;
pub mod trainer;

pub use error::{Error, Result};
