//! Fair latent representations of tabular data.
//!
//! This crate trains two deep generative models — a variational fair
//! auto-encoder (VFAE) and a hierarchical variant with an optional VampPrior
//! mixture prior — that learn a representation `z1` carrying the label signal
//! while discarding a sensitive attribute `s`. Fairness is enforced with a
//! maximum mean discrepancy penalty (exact or via random Fourier features) or
//! a conditional mutual-information penalty, under full or partial
//! observation of `s`. A built-in audit (logistic-regression probe plus a
//! discrimination score) measures how much sensitive information leaks into
//! the representation.
//!
//! Everything runs on a small f64 dense-network core with reverse-mode
//! gradients and Adam. Inner loops are data-parallel via rayon when the
//! `parallel` feature (default) is enabled; disabling it yields a fully
//! sequential build that produces bit-identical results.

pub mod backend;
pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod models;
pub mod nn;
pub mod optim;
pub mod regularizers;
pub mod rng;
pub mod semisup;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};
pub use tensor::Tensor;
