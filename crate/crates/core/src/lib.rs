//! Functional regularization for representation learning: synthetic data
//! worlds, trainable two-stage pipelines, sample-complexity calculators,
//! a finite-class Monte-Carlo check and function-space embeddings.

mod error;

pub mod numkit;
pub mod synthgen;
pub mod models;
pub mod trainer;
pub mod bounds;
pub mod pacmc;
pub mod funcspace;
pub mod experiment;

pub use error::{Error, Result};
