//! Coupled SIFT x color multi-index for near-duplicate and object image
//! retrieval, with a one-dimensional bag-of-words baseline, Hamming
//! signatures on both axes, and an evaluation harness.

pub mod codebook;
pub mod error;
pub mod eval;
pub mod features;
pub mod index;
pub mod query;
pub mod signatures;

pub use error::{Error, Result};
