//! Word-level sign recognition from keypoint sequences.
//!
//! The crate provides a small reverse-mode autodiff engine ([`autograd`]), a
//! layer library ([`nn`]), two classifier architectures ([`models`]), the
//! training stack ([`training`]), evaluation and latency benchmarking
//! ([`eval`]) and keypoint dataset handling ([`data`]).

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
