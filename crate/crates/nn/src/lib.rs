//! Minimal reverse-mode autodiff and a small causal transformer trained on a
//! positional copy task.

pub mod copytask;
pub mod error;
pub mod gradcheck;
pub mod nnkit;
pub mod optim;
pub mod transformer;

pub use error::{NnError, Result};
pub use nnkit::{Tape, Tensor, Var};
