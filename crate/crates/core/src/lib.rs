//! Rank-order spike codes, an associative sequence memory built on them, and
//! the positional-encoding and burst-propagation studies that go with it.

pub mod burst;
pub mod codes;
pub mod context;
pub mod error;
pub mod matrix;
pub mod posenc;
pub mod sdm;
pub mod seqmachine;
pub mod spikeattn;
pub mod stats;

pub use codes::{CodeParams, RankOrderCode, SignificanceVector};
pub use error::{Error, Result};
pub use matrix::Matrix;
