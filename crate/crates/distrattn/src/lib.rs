//! DistrAttention on CPU: approximate self-attention that shrinks the
//! embedding dimension by grouping similar Q columns with locality-sensitive
//! hashing, sampling one representative column per group, and fusing the
//! matching K^T rows, all inside a blocked streaming-softmax attention loop.
//!
//! The crate ships three attention backends behind one contract (naive exact,
//! blocked exact, and the approximate `distr` backend), an analytic block-size
//! planner driven by a shared-memory occupancy model, and an error-evaluation
//! harness for synthesized workloads. The `distrattn` binary exposes all of it
//! on the command line.
//!
//! ```
//! use distrattn::attention::{attention_naive, attention_blocked_exact, AttentionConfig, Backend};
//! use distrattn::matrix::{Matrix, Rng};
//!
//! let mut rng = Rng::new(7);
//! let q = Matrix::random_uniform(&mut rng, 32, 16);
//! let k = Matrix::random_uniform(&mut rng, 32, 16);
//! let v = Matrix::random_uniform(&mut rng, 32, 16);
//!
//! let cfg = AttentionConfig::new(Backend::BlockedExact).with_blocks(8, 8);
//! let exact = attention_naive(&q, &k, &v, &cfg).unwrap();
//! let blocked = attention_blocked_exact(&q, &k, &v, &cfg).unwrap();
//! for (a, b) in exact.data().iter().zip(blocked.data()) {
//!     assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
//! }
//! ```

pub mod attention;
pub mod batch;
pub mod dtns;
pub mod eval;
pub mod grouping;
pub mod lsh;
pub mod matrix;
pub mod planner;

use thiserror::Error;

/// Errors shared across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("group size {group_size} does not divide d={d}")]
    Divisibility { d: usize, group_size: usize },
    #[error("invalid permutation of 0..{0}")]
    InvalidPermutation(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no feasible block configuration: {binding}")]
    Infeasible { binding: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("bad tensor file: {0}")]
    BadTensorFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
