//! Packing-aware pruning for small fully-connected networks, plus a mock
//! homomorphic-encryption simulator that runs inference over tile tensors and
//! counts the ciphertext operations a real CKKS backend would issue.
//!
//! The crate covers the full pipeline: train an autoencoder, prune it with
//! weight/neuron/tile criteria, permute rows and columns so that zeros gather
//! into whole tiles, optionally re-expand partially-zero tiles, retrain under
//! the frozen mask, then pack into tiles and simulate encrypted inference with
//! zero-tile elimination.
//!
//! All randomness in the crate flows from one documented 64-bit generator,
//! see [`rng`], so every result is reproducible from a seed.

pub mod data;
pub mod exactsum;
pub mod hesim;
pub mod matrix;
pub mod nn;
pub mod permute;
pub mod pipeline;
pub mod pruning;
pub mod report;
pub mod rng;
pub mod tiling;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Validation problems (bad arguments, malformed
/// files) map to CLI exit code 1, broken internal invariants to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed binary input; `offset` is the byte position that failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Two shapes that must agree do not.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A user-supplied parameter is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration file parsed but its contents are unusable.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The requested operation would leave the network structurally broken,
    /// for example pruning every neuron of a layer.
    #[error("structural error: {0}")]
    Structural(String),

    /// Input too large for an exhaustive routine with a hard size guard.
    #[error("size guard: {0}")]
    SizeGuard(String),

    /// No grid point satisfied the sweep objective.
    #[error("no grid point satisfies the objective {0}")]
    NoFeasiblePoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
