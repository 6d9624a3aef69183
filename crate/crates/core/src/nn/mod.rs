//! Minimal differentiable engine: a gradient tape, parameter storage,
//! deterministic initialization, Adam, and tensor-file serialization.

mod adam;
mod params;
mod real;
mod serialize;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use params::{Bound, Init, ParamStore, Parameter};
pub use real::Real;
pub use serialize::{read_tensor_file, write_tensor_file, TensorFile};
pub use tape::{BatchMoments, NormStats, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("channel mismatch: layer expects {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("malformed tensor file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Train or inference behaviour of batch norm and latent sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Stable 64-bit FNV-1a, used to derive per-name random substreams.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
