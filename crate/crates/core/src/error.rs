use std::collections::BTreeSet;

use crate::transport::TransportError;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A real value does not fit the fixed-point range.
    #[error("value {value} at index {index} exceeds the representable range ±{bound}")]
    Overflow {
        index: usize,
        value: f64,
        bound: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("fixed-point parameters differ between operands")]
    ParamsMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid privacy budget: epsilon={epsilon}, delta={delta}")]
    InvalidBudget { epsilon: f64, delta: f64 },

    /// Theorem-style noise scaling needs at least `T + 2` clients.
    #[error("insufficient clients: N={n_clients} must exceed T+1={}", .collusion_tolerance + 1)]
    InsufficientClients {
        n_clients: usize,
        collusion_tolerance: usize,
    },

    #[error("tail bound undefined: threshold {t} must exceed the l1 mean {mean}")]
    InvalidThreshold { t: f64, mean: f64 },

    #[error("duplicate message from client {0}")]
    DuplicateClient(u32),

    /// More clients dropped than the collusion tolerance allows; the round must abort.
    #[error("{} clients dropped, tolerance is {tolerance}", .dropped.len())]
    TooManyDropouts {
        dropped: BTreeSet<u32>,
        tolerance: usize,
    },

    #[error("inconsistent partials: {0}")]
    InconsistentPartials(String),

    #[error("matrix is not positive definite even after the largest ridge increment")]
    NotPositiveDefinite,

    #[error("malformed frame: {0}")]
    Codec(String),

    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
