//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Rejected input: dimensions, ranges, or preconditions violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A point could not be snapped onto the grid within ds/2.
    #[error("point '{label}' off grid: snap distance {distance_m} m >= ds/2 = {limit_m} m")]
    OffGridPoint {
        label: String,
        distance_m: f64,
        limit_m: f64,
    },

    /// The integer element kernel derivation produced a non-integer or
    /// out-of-range entry; signals a construction bug, not input noise.
    #[error("int8 kernel construction failed at ({row},{col}): value {value}")]
    KernelConstruction { row: usize, col: usize, value: f64 },

    /// Time stepping produced a non-finite displacement.
    #[error("instability detected at step {step}: non-finite displacement")]
    Instability { step: usize },

    /// The exact-arithmetic oracle is restricted to desk-scale problems.
    #[error("problem too large for the exact oracle: {elems} elements (limit {limit})")]
    OracleTooLarge { elems: usize, limit: usize },

    /// Waveform sets cannot be compared.
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("model file error: {0}")]
    ModelFormat(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
