//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("voxel index ({0}, {1}, {2}) out of bounds for grid {3}x{4}x{5}")]
    OutOfBounds(usize, usize, usize, usize, usize, usize),

    #[error("bad volume file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("packing failed: placed {placed} of {requested} particles after {attempts} attempts (min_dist {min_dist} um)")]
    Packing {
        placed: usize,
        requested: usize,
        attempts: usize,
        min_dist: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bad geometry: {0}")]
    Geometry(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
