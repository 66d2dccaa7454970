use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the matting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("unsupported or undecodable image: {0}")]
    Decode(String),

    #[error("image has zero width or height")]
    EmptyImage,

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("superpixel {superpixel} hit by conflicting classes {first} and {second}")]
    ScribbleConflict {
        superpixel: usize,
        first: char,
        second: char,
    },

    #[error("stroke point ({x}, {y}) lies outside the {width}x{height} image")]
    StrokeOutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("no labeled superpixels to absorb the chain")]
    NoLabels,

    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("trimap has no known pixels")]
    NoKnownPixels,

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("cnn propagation skipped: {0}")]
    HarvestSkipped(String),

    #[error("all regions have been visited")]
    NoRegionsLeft,

    #[error("operation not allowed in phase {phase}")]
    WrongPhase { phase: String },

    #[error("external solver failed: {0}")]
    ExternalSolver(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
