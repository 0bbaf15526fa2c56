//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction and pipeline preconditions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid period {period} for domain {domain}: a period must lie in (1, n)")]
    InvalidPeriod { period: usize, domain: usize },

    #[error("segmentation sums to {sum} but the signal has length {expected}")]
    SegmentationMismatch { sum: usize, expected: usize },

    #[error("invalid quasi-periodic spec: {0}")]
    InvalidQuasiSpec(String),

    #[error("segment {start}..{end} out of range for component of length {len}")]
    SegmentOutOfRange { start: usize, end: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("axis of length {axis_length} is too short for {basis_count} basis functions of degree {degree}")]
    AxisTooShort {
        axis_length: usize,
        basis_count: usize,
        degree: usize,
    },

    #[error("normal matrix is singular and no pseudo-inverse could be formed")]
    SingularSystem,

    #[error("sampling datum ({x:.1}, {y:.1}) lies outside the {height}x{width} image")]
    DatumOutsideImage {
        x: f64,
        y: f64,
        height: usize,
        width: usize,
    },

    #[error("no usable samples at rotation index {rotation}: image too small for the sampling config")]
    NoSamples { rotation: usize },

    #[error("texture basis is empty")]
    EmptyBasis,

    #[error("no texture expansion directions detected")]
    NoDirections,

    #[error("all candidate patches rasterized to the zero vector")]
    DegeneratePatches,
}

pub type Result<T> = std::result::Result<T, Error>;
