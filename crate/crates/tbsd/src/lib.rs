//! Texture Basis Integrated Smooth Decomposition (TBSD).
//!
//! Decomposes textured surface images into a smooth low-rank background, a
//! quasi-periodic texture component, and a sparse anomaly component. The
//! texture component is represented by an orthonormal dictionary of patch
//! basis functions learned from defect-free images, which keeps normal
//! textures from being misidentified as anomalies during detection.
//!
//! The crate is organized along the processing pipeline:
//!
//! * [`signals`] — 1D/2D periodic and quasi-periodic signal constructors and
//!   verifiers; the math kernel behind the texture model.
//! * [`smooth_basis`] — separable B-spline bases, roughness penalties, and
//!   ridge smoothers for the background.
//! * [`decompose`] — alternating background/texture decomposition of
//!   defect-free images.
//! * [`quasi_detect`] — rotational line sampling and texture expansion
//!   direction detection.
//! * [`texture_learning`] — seed-growth patch clustering and orthonormal
//!   texture dictionary construction.
//! * [`anomaly_detect`] — the detection solver for defect images plus the
//!   smooth-plus-sparse baseline.
//! * [`postprocess`] — closed-boundary region filling and pixelwise metrics.
//! * [`simulate`] — deterministic synthetic datasets with ground truth.
//! * [`pipeline`] — end-to-end orchestration shared by the CLI and tests.

pub mod anomaly_detect;
pub mod decompose;
pub mod error;
pub mod pipeline;
pub mod postprocess;
pub mod quasi_detect;
pub mod signals;
pub mod simulate;
pub mod smooth_basis;
pub mod texture_learning;

pub use error::{Error, Result};
