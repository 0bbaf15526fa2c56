//! Alternating low-rank/smooth decomposition of defect-free images.
//!
//! The driver alternates a separable ridge smoothing step for the background
//! with an elementwise soft-threshold step for the texture, starting from a
//! zero texture estimate. Each half step is the exact minimizer of the
//! defect-free objective in its own block, so the objective never increases.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::smooth_basis::{SmoothBasis, SmoothCoeffs};

/// Intensity image with entries in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Image {
    pixels: DMatrix<f64>,
}

impl Image {
    pub fn new(pixels: DMatrix<f64>) -> Result<Self> {
        if pixels.nrows() == 0 || pixels.ncols() == 0 {
            return Err(Error::EmptyInput("Image"));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Image"));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter(
                "image intensities must lie in [0, 1]; normalize first".into(),
            ));
        }
        Ok(Self { pixels })
    }

    /// Clamp arbitrary real data into `[0, 1]`.
    pub fn from_clamped(pixels: DMatrix<f64>) -> Result<Self> {
        let clamped = pixels.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        Self::new(clamped)
    }

    /// Grayscale conversion with the usual luminance weights; inputs are
    /// per-channel matrices scaled to `[0, 1]`.
    pub fn from_rgb(r: &DMatrix<f64>, g: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        if r.shape() != g.shape() || g.shape() != b.shape() {
            return Err(Error::DimensionMismatch(
                "color channels have different shapes".into(),
            ));
        }
        let gray = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| {
            0.299 * r[(i, j)] + 0.587 * g[(i, j)] + 0.114 * b[(i, j)]
        });
        Self::from_clamped(gray)
    }

    pub fn pixels(&self) -> &DMatrix<f64> {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }
}

/// The four additive components of a decomposed image.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub background: DMatrix<f64>,
    pub texture: DMatrix<f64>,
    pub anomaly: DMatrix<f64>,
    pub residual: DMatrix<f64>,
}

impl Decomposition {
    /// Sum of the stored components; equals the source image up to float
    /// roundoff.
    pub fn source(&self) -> DMatrix<f64> {
        &self.background + &self.texture + &self.anomaly + &self.residual
    }
}

/// Elementwise `sgn(x) * (|x| - t)_+`, the proximal map of `t * | . |`.
pub fn soft_threshold_scalar(x: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    x.signum() * (x.abs() - t).max(0.0)
}

/// Matrix soft threshold; rejects negative thresholds.
pub fn soft_threshold(data: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "soft threshold must be finite and nonnegative, got {t}"
        )));
    }
    Ok(data.map(|x| soft_threshold_scalar(x, t)))
}

/// Background/texture decomposition of a defect-free image.
#[derive(Debug, Clone)]
pub struct DefectFreeDecomposition {
    pub background: DMatrix<f64>,
    pub texture: DMatrix<f64>,
    pub coeffs: SmoothCoeffs,
}

impl DefectFreeDecomposition {
    pub fn residual(&self, y: &Image) -> DMatrix<f64> {
        y.pixels() - &self.background - &self.texture
    }

    /// Promote to a four-component decomposition with a zero anomaly part.
    pub fn into_decomposition(self, y: &Image) -> Decomposition {
        let residual = self.residual(y);
        Decomposition {
            background: self.background,
            texture: self.texture,
            anomaly: DMatrix::zeros(y.height(), y.width()),
            residual,
        }
    }
}

/// Alternate `C_bg <- H (Y - C_tex)` and `C_tex <- S_{gamma/2}(Y - C_bg)` for
/// exactly `iter_times` iterations from `C_tex = 0`.
pub fn low_rank_decompose(
    y: &Image,
    basis: &SmoothBasis,
    lambda: f64,
    gamma: f64,
    iter_times: usize,
) -> Result<DefectFreeDecomposition> {
    low_rank_decompose_with_trace(y, basis, lambda, gamma, iter_times).map(|(d, _)| d)
}

/// Same as [`low_rank_decompose`], also returning the defect-free objective
/// after every iteration.
pub fn low_rank_decompose_with_trace(
    y: &Image,
    basis: &SmoothBasis,
    lambda: f64,
    gamma: f64,
    iter_times: usize,
) -> Result<(DefectFreeDecomposition, Vec<f64>)> {
    validate_weights(lambda, gamma, iter_times)?;
    if y.height() != basis.height() || y.width() != basis.width() {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{} but the basis was built for {}x{}",
            y.height(),
            y.width(),
            basis.height(),
            basis.width()
        )));
    }

    let mut texture = DMatrix::zeros(y.height(), y.width());
    let mut coeffs = basis.estimate_theta(&texture, lambda)?; // zero start
    let mut background = DMatrix::zeros(y.height(), y.width());
    let mut trace = Vec::with_capacity(iter_times);

    for _ in 0..iter_times {
        coeffs = basis.estimate_theta(&(y.pixels() - &texture), lambda)?;
        background = coeffs.reconstruct(basis);
        texture = soft_threshold(&(y.pixels() - &background), gamma / 2.0)?;
        trace.push(defect_free_objective(y, basis, lambda, gamma, &coeffs, &texture));
    }

    Ok((
        DefectFreeDecomposition {
            background,
            texture,
            coeffs,
        },
        trace,
    ))
}

/// Defect-free objective `|Y - B th Bx' - C_tex|^2 + lambda * pen(th)
/// + gamma * |C_tex|_1`.
pub fn defect_free_objective(
    y: &Image,
    basis: &SmoothBasis,
    lambda: f64,
    gamma: f64,
    coeffs: &SmoothCoeffs,
    texture: &DMatrix<f64>,
) -> f64 {
    let background = coeffs.reconstruct(basis);
    let residual = y.pixels() - &background - texture;
    let fit: f64 = residual.iter().map(|v| v * v).sum();
    let pen = basis.smoothness_penalty(coeffs.theta(), lambda);
    let l1: f64 = texture.iter().map(|v| v.abs()).sum();
    fit + lambda * pen + gamma * l1
}

fn validate_weights(lambda: f64, gamma: f64, iter_times: usize) -> Result<()> {
    if iter_times < 1 {
        return Err(Error::InvalidParameter("iterTimes must be at least 1".into()));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(())
}
