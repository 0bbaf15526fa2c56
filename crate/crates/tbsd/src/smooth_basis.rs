//! Separable B-spline smooth bases and roughness penalties.
//!
//! The background model is `C_bg = B_y * theta * B_x^T` with per-axis
//! clamped uniform B-spline bases. `k` counts knot intervals, so each axis
//! carries `p = k + L - 1` basis functions of degree `L`; `k = 2` yields the
//! minimal (Bezier-like) basis. The roughness matrix `R = D^T D` penalizes
//! first differences of adjacent coefficients.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Clamped uniform knot vector over `[0, x_max]` for `p` basis functions of
/// the given degree.
fn knot_vector(p: usize, degree: usize, x_max: f64) -> Vec<f64> {
    let intervals = (p - degree) as f64; // k - 1
    let mut knots = Vec::with_capacity(p + degree + 1);
    for i in 0..=(p + degree) {
        let t = if i <= degree {
            0.0
        } else if i >= p {
            x_max
        } else {
            (i - degree) as f64 * x_max / intervals
        };
        knots.push(t);
    }
    knots
}

/// Index of the knot span containing `x` (last span at the right boundary).
fn find_span(knots: &[f64], degree: usize, p: usize, x: f64) -> usize {
    if x >= knots[p] {
        return p - 1;
    }
    let mut lo = degree;
    let mut hi = p;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `degree + 1` basis functions that are nonzero on `span`, evaluated at
/// `x` (triangular recurrence on local knot differences).
fn basis_funs(knots: &[f64], span: usize, degree: usize, x: f64) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Evaluate the B-spline design matrix on the integer grid `0..axis_length`.
///
/// Returns an `axis_length x (k + L - 1)` matrix whose rows sum to one.
pub fn build_bspline_basis(axis_length: usize, k: usize, degree: usize) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "knot-interval count k must be at least 2, got {k}"
        )));
    }
    let p = k + degree - 1;
    if axis_length < degree + 1 || axis_length < p {
        return Err(Error::AxisTooShort {
            axis_length,
            basis_count: p,
            degree,
        });
    }
    let x_max = (axis_length - 1) as f64;
    let knots = knot_vector(p, degree, x_max);
    let mut basis = DMatrix::zeros(axis_length, p);
    for i in 0..axis_length {
        let x = i as f64;
        let span = find_span(&knots, degree, p, x);
        let vals = basis_funs(&knots, span, degree, x);
        for (offset, v) in vals.iter().enumerate() {
            basis[(i, span - degree + offset)] = *v;
        }
    }
    Ok(basis)
}

/// First-difference roughness penalty `R = D^T D` with `D` the
/// `(p-1) x p` matrix of rows `[..., 1, -1, ...]`.
pub fn build_roughness(p: usize) -> Result<DMatrix<f64>> {
    if p < 2 {
        return Err(Error::InvalidParameter(format!(
            "roughness matrix needs p >= 2, got {p}"
        )));
    }
    let mut d = DMatrix::zeros(p - 1, p);
    for i in 0..p - 1 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -1.0;
    }
    Ok(d.transpose() * d)
}

/// Separable smooth basis: per-axis design and roughness matrices.
#[derive(Debug, Clone)]
pub struct SmoothBasis {
    b_x: DMatrix<f64>,
    b_y: DMatrix<f64>,
    r_x: DMatrix<f64>,
    r_y: DMatrix<f64>,
    degree: usize,
    k_x: usize,
    k_y: usize,
}

impl SmoothBasis {
    /// Basis for an `height x width` image with the same knot-interval count
    /// on both axes.
    pub fn new(height: usize, width: usize, k: usize, degree: usize) -> Result<Self> {
        Self::with_knot_counts(height, width, k, k, degree)
    }

    pub fn with_knot_counts(
        height: usize,
        width: usize,
        k_y: usize,
        k_x: usize,
        degree: usize,
    ) -> Result<Self> {
        let b_y = build_bspline_basis(height, k_y, degree)?;
        let b_x = build_bspline_basis(width, k_x, degree)?;
        let r_y = build_roughness(b_y.ncols())?;
        let r_x = build_roughness(b_x.ncols())?;
        Ok(Self {
            b_x,
            b_y,
            r_x,
            r_y,
            degree,
            k_x,
            k_y,
        })
    }

    /// Default cubic basis with roughly one basis function per
    /// `max(8, axis/12)` pixels, which keeps the background rank well below
    /// the image rank.
    pub fn auto(height: usize, width: usize) -> Result<Self> {
        let degree = 3;
        Self::with_knot_counts(
            height,
            width,
            Self::default_knot_count(height, degree),
            Self::default_knot_count(width, degree),
            degree,
        )
    }

    pub fn default_knot_count(axis_length: usize, degree: usize) -> usize {
        let spacing = (axis_length as f64 / 12.0).max(8.0);
        let p = ((axis_length as f64 / spacing).round() as usize).max(degree + 1);
        (p + 1).saturating_sub(degree).max(2)
    }

    pub fn b_x(&self) -> &DMatrix<f64> {
        &self.b_x
    }

    pub fn b_y(&self) -> &DMatrix<f64> {
        &self.b_y
    }

    pub fn r_x(&self) -> &DMatrix<f64> {
        &self.r_x
    }

    pub fn r_y(&self) -> &DMatrix<f64> {
        &self.r_y
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knot_counts(&self) -> (usize, usize) {
        (self.k_y, self.k_x)
    }

    /// Image height this basis was built for.
    pub fn height(&self) -> usize {
        self.b_y.nrows()
    }

    /// Image width this basis was built for.
    pub fn width(&self) -> usize {
        self.b_x.nrows()
    }

    /// Per-axis ridge smoothers.
    pub fn hat_operator(&self, lambda: f64) -> Result<HatOperator> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothness weight must be finite and nonnegative, got {lambda}"
            )));
        }
        let h_x = hat_matrix(&self.b_x, &self.r_x, lambda)?;
        let h_y = hat_matrix(&self.b_y, &self.r_y, lambda)?;
        Ok(HatOperator { h_x, h_y, lambda })
    }

    /// Penalized least-squares coefficients for `data` (already background
    /// plus residual, i.e. `Y - C_tex`), solved per axis.
    pub fn estimate_theta(&self, data: &DMatrix<f64>, lambda: f64) -> Result<SmoothCoeffs> {
        if data.nrows() != self.b_y.nrows() || data.ncols() != self.b_x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "data is {}x{} but the basis was built for {}x{}",
                data.nrows(),
                data.ncols(),
                self.b_y.nrows(),
                self.b_x.nrows()
            )));
        }
        let along_y = ridge_solve(&self.b_y, &self.r_y, lambda, data)?;
        let theta = ridge_solve(&self.b_x, &self.r_x, lambda, &along_y.transpose())?.transpose();
        Ok(SmoothCoeffs { theta })
    }

    /// Quadratic roughness of `theta` under the separable penalty induced by
    /// the per-axis smoothers: `tr(th^T ByTBy th Rx) + tr(th^T Ry th BxTBx)
    /// + lambda tr(th^T Ry th Rx)`. The two-sided ridge solve is the exact
    /// minimizer of `|data - By th Bx^T|^2 + lambda * penalty`.
    pub fn smoothness_penalty(&self, theta: &DMatrix<f64>, lambda: f64) -> f64 {
        let byt_by = self.b_y.transpose() * &self.b_y;
        let bxt_bx = self.b_x.transpose() * &self.b_x;
        let term1 = (theta.transpose() * &byt_by * theta * &self.r_x).trace();
        let term2 = (theta.transpose() * &self.r_y * theta * &bxt_bx).trace();
        let term3 = (theta.transpose() * &self.r_y * theta * &self.r_x).trace();
        term1 + term2 + lambda * term3
    }
}

/// Per-axis smoother matrices `H = B (B^T B + lambda R)^{-1} B^T`.
#[derive(Debug, Clone)]
pub struct HatOperator {
    h_x: DMatrix<f64>,
    h_y: DMatrix<f64>,
    lambda: f64,
}

impl HatOperator {
    pub fn h_x(&self) -> &DMatrix<f64> {
        &self.h_x
    }

    pub fn h_y(&self) -> &DMatrix<f64> {
        &self.h_y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Separable 2D smoothing `C -> H_y C H_x^T`.
    pub fn apply(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        &self.h_y * data * self.h_x.transpose()
    }
}

/// Coefficient matrix of the smooth background.
#[derive(Debug, Clone)]
pub struct SmoothCoeffs {
    theta: DMatrix<f64>,
}

impl SmoothCoeffs {
    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// Background reconstruction `B_y theta B_x^T`.
    pub fn reconstruct(&self, basis: &SmoothBasis) -> DMatrix<f64> {
        basis.b_y() * &self.theta * basis.b_x().transpose()
    }
}

/// Solve `(B^T B + lambda R) X = B^T rhs` by Cholesky, falling back to a
/// minimum-norm eigen pseudo-inverse when the normal matrix is rank
/// deficient (possible at `lambda = 0`).
pub fn ridge_solve(
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    lambda: f64,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if b.nrows() != rhs.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows but rhs has {}",
            b.nrows(),
            rhs.nrows()
        )));
    }
    let g = b.transpose() * b + r * lambda;
    let bt_rhs = b.transpose() * rhs;
    match g.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&bt_rhs)),
        None => {
            let pinv = pseudo_inverse_spd(&g)?;
            Ok(pinv * bt_rhs)
        }
    }
}

fn hat_matrix(b: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let solved = ridge_solve(b, r, lambda, &DMatrix::identity(b.nrows(), b.nrows()))?;
    let h = b * solved;
    // The algebraic result is symmetric; enforce it against roundoff.
    Ok((&h + h.transpose()) * 0.5)
}

/// Eigen pseudo-inverse of a symmetric positive semidefinite matrix.
fn pseudo_inverse_spd(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(g.clone());
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if max_ev <= 0.0 {
        return Err(Error::SingularSystem);
    }
    let cutoff = max_ev * 1e-12;
    let inv_vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&ev| if ev > cutoff { 1.0 / ev } else { 0.0 })
        .collect();
    let q = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(inv_vals));
    Ok(q * d * q.transpose())
}
