//! Anomaly detection on defect images.
//!
//! The solver alternates four block updates: ridge smoothing for the
//! background, per-tile projection plus shrinkage for the texture
//! coefficients, texture reconstruction, and soft thresholding for the
//! sparse anomaly component. The smooth-plus-sparse baseline is the same
//! loop without a texture dictionary; with the texture contribution forced
//! to zero the two coincide exactly.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::decompose::{soft_threshold, Decomposition, Image};
use crate::error::{Error, Result};
use crate::postprocess::BinaryMask;
use crate::smooth_basis::{SmoothBasis, SmoothCoeffs};
use crate::texture_learning::{analyze_texture, reconstruct_texture, TextureBasis, TileLayout};

/// Weights and controls of the detection solver.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionParams {
    /// Background smoothness weight.
    pub lambda: f64,
    /// Texture-coefficient sparsity weight.
    pub gamma: f64,
    /// Anomaly sparsity weight.
    pub eta: f64,
    /// Number of block-update sweeps.
    pub iter_times: usize,
    /// Texture/background balance applied before anomaly thresholding.
    pub phi_bt: f64,
    /// Defect-proportion alarm threshold (fraction of pixels).
    pub phi_a: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            gamma: 0.2,
            eta: 0.05,
            iter_times: 1,
            phi_bt: 0.5,
            phi_a: 0.02,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("eta", self.eta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.iter_times < 1 {
            return Err(Error::InvalidParameter("iterTimes must be at least 1".into()));
        }
        if !(self.phi_bt > 0.0) || !self.phi_bt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "phi_B/T must be positive, got {}",
                self.phi_bt
            )));
        }
        if !(0.0..1.0).contains(&self.phi_a) || self.phi_a == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "phi_A must lie in (0, 1), got {}",
                self.phi_a
            )));
        }
        Ok(())
    }
}

/// Sparse texture coefficients, one column per tile.
#[derive(Debug, Clone)]
pub struct TextureCoeffs {
    coeffs: DMatrix<f64>,
}

impl TextureCoeffs {
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v.abs()).sum()
    }

    pub fn nonzeros(&self) -> usize {
        self.coeffs.iter().filter(|v| **v != 0.0).count()
    }
}

/// Texture-coefficient block update: per-tile projection onto the atoms
/// followed by soft thresholding at `gamma / 2`. Exact block minimizer for
/// orthonormal atoms.
pub fn estimate_theta_t(
    residual_after_bg: &DMatrix<f64>,
    basis: &TextureBasis,
    layout: &TileLayout,
    gamma: f64,
) -> Result<TextureCoeffs> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(TextureCoeffs {
        coeffs: analyze_texture(residual_after_bg, basis, layout, gamma)?,
    })
}

/// Full state of a detection run, kept for the objective trace and tests.
#[derive(Debug, Clone)]
pub struct DetectionOutcome {
    pub decomposition: Decomposition,
    pub smooth_coeffs: SmoothCoeffs,
    pub texture_coeffs: Option<TextureCoeffs>,
    /// Model objective after each sweep.
    pub objective_trace: Vec<f64>,
}

/// Detection driver shared by the texture-aware solver and the baseline.
fn detect_loop(
    y: &Image,
    smooth: &SmoothBasis,
    texture: Option<(&TextureBasis, TileLayout)>,
    params: &DetectionParams,
) -> Result<DetectionOutcome> {
    params.validate()?;
    if y.height() != smooth.height() || y.width() != smooth.width() {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{} but the smooth basis was built for {}x{}",
            y.height(),
            y.width(),
            smooth.height(),
            smooth.width()
        )));
    }
    let (m, n) = (y.height(), y.width());
    let mut texture_recon = DMatrix::zeros(m, n);
    let mut theta_t: Option<TextureCoeffs> = None;
    let mut anomaly = DMatrix::zeros(m, n);
    let mut background = DMatrix::zeros(m, n);
    let mut coeffs = smooth.estimate_theta(&background, params.lambda)?; // zero start
    let mut trace = Vec::with_capacity(params.iter_times);

    for _ in 0..params.iter_times {
        let bg_target = y.pixels() - &texture_recon - &anomaly;
        coeffs = smooth.estimate_theta(&bg_target, params.lambda)?;
        background = coeffs.reconstruct(smooth);

        if let Some((basis, layout)) = &texture {
            let residual = y.pixels() - &background - &anomaly;
            let tc = estimate_theta_t(&residual, basis, layout, params.gamma)?;
            texture_recon = reconstruct_texture(basis, tc.coeffs(), layout)?;
            theta_t = Some(tc);
        }

        let pre_threshold = y.pixels() - &background - &texture_recon * params.phi_bt;
        anomaly = soft_threshold(&pre_threshold, params.eta / 2.0)?;

        trace.push(model_objective(
            y,
            smooth,
            params,
            &coeffs,
            theta_t.as_ref(),
            &texture_recon,
            &anomaly,
        ));
    }

    let residual = y.pixels() - &background - &texture_recon - &anomaly;
    Ok(DetectionOutcome {
        decomposition: Decomposition {
            background,
            texture: texture_recon,
            anomaly,
            residual,
        },
        smooth_coeffs: coeffs,
        texture_coeffs: theta_t,
        objective_trace: trace,
    })
}

/// Objective of the detection model: residual energy, smoothness penalty,
/// texture-coefficient sparsity, anomaly sparsity.
fn model_objective(
    y: &Image,
    smooth: &SmoothBasis,
    params: &DetectionParams,
    coeffs: &SmoothCoeffs,
    theta_t: Option<&TextureCoeffs>,
    texture_recon: &DMatrix<f64>,
    anomaly: &DMatrix<f64>,
) -> f64 {
    let background = coeffs.reconstruct(smooth);
    let residual = y.pixels() - background - texture_recon - anomaly;
    let fit: f64 = residual.iter().map(|v| v * v).sum();
    let pen = smooth.smoothness_penalty(coeffs.theta(), params.lambda);
    let tex_l1 = theta_t.map_or(0.0, TextureCoeffs::l1_norm);
    let anom_l1: f64 = anomaly.iter().map(|v| v.abs()).sum();
    fit + params.lambda * pen + params.gamma * tex_l1 + params.eta * anom_l1
}

/// Texture-aware detection (requires a nonempty texture basis).
pub fn tbsd_detect(
    y: &Image,
    smooth: &SmoothBasis,
    texture_basis: &TextureBasis,
    params: &DetectionParams,
) -> Result<Decomposition> {
    tbsd_detect_full(y, smooth, texture_basis, params).map(|o| o.decomposition)
}

/// Texture-aware detection, returning coefficients and the objective trace.
pub fn tbsd_detect_full(
    y: &Image,
    smooth: &SmoothBasis,
    texture_basis: &TextureBasis,
    params: &DetectionParams,
) -> Result<DetectionOutcome> {
    if texture_basis.atom_count() == 0 {
        return Err(Error::EmptyBasis);
    }
    let layout = TileLayout::cover(y.height(), y.width(), texture_basis.patch_shape());
    detect_loop(y, smooth, Some((texture_basis, layout)), params)
}

/// Smooth-plus-sparse baseline: the same alternation with the sparse
/// component read as anomalies and no texture term.
pub fn ssd_baseline_detect(
    y: &Image,
    smooth: &SmoothBasis,
    params: &DetectionParams,
) -> Result<Decomposition> {
    ssd_baseline_detect_full(y, smooth, params).map(|o| o.decomposition)
}

pub fn ssd_baseline_detect_full(
    y: &Image,
    smooth: &SmoothBasis,
    params: &DetectionParams,
) -> Result<DetectionOutcome> {
    detect_loop(y, smooth, None, params)
}

/// Binarized anomaly mask with the detected-pixel proportion and alarm flag.
#[derive(Debug, Clone)]
pub struct MaskReport {
    pub mask: BinaryMask,
    pub proportion: f64,
    pub alarm: bool,
}

/// Threshold `|C_a|` at `binarize_eps`; the alarm fires when the detected
/// proportion exceeds `phi_a`.
pub fn anomaly_mask(decomp: &Decomposition, binarize_eps: f64, phi_a: f64) -> MaskReport {
    let (m, n) = (decomp.anomaly.nrows(), decomp.anomaly.ncols());
    let mut mask = BinaryMask::new(m, n);
    let mut count = 0usize;
    for r in 0..m {
        for c in 0..n {
            if decomp.anomaly[(r, c)].abs() > binarize_eps {
                mask.set(r, c, true);
                count += 1;
            }
        }
    }
    let proportion = count as f64 / (m * n) as f64;
    MaskReport {
        mask,
        proportion,
        alarm: proportion > phi_a,
    }
}

/// Default binarization threshold in `[0, 1]` intensity units: suppresses
/// float dust left by soft thresholding.
pub const DEFAULT_BINARIZE_EPS: f64 = 1e-3;

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthonormal_basis(
        patch: (usize, usize),
        atoms: usize,
        seed: u64,
    ) -> TextureBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = patch.0 * patch.1;
        let raw = DMatrix::from_fn(p, atoms, |_, _| rng.gen_range(-1.0..1.0));
        let q = raw.qr().q();
        TextureBasis::from_parts(q, patch, vec![0.0], "test".into()).unwrap()
    }

    #[test]
    fn orthogonal_residual_gives_zero_coefficients() {
        let basis = random_orthonormal_basis((4, 4), 2, 1);
        let layout = TileLayout::cover(4, 4, (4, 4));
        // Build a residual orthogonal to both atoms.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = DVector::from_fn(16, |_, _| rng.gen_range(-1.0..1.0));
        let proj = basis.atoms() * (basis.atoms().transpose() * &raw);
        let ortho = raw - proj;
        let residual = DMatrix::from_fn(4, 4, |r, c| ortho[r * 4 + c]);
        let tc = estimate_theta_t(&residual, &basis, &layout, 0.2).unwrap();
        assert_eq!(tc.nonzeros(), 0);
    }

    #[test]
    fn unit_atom_residual_shrinks_by_half_gamma() {
        let basis = random_orthonormal_basis((4, 4), 3, 3);
        let layout = TileLayout::cover(4, 4, (4, 4));
        let atom1: DVector<f64> = basis.atoms().column(1).into_owned();
        let residual = DMatrix::from_fn(4, 4, |r, c| atom1[r * 4 + c]);
        let tc = estimate_theta_t(&residual, &basis, &layout, 0.2).unwrap();
        let c = tc.coeffs();
        assert!((c[(1, 0)] - 0.9).abs() < 1e-10, "coefficient {}", c[(1, 0)]);
        assert!(c[(0, 0)].abs() < 1e-10);
        assert!(c[(2, 0)].abs() < 1e-10);
    }

    /// Cyclic coordinate descent on the tile lasso objective, independent of
    /// the closed-form update.
    fn lasso_cd(atoms: &DMatrix<f64>, r: &DVector<f64>, gamma: f64) -> DVector<f64> {
        let k = atoms.ncols();
        let mut c = DVector::zeros(k);
        for _ in 0..500 {
            let mut changed = 0.0_f64;
            for j in 0..k {
                let aj = atoms.column(j);
                let mut rho = aj.dot(r);
                for i in 0..k {
                    if i != j {
                        rho -= atoms.column(i).dot(&aj) * c[i];
                    }
                }
                let new = crate::decompose::soft_threshold_scalar(rho, gamma / 2.0);
                let delta: f64 = new - c[j];
                changed = changed.max(delta.abs());
                c[j] = new;
            }
            if changed < 1e-12 {
                break;
            }
        }
        c
    }

    #[test]
    fn theta_t_matches_coordinate_descent_oracle() {
        let basis = random_orthonormal_basis((4, 4), 4, 4);
        let layout = TileLayout::cover(4, 4, (4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let residual = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let tc = estimate_theta_t(&residual, &basis, &layout, 0.2).unwrap();
            let r_vec = DVector::from_fn(16, |i, _| residual[(i / 4, i % 4)]);
            let oracle = lasso_cd(basis.atoms(), &r_vec, 0.2);
            let got: DVector<f64> = tc.coeffs().column(0).into_owned();
            assert!(
                (got - oracle).abs().max() < 1e-6,
                "closed form disagrees with coordinate descent"
            );
        }
    }

    fn random_image(m: usize, n: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(DMatrix::from_fn(m, n, |_, _| rng.gen_range(0.0..1.0))).unwrap()
    }

    #[test]
    fn additivity_after_every_iteration() {
        let smooth = SmoothBasis::new(24, 28, 4, 3).unwrap();
        let basis = random_orthonormal_basis((6, 7), 5, 6);
        let y = random_image(24, 28, 7);
        for iters in [1usize, 3] {
            let params = DetectionParams {
                iter_times: iters,
                ..DetectionParams::default()
            };
            let out = tbsd_detect(&y, &smooth, &basis, &params).unwrap();
            assert!((out.source() - y.pixels()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn paper_defaults_validate() {
        let p = DetectionParams::default();
        assert!(p.validate().is_ok());
        assert_eq!(
            (p.lambda, p.gamma, p.eta, p.iter_times, p.phi_bt, p.phi_a),
            (0.1, 0.2, 0.05, 1, 0.5, 0.02)
        );
    }

    #[test]
    fn zero_texture_contribution_degenerates_to_the_baseline() {
        let smooth = SmoothBasis::new(26, 24, 4, 3).unwrap();
        let basis = random_orthonormal_basis((6, 6), 4, 8);
        for seed in 0..5u64 {
            let y = random_image(26, 24, 100 + seed);
            // A huge gamma soft-thresholds every texture coefficient to zero.
            let params = DetectionParams {
                gamma: 1e12,
                iter_times: 2,
                ..DetectionParams::default()
            };
            let tbsd = tbsd_detect(&y, &smooth, &basis, &params).unwrap();
            let base = ssd_baseline_detect(&y, &smooth, &params).unwrap();
            assert!((tbsd.background - base.background).abs().max() <= 1e-12);
            assert!((tbsd.anomaly - base.anomaly).abs().max() <= 1e-12);
            assert!(tbsd.texture.abs().max() == 0.0);
        }
    }

    #[test]
    fn anomaly_support_shrinks_with_eta() {
        let smooth = SmoothBasis::new(24, 24, 4, 3).unwrap();
        let y = random_image(24, 24, 9);
        let nnz = |eta: f64| {
            let params = DetectionParams {
                eta,
                ..DetectionParams::default()
            };
            let out = ssd_baseline_detect(&y, &smooth, &params).unwrap();
            out.anomaly.iter().filter(|v| **v != 0.0).count()
        };
        let n1 = nnz(0.02);
        let n2 = nnz(0.05);
        let n3 = nnz(0.2);
        assert!(n2 <= n1);
        assert!(n3 <= n2);
    }

    #[test]
    fn huge_sparsity_weight_empties_the_anomaly_component() {
        let smooth = SmoothBasis::new(24, 24, 4, 3).unwrap();
        let y = random_image(24, 24, 10);
        let params = DetectionParams {
            eta: 1e9,
            ..DetectionParams::default()
        };
        let out = ssd_baseline_detect(&y, &smooth, &params).unwrap();
        assert_eq!(out.anomaly.iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn objective_is_monotone_at_unit_balance() {
        // phi_B/T = 1 makes every block update the exact minimizer, so the
        // objective cannot increase.
        let smooth = SmoothBasis::new(24, 24, 4, 3).unwrap();
        let basis = random_orthonormal_basis((6, 6), 5, 11);
        for seed in 0..5u64 {
            let y = random_image(24, 24, 200 + seed);
            let params = DetectionParams {
                iter_times: 10,
                phi_bt: 1.0,
                ..DetectionParams::default()
            };
            let out = tbsd_detect_full(&y, &smooth, &basis, &params).unwrap();
            for w in out.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "objective rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn unit_balance_matches_the_plain_update() {
        // With phi_B/T = 1 the anomaly update is S_{eta/2}(Y - C_bg - C_tex).
        let smooth = SmoothBasis::new(20, 20, 4, 3).unwrap();
        let basis = random_orthonormal_basis((5, 5), 3, 12);
        let y = random_image(20, 20, 13);
        let params = DetectionParams {
            phi_bt: 1.0,
            ..DetectionParams::default()
        };
        let out = tbsd_detect(&y, &smooth, &basis, &params).unwrap();
        let expected = soft_threshold(
            &(y.pixels() - &out.background - &out.texture),
            params.eta / 2.0,
        )
        .unwrap();
        assert!((out.anomaly - expected).abs().max() < 1e-12);
    }

    #[test]
    fn mask_report_counts_and_alarm() {
        let mut anomaly = DMatrix::zeros(10, 10);
        anomaly[(2, 2)] = 0.5;
        anomaly[(3, 3)] = -0.4;
        anomaly[(4, 4)] = 5e-4; // below the binarization threshold
        let decomp = Decomposition {
            background: DMatrix::zeros(10, 10),
            texture: DMatrix::zeros(10, 10),
            anomaly,
            residual: DMatrix::zeros(10, 10),
        };
        let report = anomaly_mask(&decomp, DEFAULT_BINARIZE_EPS, 0.02);
        assert_eq!(report.mask.count_ones(), 2);
        assert!((report.proportion - 0.02).abs() < 1e-12);
        assert!(!report.alarm, "proportion must exceed phi_A strictly");

        let report = anomaly_mask(&decomp, DEFAULT_BINARIZE_EPS, 0.01);
        assert!(report.alarm);

        let report = anomaly_mask(&decomp, f64::INFINITY, 0.01);
        assert_eq!(report.mask.count_ones(), 0);
        assert_eq!(report.proportion, 0.0);
        assert!(!report.alarm);
    }

    #[test]
    fn rejects_invalid_params_and_shapes() {
        let smooth = SmoothBasis::new(20, 20, 4, 3).unwrap();
        let basis = random_orthonormal_basis((5, 5), 3, 14);
        let y = random_image(20, 20, 15);
        for bad in [
            DetectionParams {
                lambda: 0.0,
                ..DetectionParams::default()
            },
            DetectionParams {
                eta: -0.1,
                ..DetectionParams::default()
            },
            DetectionParams {
                iter_times: 0,
                ..DetectionParams::default()
            },
            DetectionParams {
                phi_a: 0.0,
                ..DetectionParams::default()
            },
        ] {
            assert!(tbsd_detect(&y, &smooth, &basis, &bad).is_err());
        }
        let tall = random_image(30, 20, 16);
        assert!(matches!(
            tbsd_detect(&tall, &smooth, &basis, &DetectionParams::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
