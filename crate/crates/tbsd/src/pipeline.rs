//! End-to-end orchestration: texture-basis learning from a defect-free
//! image and the paired detection study on the simulation families.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::anomaly_detect::{
    anomaly_mask, ssd_baseline_detect, tbsd_detect, DetectionParams,
};
use crate::decompose::{low_rank_decompose, Image};
use crate::error::{Error, Result};
use crate::postprocess::{evaluate, MetricReport};
use crate::quasi_detect::{
    detect_directions, lsera_sample, DirectionRule, DirectionSet, SamplingConfig,
};
use crate::simulate::{fixture_suite, generate, FixtureFamily};
use crate::smooth_basis::SmoothBasis;
use crate::texture_learning::{
    build_texture_basis, build_texture_basis_grid_anchored, knbn_cluster, TextureBasis,
    TileLayout,
};

/// Settings of the texture-basis learning step.
#[derive(Debug, Clone)]
pub struct LearnConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub iter_times: usize,
    pub patch_shape: (usize, usize),
    /// Emission size of the patch clustering.
    pub min_patch_size: usize,
    /// Neighborhood width of the patch clustering.
    pub neighborhood: usize,
    /// Direction threshold ratio.
    pub q: f64,
    pub max_rotate: usize,
    /// Expansion directions known a priori; skips detection when set.
    pub prior_directions_deg: Option<Vec<f64>>,
    /// Rasterize patches through the detection tile grid (phase preserving)
    /// instead of centering them on their bounding boxes.
    pub grid_anchored: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            gamma: 0.2,
            iter_times: 1,
            patch_shape: (17, 17),
            min_patch_size: 30,
            neighborhood: 2,
            q: 0.5,
            max_rotate: 36,
            prior_directions_deg: None,
            grid_anchored: true,
        }
    }
}

/// Everything the learning step produces.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub basis: TextureBasis,
    pub directions: DirectionSet,
    /// Estimated texture component of the training image.
    pub texture_estimate: DMatrix<f64>,
}

/// Learn a texture basis from a defect-free image: decompose, detect (or
/// accept) the expansion directions, cluster texture patches, and
/// orthonormalize the dictionary.
pub fn learn_texture_basis(image: &Image, config: &LearnConfig) -> Result<LearnOutcome> {
    let smooth = SmoothBasis::auto(image.height(), image.width())?;
    let decomposed = low_rank_decompose(
        image,
        &smooth,
        config.lambda,
        config.gamma,
        config.iter_times,
    )?;

    let directions = match &config.prior_directions_deg {
        Some(degs) => DirectionSet::from_expansion_degrees(degs, config.max_rotate),
        None => {
            let mut sampling = SamplingConfig::for_image(image.height(), image.width());
            sampling.max_rotate = config.max_rotate;
            let samples = lsera_sample(&decomposed.texture, &sampling)?;
            detect_directions(&samples, config.q, DirectionRule::ProfileStd)?
        }
    };
    if directions.is_empty() {
        return Err(Error::NoDirections);
    }

    let clusters = knbn_cluster(
        &decomposed.texture,
        &directions,
        config.min_patch_size,
        config.neighborhood,
    )?;
    let basis = if config.grid_anchored {
        let layout = TileLayout::cover(image.height(), image.width(), config.patch_shape);
        build_texture_basis_grid_anchored(&clusters.patches, &layout)?
    } else {
        build_texture_basis(&clusters.patches, config.patch_shape)?
    };
    Ok(LearnOutcome {
        basis,
        directions,
        texture_estimate: decomposed.texture,
    })
}

/// Crop one cell of an `rows x cols` grid split of the image (used to train
/// from a patch of a larger image).
pub fn crop_grid_cell(
    image: &Image,
    rows: usize,
    cols: usize,
    cell_row: usize,
    cell_col: usize,
) -> Result<Image> {
    if rows == 0 || cols == 0 || cell_row >= rows || cell_col >= cols {
        return Err(Error::InvalidParameter(format!(
            "cell ({cell_row}, {cell_col}) outside a {rows}x{cols} grid"
        )));
    }
    let h = image.height() / rows;
    let w = image.width() / cols;
    if h == 0 || w == 0 {
        return Err(Error::InvalidParameter("grid cells would be empty".into()));
    }
    let view = image
        .pixels()
        .view((cell_row * h, cell_col * w), (h, w))
        .into_owned();
    Image::new(view)
}

/// Protocol of the simulation study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub images_per_family: usize,
    pub seed: u64,
    pub detection: DetectionParams,
    pub learn: LearnConfig,
    /// Binarization threshold applied to both methods' anomaly components.
    pub binarize_eps: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            images_per_family: 2,
            seed: 7,
            detection: DetectionParams::default(),
            learn: LearnConfig::default(),
            binarize_eps: 0.05,
        }
    }
}

/// Aggregated scores of one method on one family.
#[derive(Debug, Clone, Serialize)]
pub struct MethodScore {
    pub tpr_mean: f64,
    pub fpr_mean: f64,
    pub per_image: Vec<MetricReport>,
}

impl MethodScore {
    fn from_reports(per_image: Vec<MetricReport>) -> Self {
        let n = per_image.len().max(1) as f64;
        Self {
            tpr_mean: per_image.iter().map(|r| r.tpr).sum::<f64>() / n,
            fpr_mean: per_image.iter().map(|r| r.fpr).sum::<f64>() / n,
            per_image,
        }
    }
}

/// Paired results on one simulation family.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyResult {
    pub name: String,
    pub detected_directions_deg: Vec<f64>,
    pub tbsd: MethodScore,
    pub ssd: MethodScore,
}

/// Run the paired texture-aware vs baseline study over the simulation
/// families: learn a basis per family from its defect-free image, then score
/// both methods' binarized anomaly masks against the planted truth.
pub fn run_fixture_study(config: &StudyConfig) -> Result<Vec<FamilyResult>> {
    let families = fixture_suite(config.images_per_family, config.seed);
    families
        .iter()
        .map(|family| run_family(family, config))
        .collect()
}

fn run_family(family: &FixtureFamily, config: &StudyConfig) -> Result<FamilyResult> {
    let train = generate(&family.train_spec)?;
    let learn_config = LearnConfig {
        prior_directions_deg: family.prior_directions_deg.clone(),
        ..config.learn.clone()
    };
    let learned = learn_texture_basis(&train.image, &learn_config)?;

    let mut tbsd_reports = Vec::new();
    let mut ssd_reports = Vec::new();
    for spec in &family.test_specs {
        let data = generate(spec)?;
        let smooth = SmoothBasis::auto(data.image.height(), data.image.width())?;

        let tbsd_out = tbsd_detect(&data.image, &smooth, &learned.basis, &config.detection)?;
        let tbsd_mask = anomaly_mask(&tbsd_out, config.binarize_eps, config.detection.phi_a);
        tbsd_reports.push(evaluate(&tbsd_mask.mask, &data.truth)?);

        let ssd_out = ssd_baseline_detect(&data.image, &smooth, &config.detection)?;
        let ssd_mask = anomaly_mask(&ssd_out, config.binarize_eps, config.detection.phi_a);
        ssd_reports.push(evaluate(&ssd_mask.mask, &data.truth)?);
    }
    Ok(FamilyResult {
        name: family.name.clone(),
        detected_directions_deg: learned.directions.expansion_degrees(),
        tbsd: MethodScore::from_reports(tbsd_reports),
        ssd: MethodScore::from_reports(ssd_reports),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::SimSpec;

    #[test]
    fn learning_from_a_cross_image_finds_both_directions() {
        let spec = SimSpec::default_cross(41);
        let data = generate(&spec).unwrap();
        let learned = learn_texture_basis(&data.image, &LearnConfig::default()).unwrap();
        let degs = learned.directions.expansion_degrees();
        for want in [45.0, 135.0] {
            assert!(
                degs.iter().any(|d| (d - want).abs() < 5.0 + 1e-9),
                "expansion {want} missing from {degs:?}"
            );
        }
        assert!(learned.basis.atom_count() >= 1);
        let dirs = learned.basis.directions_deg();
        assert!(dirs.iter().any(|d| (d - 45.0).abs() < 5.0 + 1e-9));
        assert!(dirs.iter().any(|d| (d - 135.0).abs() < 5.0 + 1e-9));
    }

    #[test]
    fn constant_images_refuse_to_learn() {
        let image = Image::new(DMatrix::from_element(64, 64, 0.5)).unwrap();
        assert!(matches!(
            learn_texture_basis(&image, &LearnConfig::default()),
            Err(Error::NoDirections)
        ));
    }

    #[test]
    fn grid_cell_cropping() {
        let mut pixels = DMatrix::zeros(40, 40);
        pixels[(5, 5)] = 1.0; // cell (0, 0)
        pixels[(15, 25)] = 1.0; // cell (1, 2)
        let image = Image::new(pixels).unwrap();
        let cell = crop_grid_cell(&image, 4, 4, 0, 0).unwrap();
        assert_eq!((cell.height(), cell.width()), (10, 10));
        assert_eq!(cell.pixels()[(5, 5)], 1.0);
        let cell = crop_grid_cell(&image, 4, 4, 1, 2).unwrap();
        assert_eq!(cell.pixels()[(5, 5)], 1.0);
        assert!(crop_grid_cell(&image, 4, 4, 4, 0).is_err());
    }
}
