//! Deterministic synthetic textured images with ground truth.
//!
//! Images are a gentle polynomial background plus anti-aliased line textures
//! repeating quasi-periodically along their expansion directions, with
//! planted anomalies that replace the texture under their footprint and
//! seeded Gaussian noise. Components are stored pre-clamp so their sum
//! reproduces the unclamped image exactly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decompose::{Decomposition, Image};
use crate::error::{Error, Result};
use crate::postprocess::BinaryMask;

/// Texture arrangement of a simulated image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TexturePattern {
    OneDirection,
    Cross,
}

/// Low-order polynomial background over normalized coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub base: f64,
    pub grad_x: f64,
    pub grad_y: f64,
    pub curve_x: f64,
    pub curve_y: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            base: 0.42,
            grad_x: 0.12,
            grad_y: 0.08,
            curve_x: -0.05,
            curve_y: 0.04,
        }
    }
}

impl BackgroundSpec {
    fn eval(&self, u: f64, v: f64) -> f64 {
        self.base + self.grad_x * u + self.grad_y * v + self.curve_x * u * u + self.curve_y * v * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyShape {
    Disk,
    Square,
    Blob,
}

/// A planted anomaly; `amplitude` is the intensity offset against the
/// background (texture is erased under the footprint).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub shape: AnomalyShape,
    /// `(row, col)` center.
    pub center: (usize, usize),
    /// Diameter / side length in pixels.
    pub size: usize,
    pub amplitude: f64,
}

/// Full description of one simulated image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub height: usize,
    pub width: usize,
    pub pattern: TexturePattern,
    /// Texture expansion directions in degrees (repetition directions).
    pub angles_deg: Vec<f64>,
    /// Spacing between texture lines along the expansion direction.
    pub spacing: f64,
    pub texture_amplitude: f64,
    /// Per-line offset jitter amplitude in pixels.
    pub line_jitter: f64,
    pub background: BackgroundSpec,
    pub anomalies: Vec<AnomalySpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SimSpec {
    /// The default simulated scene: 344x351, cross texture with spacing 10
    /// along the 45- and 135-degree expansion directions.
    pub fn default_cross(seed: u64) -> Self {
        Self {
            height: 344,
            width: 351,
            pattern: TexturePattern::Cross,
            angles_deg: vec![45.0, 135.0],
            spacing: 10.0,
            texture_amplitude: 0.2,
            line_jitter: 0.5,
            background: BackgroundSpec::default(),
            anomalies: Vec::new(),
            noise_sigma: 0.01,
            seed,
        }
    }

    pub fn default_one_direction(expansion_deg: f64, seed: u64) -> Self {
        Self {
            pattern: TexturePattern::OneDirection,
            angles_deg: vec![expansion_deg],
            ..Self::default_cross(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::EmptyInput("SimSpec"));
        }
        if self.spacing < 2.0 {
            return Err(Error::InvalidParameter(format!(
                "texture spacing must be at least 2 px, got {}",
                self.spacing
            )));
        }
        if self.noise_sigma < 0.0 || self.line_jitter < 0.0 {
            return Err(Error::InvalidParameter(
                "noise and jitter amplitudes must be nonnegative".into(),
            ));
        }
        match self.pattern {
            TexturePattern::OneDirection if self.angles_deg.len() != 1 => {
                return Err(Error::InvalidParameter(
                    "one-direction pattern needs exactly one angle".into(),
                ))
            }
            TexturePattern::Cross if self.angles_deg.len() != 2 => {
                return Err(Error::InvalidParameter(
                    "cross pattern needs exactly two angles".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

/// A generated image with its ground truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub image: Image,
    pub truth: BinaryMask,
    /// Clean components summing to the pre-clamp image.
    pub components: Decomposition,
    /// Unclamped sum of the components.
    pub preclamp: DMatrix<f64>,
}

/// Generate the image, ground-truth mask, and clean components for a spec.
/// Deterministic in `spec.seed`.
pub fn generate(spec: &SimSpec) -> Result<SimOutput> {
    spec.validate()?;
    let (m, n) = (spec.height, spec.width);

    let background = DMatrix::from_fn(m, n, |r, c| {
        spec.background
            .eval(c as f64 / (n - 1).max(1) as f64, r as f64 / (m - 1).max(1) as f64)
    });

    // Texture: per direction, anti-aliased lines every `spacing` along the
    // expansion direction with per-line jittered offsets.
    let mut texture = DMatrix::zeros(m, n);
    for (dir_idx, angle_deg) in spec.angles_deg.iter().enumerate() {
        let a = angle_deg.to_radians();
        let (px, py) = (a.cos(), a.sin());
        // Range of line indices hit by the image corners.
        let mut proj_min = f64::INFINITY;
        let mut proj_max = f64::NEG_INFINITY;
        for &(cx, cy) in &[(0.0, 0.0), ((n - 1) as f64, 0.0), (0.0, (m - 1) as f64), ((n - 1) as f64, (m - 1) as f64)] {
            let p = cx * px + cy * py;
            proj_min = proj_min.min(p);
            proj_max = proj_max.max(p);
        }
        let k_min = (proj_min / spec.spacing).floor() as i64 - 1;
        let k_max = (proj_max / spec.spacing).ceil() as i64 + 1;
        let mut line_rng =
            ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(dir_idx as u64 + 1)));
        let jitters: Vec<f64> = (k_min..=k_max)
            .map(|_| {
                if spec.line_jitter > 0.0 {
                    line_rng.gen_range(-spec.line_jitter..spec.line_jitter)
                } else {
                    0.0
                }
            })
            .collect();
        let line_offset = |k: i64| -> f64 {
            k as f64 * spec.spacing + jitters[(k - k_min) as usize]
        };
        for r in 0..m {
            for c in 0..n {
                let proj = c as f64 * px + r as f64 * py;
                let k0 = (proj / spec.spacing).round() as i64;
                let mut dist = f64::INFINITY;
                for k in (k0 - 1)..=(k0 + 1) {
                    if (k_min..=k_max).contains(&k) {
                        dist = dist.min((proj - line_offset(k)).abs());
                    }
                }
                texture[(r, c)] += spec.texture_amplitude * (1.0 - dist).max(0.0);
            }
        }
    }

    // Anomalies replace the texture under their footprint.
    let mut anomaly = DMatrix::zeros(m, n);
    let mut truth = BinaryMask::new(m, n);
    let mut footprint = 0usize;
    let mut blob_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x51ed_270b));
    for spec_a in &spec.anomalies {
        let pixels = anomaly_support(spec_a, &mut blob_rng);
        for (r, c) in pixels {
            if r >= m || c >= n {
                return Err(Error::InvalidParameter(format!(
                    "anomaly at ({}, {}) extends outside the {m}x{n} image",
                    spec_a.center.0, spec_a.center.1
                )));
            }
            if !truth.get(r, c) {
                truth.set(r, c, true);
                footprint += 1;
            }
            anomaly[(r, c)] = spec_a.amplitude - texture[(r, c)];
        }
    }
    if footprint * 10 > m * n {
        return Err(Error::InvalidParameter(format!(
            "anomaly footprint {footprint} px exceeds 10% of the image"
        )));
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(format!("bad noise sigma: {e}")))?;
    let noise = DMatrix::from_fn(m, n, |_, _| {
        if spec.noise_sigma > 0.0 {
            normal.sample(&mut noise_rng)
        } else {
            0.0
        }
    });

    let preclamp = &background + &texture + &anomaly + &noise;
    let image = Image::from_clamped(preclamp.clone())?;
    Ok(SimOutput {
        image,
        truth,
        components: Decomposition {
            background,
            texture,
            anomaly,
            residual: noise,
        },
        preclamp,
    })
}

fn anomaly_support(spec: &AnomalySpec, blob_rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let (cr, cc) = (spec.center.0 as isize, spec.center.1 as isize);
    let size = spec.size as isize;
    let mut pixels = Vec::new();
    match spec.shape {
        AnomalyShape::Disk => {
            let radius = spec.size as f64 / 2.0;
            let reach = radius.ceil() as isize;
            for r in (cr - reach)..=(cr + reach) {
                for c in (cc - reach)..=(cc + reach) {
                    let dr = r as f64 - cr as f64;
                    let dc = c as f64 - cc as f64;
                    if (dr * dr + dc * dc).sqrt() <= radius && r >= 0 && c >= 0 {
                        pixels.push((r as usize, c as usize));
                    }
                }
            }
        }
        AnomalyShape::Square => {
            let top = cr - size / 2;
            let left = cc - size / 2;
            for r in top..top + size {
                for c in left..left + size {
                    if r >= 0 && c >= 0 {
                        pixels.push((r as usize, c as usize));
                    }
                }
            }
        }
        AnomalyShape::Blob => {
            // Union of a few seeded disks scattered around the center.
            let mut seen = std::collections::HashSet::new();
            for _ in 0..4 {
                let or = blob_rng.gen_range(-(size / 3)..=(size / 3));
                let oc = blob_rng.gen_range(-(size / 3)..=(size / 3));
                let radius = blob_rng.gen_range(spec.size as f64 / 4.0..spec.size as f64 / 2.5);
                let reach = radius.ceil() as isize;
                for r in (cr + or - reach)..=(cr + or + reach) {
                    for c in (cc + oc - reach)..=(cc + oc + reach) {
                        let dr = (r - cr - or) as f64;
                        let dc = (c - cc - oc) as f64;
                        if (dr * dr + dc * dc).sqrt() <= radius
                            && r >= 0
                            && c >= 0
                            && seen.insert((r, c))
                        {
                            pixels.push((r as usize, c as usize));
                        }
                    }
                }
            }
        }
    }
    pixels
}

/// The three simulation families: texture direction known to the training
/// step, unknown single direction, unknown crossing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureFamily {
    pub name: String,
    /// Expansion directions handed to the learning step (known a priori);
    /// `None` means the pipeline must detect them.
    pub prior_directions_deg: Option<Vec<f64>>,
    pub train_spec: SimSpec,
    pub test_specs: Vec<SimSpec>,
}

/// Standard anomaly set for one test image.
fn standard_anomalies(height: usize, width: usize, idx: usize) -> Vec<AnomalySpec> {
    let (m, n) = (height as f64, width as f64);
    let at = |fy: f64, fx: f64| ((m * fy) as usize, (n * fx) as usize);
    // Positions shift per image index so images differ beyond the seed.
    let shift = |p: (usize, usize)| (p.0 + 7 * idx, p.1 + 11 * idx);
    vec![
        AnomalySpec {
            shape: AnomalyShape::Disk,
            center: shift(at(0.28, 0.30)),
            size: 14,
            amplitude: -0.45,
        },
        AnomalySpec {
            shape: AnomalyShape::Square,
            center: shift(at(0.62, 0.68)),
            size: 12,
            amplitude: 0.45,
        },
        AnomalySpec {
            shape: AnomalyShape::Blob,
            center: shift(at(0.72, 0.25)),
            size: 16,
            amplitude: -0.40,
        },
    ]
}

/// Build the three labeled simulation families with `images_per_family`
/// defect images each.
pub fn fixture_suite(images_per_family: usize, base_seed: u64) -> Vec<FixtureFamily> {
    let families = [
        ("Prior One-direction", vec![90.0], Some(vec![90.0])),
        ("Non-prior One-direction", vec![0.0], None),
        ("Non-prior Crossing", vec![45.0, 135.0], None),
    ];
    families
        .iter()
        .enumerate()
        .map(|(f_idx, (name, angles, prior))| {
            let pattern = if angles.len() == 1 {
                TexturePattern::OneDirection
            } else {
                TexturePattern::Cross
            };
            let mk = |seed: u64, anomalies: Vec<AnomalySpec>| SimSpec {
                pattern,
                angles_deg: angles.clone(),
                anomalies,
                seed,
                ..SimSpec::default_cross(seed)
            };
            let family_seed = base_seed.wrapping_add(1000 * f_idx as u64);
            let train_spec = mk(family_seed, Vec::new());
            let test_specs = (0..images_per_family)
                .map(|i| {
                    let seed = family_seed + 1 + i as u64;
                    mk(seed, standard_anomalies(344, 351, i))
                })
                .collect();
            FixtureFamily {
                name: (*name).to_string(),
                prior_directions_deg: prior.clone(),
                train_spec,
                test_specs,
            }
        })
        .collect()
}

/// Manifest entry for one generated image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub truth: Option<String>,
    pub seed: u64,
    pub spec: SimSpec,
}

/// On-disk description of a generated family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub family: String,
    pub prior_directions_deg: Option<Vec<f64>>,
    pub train: ManifestEntry,
    pub tests: Vec<ManifestEntry>,
}
