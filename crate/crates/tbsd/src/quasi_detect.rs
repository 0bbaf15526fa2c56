//! Rotational line sampling and texture direction detection.
//!
//! The image is reduced to 1D signals by sampling along parallel lines at
//! each rotation angle. Sampling along the texture extension direction
//! produces a line profile that alternates between texture and background
//! (high deviation across lines), while sampling along the expansion
//! direction flattens it; thresholding the per-angle deviations yields the
//! texture expansion direction set used for basis learning.
//!
//! Angles live in `[0, pi)` and are measured from the +x (column) axis
//! toward +y (rows grow downward); a down-right diagonal is 45 degrees.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parameters of the rotational line sampler.
#[derive(Debug, Clone)]
pub struct SamplingConfig {
    /// Number of parallel sampling lines per angle (centered on the datum).
    pub line_count: usize,
    /// Sampling width `l_w`: perpendicular neighbors averaged per sample.
    pub line_width: usize,
    /// Gap `l_g` between neighboring line centers, in pixels.
    pub center_gap: f64,
    /// Number of rotation angles over `[0, pi)`.
    pub max_rotate: usize,
    /// Datum point `(x, y)` the line pencil rotates around.
    pub datum: (f64, f64),
}

impl SamplingConfig {
    /// Full-coverage sampler for an `height x width` image: unit angle 5
    /// degrees, a line per pixel offset across the whole diagonal (so a
    /// 1-px texture ridge is never aliased away), datum at the image center.
    pub fn for_image(height: usize, width: usize) -> Self {
        let diag = ((height * height + width * width) as f64).sqrt();
        let center_gap = 1.0;
        Self {
            line_count: (diag / center_gap).ceil() as usize | 1,
            line_width: 1,
            center_gap,
            max_rotate: 36,
            datum: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        }
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.line_count == 0
            || self.line_width == 0
            || self.max_rotate == 0
            || !(self.center_gap > 0.0)
        {
            return Err(Error::InvalidParameter(
                "sampling config fields must all be positive".into(),
            ));
        }
        let (x, y) = self.datum;
        if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
            return Err(Error::DatumOutsideImage {
                x,
                y,
                height,
                width,
            });
        }
        Ok(())
    }
}

/// Ordered per-line sample sequences for one rotation angle.
#[derive(Debug, Clone)]
pub struct AngleSample {
    pub angle: f64,
    pub lines: Vec<Vec<f64>>,
}

impl AngleSample {
    /// All samples at this angle, line by line.
    pub fn concatenated(&self) -> Vec<f64> {
        self.lines.iter().flatten().copied().collect()
    }

    /// Mean of each sampling line (the angle's Radon-style profile).
    pub fn line_means(&self) -> Vec<f64> {
        self.lines
            .iter()
            .map(|l| l.iter().sum::<f64>() / l.len() as f64)
            .collect()
    }

    /// Standard deviation of the line-mean profile.
    pub fn profile_std(&self) -> f64 {
        std_dev(&self.line_means())
    }

    /// Standard deviation over the concatenation of all samples.
    pub fn concatenated_std(&self) -> f64 {
        std_dev(&self.concatenated())
    }
}

fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Per-angle sample sets produced by [`lsera_sample`].
#[derive(Debug, Clone)]
pub struct AngleSamples {
    unit_angle: f64,
    angles: Vec<AngleSample>,
}

impl AngleSamples {
    pub fn unit_angle(&self) -> f64 {
        self.unit_angle
    }

    pub fn max_rotate(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[AngleSample] {
        &self.angles
    }

    pub fn at(&self, k: usize) -> &AngleSample {
        &self.angles[k]
    }
}

/// Bilinear interpolation with border clamping.
fn bilinear(data: &DMatrix<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = (data.nrows(), data.ncols());
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    data[(y0, x0)] * (1.0 - fx) * (1.0 - fy)
        + data[(y0, x1)] * fx * (1.0 - fy)
        + data[(y1, x0)] * (1.0 - fx) * fy
        + data[(y1, x1)] * fx * fy
}

/// Parameter range of the line `p + t * u` inside the image rectangle.
fn clip_line_to_rect(
    p: (f64, f64),
    u: (f64, f64),
    width: f64,
    height: f64,
) -> Option<(f64, f64)> {
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for (origin, dir, limit) in [(p.0, u.0, width), (p.1, u.1, height)] {
        if dir.abs() < 1e-12 {
            if origin < 0.0 || origin > limit {
                return None;
            }
        } else {
            let t0 = (0.0 - origin) / dir;
            let t1 = (limit - origin) / dir;
            t_min = t_min.max(t0.min(t1));
            t_max = t_max.min(t0.max(t1));
        }
    }
    (t_min <= t_max).then_some((t_min, t_max))
}

/// Sample the image along parallel lines at each rotation angle
/// `k * pi / max_rotate`, lines offset by `center_gap` along the
/// perpendicular and each sample averaged over `line_width` perpendicular
/// neighbors. Samples are ordered monotonically along the line direction
/// and clipped to the image.
pub fn lsera_sample(data: &DMatrix<f64>, config: &SamplingConfig) -> Result<AngleSamples> {
    let (h, w) = (data.nrows(), data.ncols());
    config.validate(h, w)?;
    let unit_angle = PI / config.max_rotate as f64;
    let half_span = (config.line_count as isize - 1) / 2;
    let width_offsets: Vec<f64> = (0..config.line_width)
        .map(|j| j as f64 - (config.line_width as f64 - 1.0) / 2.0)
        .collect();

    let mut angles = Vec::with_capacity(config.max_rotate);
    for k in 0..config.max_rotate {
        let alpha = k as f64 * unit_angle;
        let u = (alpha.cos(), alpha.sin());
        let v = (-alpha.sin(), alpha.cos());
        let mut lines = Vec::new();
        for gap_idx in -half_span..=(config.line_count as isize - 1 - half_span) {
            let offset = gap_idx as f64 * config.center_gap;
            let center = (config.datum.0 + offset * v.0, config.datum.1 + offset * v.1);
            let Some((t_min, t_max)) =
                clip_line_to_rect(center, u, (w - 1) as f64, (h - 1) as f64)
            else {
                continue;
            };
            let mut line = Vec::new();
            let mut t = t_min.ceil();
            while t <= t_max + 1e-9 {
                let px = center.0 + t * u.0;
                let py = center.1 + t * u.1;
                // Average over in-bounds width neighbors.
                let mut acc = 0.0;
                let mut count = 0usize;
                for &j in &width_offsets {
                    let qx = px + j * v.0;
                    let qy = py + j * v.1;
                    if qx >= -1e-9
                        && qy >= -1e-9
                        && qx <= (w - 1) as f64 + 1e-9
                        && qy <= (h - 1) as f64 + 1e-9
                    {
                        acc += bilinear(data, qx, qy);
                        count += 1;
                    }
                }
                if count > 0 {
                    line.push(acc / count as f64);
                }
                t += 1.0;
            }
            if !line.is_empty() {
                lines.push(line);
            }
        }
        if lines.is_empty() {
            return Err(Error::NoSamples { rotation: k });
        }
        angles.push(AngleSample {
            angle: alpha,
            lines,
        });
    }
    Ok(AngleSamples { unit_angle, angles })
}

/// Rule for turning per-angle deviations into a direction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DirectionRule {
    /// Threshold the per-angle profile deviation itself. Detects any number
    /// of texture directions, including crossings.
    #[default]
    ProfileStd,
    /// Threshold the paired difference `F(k) = std(k) - std(k + pi/2)`.
    /// Blind to crossing textures (the pair cancels); kept for
    /// experimentation with the opposite convention.
    PaperF,
}

/// Fraction of the criterion range a band peak must reach; screens out the
/// beat-frequency echoes that line textures leave at oblique angles.
const PEAK_DOMINANCE: f64 = 0.75;

/// Argmax index of each contiguous run of `true` entries, treating the
/// array as circular.
fn circular_run_peaks(selected: &[bool], criterion: &[f64]) -> Vec<usize> {
    let n = selected.len();
    if selected.iter().all(|&s| s) {
        // One full circle: a single peak.
        return criterion
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| vec![k])
            .unwrap_or_default();
    }
    // Start scanning just after a gap so runs never wrap mid-iteration.
    let start = match selected.iter().position(|&s| !s) {
        Some(i) => i,
        None => return Vec::new(),
    };
    let mut peaks = Vec::new();
    let mut run_best: Option<usize> = None;
    for offset in 0..n {
        let k = (start + offset) % n;
        if selected[k] {
            run_best = match run_best {
                Some(best) if criterion[best] >= criterion[k] => Some(best),
                _ => Some(k),
            };
        } else if let Some(best) = run_best.take() {
            peaks.push(best);
        }
    }
    if let Some(best) = run_best {
        peaks.push(best);
    }
    peaks.sort_unstable();
    peaks
}

/// Detected texture directions with the per-angle score tables.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    extension: Vec<f64>,
    expansion: Vec<f64>,
    threshold: f64,
    scores: Vec<f64>,
    profile_std: Vec<f64>,
    unit_angle: f64,
}

impl DirectionSet {
    /// Extension directions (radians in `[0, pi)`): along the texture lines.
    pub fn extension(&self) -> &[f64] {
        &self.extension
    }

    /// Expansion directions (radians in `[0, pi)`): across the texture
    /// lines, the direction of repetition.
    pub fn expansion(&self) -> &[f64] {
        &self.expansion
    }

    pub fn expansion_degrees(&self) -> Vec<f64> {
        self.expansion.iter().map(|a| a.to_degrees()).collect()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Paired score table `F(k) = std(k) - std(k + pi/2)`.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Per-angle profile deviations `std(S^(k))`.
    pub fn profile_std(&self) -> &[f64] {
        &self.profile_std
    }

    pub fn unit_angle(&self) -> f64 {
        self.unit_angle
    }

    pub fn is_empty(&self) -> bool {
        self.expansion.is_empty()
    }

    pub fn len(&self) -> usize {
        self.expansion.len()
    }

    /// Direction set from known expansion angles, quantized to the angle
    /// grid (used when the texture direction is prior knowledge).
    pub fn from_expansion_degrees(degrees: &[f64], max_rotate: usize) -> Self {
        let unit_angle = PI / max_rotate as f64;
        let mut expansion: Vec<f64> = degrees
            .iter()
            .map(|d| {
                let a = d.to_radians().rem_euclid(PI);
                (a / unit_angle).round() * unit_angle % PI
            })
            .collect();
        expansion.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expansion.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let extension = expansion
            .iter()
            .map(|a| (a + PI / 2.0).rem_euclid(PI))
            .collect();
        Self {
            extension,
            expansion,
            threshold: 0.0,
            scores: Vec::new(),
            profile_std: Vec::new(),
            unit_angle,
        }
    }

    pub fn to_report(&self) -> DirectionReport {
        DirectionReport {
            unit_angle_deg: self.unit_angle.to_degrees(),
            threshold: self.threshold,
            profile_std: self.profile_std.clone(),
            scores: self.scores.clone(),
            extension_deg: self.extension.iter().map(|a| a.to_degrees()).collect(),
            expansion_deg: self.expansion_degrees(),
        }
    }
}

/// JSON-friendly view of a [`DirectionSet`].
#[derive(Debug, Clone, Serialize)]
pub struct DirectionReport {
    pub unit_angle_deg: f64,
    pub threshold: f64,
    pub profile_std: Vec<f64>,
    pub scores: Vec<f64>,
    pub extension_deg: Vec<f64>,
    pub expansion_deg: Vec<f64>,
}

/// Detect texture directions from per-angle samples. The threshold is the
/// normalized quantile `phi = q * (max - min) + min` of the per-angle
/// deviations; an angle whose deviation exceeds `phi` is an extension
/// direction, and its perpendicular joins the expansion set.
pub fn detect_directions(
    samples: &AngleSamples,
    q: f64,
    rule: DirectionRule,
) -> Result<DirectionSet> {
    if samples.angles.is_empty() {
        return Err(Error::EmptyInput("detect_directions"));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "threshold ratio q must lie in (0, 1), got {q}"
        )));
    }
    let max_rotate = samples.max_rotate();
    if max_rotate % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "max_rotate must be even so that k*theta + pi/2 stays on the angle grid, got {max_rotate}"
        )));
    }
    for (k, a) in samples.angles.iter().enumerate() {
        if a.lines.is_empty() {
            return Err(Error::NoSamples { rotation: k });
        }
    }

    let half = max_rotate / 2;
    let stds: Vec<f64> = samples.angles.iter().map(AngleSample::profile_std).collect();
    let scores: Vec<f64> = (0..max_rotate)
        .map(|k| stds[k] - stds[(k + half) % max_rotate])
        .collect();

    let criterion: Vec<f64> = match rule {
        DirectionRule::ProfileStd => stds.clone(),
        DirectionRule::PaperF => scores.iter().map(|f| f.abs()).collect(),
    };
    let max_c = criterion.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_c = criterion.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = q * (max_c - min_c) + min_c;
    // Interpolation roundoff leaves deviation dust on featureless images;
    // below this floor nothing counts as texture.
    let floor = 1e-12;

    let selected: Vec<bool> = (0..max_rotate)
        .map(|k| {
            max_c > floor
                && match rule {
                    DirectionRule::ProfileStd => stds[k] > threshold,
                    DirectionRule::PaperF => scores[k] > threshold,
                }
        })
        .collect();

    // A texture direction lights up a band of adjacent angles; keep one
    // representative per band (the criterion argmax of each circular run).
    // Shallow-angle sampling of a line family also leaves resonance echoes
    // at unrelated angles, so peaks must additionally dominate the range.
    let dominance = min_c + PEAK_DOMINANCE * (max_c - min_c);
    let mut extension = Vec::new();
    let mut expansion = Vec::new();
    for k in circular_run_peaks(&selected, &criterion) {
        if criterion[k] >= dominance {
            extension.push(samples.angles[k].angle);
            expansion.push(samples.angles[(k + half) % max_rotate].angle);
        }
    }
    Ok(DirectionSet {
        extension,
        expansion,
        threshold,
        scores,
        profile_std: stds,
        unit_angle: samples.unit_angle,
    })
}
