//! Closed-boundary generation, interior filling, and pixelwise metrics.
//!
//! Detected defect pixels are clustered (connected under a Chebyshev
//! dilation), swept by angular sectors around each cluster center to pick
//! boundary knots, closed by a periodic cubic spline, and filled by an
//! even-odd point-in-polygon test. Predictions are scored against ground
//! truth with pixelwise true/false positive rates.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Self::new(height, width);
        for r in 0..height {
            for c in 0..width {
                if f(r, c) {
                    mask.set(r, c, true);
                }
            }
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.bits[r * self.width + c] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn ones(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Complement mask.
    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch("mask shapes differ".into()));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }

    /// View as a 0/1 matrix (for image export).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.height, self.width, |r, c| {
            if self.get(r, c) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// One closed defect region.
#[derive(Debug, Clone)]
pub struct DefectRegion {
    /// Boundary knots `(row, col)`: the farthest cluster pixel per angular
    /// sector around the cluster center.
    pub knots: Vec<(usize, usize)>,
    /// Sampled closed boundary curve `(x, y)`; empty for degenerate
    /// clusters that fall back to their own pixels.
    pub curve: Vec<(f64, f64)>,
    /// Pixels inside the closed curve (plus the rasterized curve itself).
    pub area: Vec<(usize, usize)>,
}

impl DefectRegion {
    pub fn mask(&self, height: usize, width: usize) -> BinaryMask {
        let mut mask = BinaryMask::new(height, width);
        for &(r, c) in self.area.iter().chain(self.knots.iter()) {
            if r < height && c < width {
                mask.set(r, c, true);
            }
        }
        mask
    }
}

/// Union of all region masks.
pub fn regions_mask(regions: &[DefectRegion], height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(height, width);
    for region in regions {
        for &(r, c) in region.area.iter().chain(region.knots.iter()) {
            if r < height && c < width {
                mask.set(r, c, true);
            }
        }
    }
    mask
}

/// Close scattered defect pixels into filled regions: cluster under a
/// Chebyshev-`d_max` dilation, pick the farthest pixel per angular sector as
/// a boundary knot, interpolate a closed periodic cubic spline through the
/// knots (sampled at four points per span), and fill the interior by the
/// even-odd rule. Clusters with fewer than three knots fall back to their
/// own pixels.
pub fn close_regions(
    mask: &BinaryMask,
    max_rotate: usize,
    d_max: usize,
) -> Result<Vec<DefectRegion>> {
    if max_rotate < 8 {
        return Err(Error::InvalidParameter(format!(
            "max_rotate must be at least 8, got {max_rotate}"
        )));
    }
    if d_max < 1 {
        return Err(Error::InvalidParameter("d_max must be at least 1".into()));
    }

    let clusters = dilation_clusters(mask, d_max);
    let mut regions = Vec::with_capacity(clusters.len());
    for cluster in clusters {
        regions.push(close_cluster(&cluster, max_rotate, mask.height, mask.width));
    }
    Ok(regions)
}

/// Connected components of the mask where two defect pixels connect when
/// their Chebyshev distance is at most `d_max`.
fn dilation_clusters(mask: &BinaryMask, d_max: usize) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height, mask.width);
    let d = d_max as isize;
    let mut visited = BinaryMask::new(h, w);
    let mut clusters = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) || visited.get(r, c) {
                continue;
            }
            let mut cluster = Vec::new();
            let mut stack = vec![(r, c)];
            visited.set(r, c, true);
            while let Some((cr, cc)) = stack.pop() {
                cluster.push((cr, cc));
                let r0 = (cr as isize - d).max(0) as usize;
                let r1 = ((cr as isize + d) as usize).min(h - 1);
                let c0 = (cc as isize - d).max(0) as usize;
                let c1 = ((cc as isize + d) as usize).min(w - 1);
                for nr in r0..=r1 {
                    for nc in c0..=c1 {
                        if mask.get(nr, nc) && !visited.get(nr, nc) {
                            visited.set(nr, nc, true);
                            stack.push((nr, nc));
                        }
                    }
                }
            }
            clusters.push(cluster);
        }
    }
    clusters
}

fn close_cluster(
    cluster: &[(usize, usize)],
    max_rotate: usize,
    height: usize,
    width: usize,
) -> DefectRegion {
    let cx = cluster.iter().map(|&(_, c)| c as f64).sum::<f64>() / cluster.len() as f64;
    let cy = cluster.iter().map(|&(r, _)| r as f64).sum::<f64>() / cluster.len() as f64;

    // Farthest pixel per angular sector.
    let sector = TAU / max_rotate as f64;
    let mut best: Vec<Option<((usize, usize), f64)>> = vec![None; max_rotate];
    for &(r, c) in cluster {
        let dx = c as f64 - cx;
        let dy = r as f64 - cy;
        let dist2 = dx * dx + dy * dy;
        let angle = dy.atan2(dx).rem_euclid(TAU);
        let idx = ((angle / sector) as usize).min(max_rotate - 1);
        if best[idx].map_or(true, |(_, d)| dist2 > d) {
            best[idx] = Some(((r, c), dist2));
        }
    }
    let mut knots: Vec<(usize, usize)> = best.into_iter().flatten().map(|(p, _)| p).collect();
    knots.dedup();
    if knots.len() > 1 && knots.first() == knots.last() {
        knots.pop();
    }

    if knots.len() < 3 {
        // Degenerate geometry: the cluster itself is the region.
        return DefectRegion {
            knots,
            curve: Vec::new(),
            area: cluster.to_vec(),
        };
    }

    let points: Vec<(f64, f64)> = knots.iter().map(|&(r, c)| (c as f64, r as f64)).collect();
    let curve = periodic_spline_closed(&points, 4);

    // Fill the interior over the curve's bounding box.
    let min_x = curve.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = curve.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let r0 = (min_y.floor().max(0.0)) as usize;
    let r1 = (max_y.ceil() as usize).min(height - 1);
    let c0 = (min_x.floor().max(0.0)) as usize;
    let c1 = (max_x.ceil() as usize).min(width - 1);

    let mut area = Vec::new();
    let mut in_area = std::collections::HashSet::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            if point_in_polygon(c as f64, r as f64, &curve) {
                area.push((r, c));
                in_area.insert((r, c));
            }
        }
    }
    // Rasterize the curve so boundary pixels count as part of the region.
    for &(x, y) in &curve {
        let r = y.round();
        let c = x.round();
        if r >= 0.0 && c >= 0.0 {
            let (r, c) = (r as usize, c as usize);
            if r < height && c < width && in_area.insert((r, c)) {
                area.push((r, c));
            }
        }
    }
    DefectRegion { knots, curve, area }
}

/// Interpolating closed cubic spline through the points (uniform parameter,
/// periodic end conditions), sampled at `samples_per_span` points per knot
/// span.
pub fn periodic_spline_closed(points: &[(f64, f64)], samples_per_span: usize) -> Vec<(f64, f64)> {
    let n = points.len();
    if n < 3 {
        return points.to_vec();
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mx = periodic_second_derivatives(&xs);
    let my = periodic_second_derivatives(&ys);

    let mut curve = Vec::with_capacity(n * samples_per_span);
    for i in 0..n {
        let j = (i + 1) % n;
        for s_idx in 0..samples_per_span {
            let s = s_idx as f64 / samples_per_span as f64;
            let a = 1.0 - s;
            // Uniform-spacing cubic spline segment in terms of the second
            // derivatives at the endpoints.
            let x = mx[i] * a.powi(3) / 6.0
                + mx[j] * s.powi(3) / 6.0
                + (xs[i] - mx[i] / 6.0) * a
                + (xs[j] - mx[j] / 6.0) * s;
            let y = my[i] * a.powi(3) / 6.0
                + my[j] * s.powi(3) / 6.0
                + (ys[i] - my[i] / 6.0) * a
                + (ys[j] - my[j] / 6.0) * s;
            curve.push((x, y));
        }
    }
    curve
}

/// Second derivatives of the uniform periodic cubic interpolant:
/// `M_{i-1} + 4 M_i + M_{i+1} = 6 (P_{i-1} - 2 P_i + P_{i+1})` cyclically.
fn periodic_second_derivatives(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, 1);
    for i in 0..n {
        a[(i, (i + n - 1) % n)] += 1.0;
        a[(i, i)] += 4.0;
        a[(i, (i + 1) % n)] += 1.0;
        rhs[(i, 0)] = 6.0 * (p[(i + n - 1) % n] - 2.0 * p[i] + p[(i + 1) % n]);
    }
    match a.lu().solve(&rhs) {
        Some(m) => m.column(0).iter().copied().collect(),
        None => vec![0.0; n],
    }
}

/// Even-odd ray-casting point-in-polygon test.
pub fn point_in_polygon(x: f64, y: f64, polygon: &[(f64, f64)]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = polygon[i];
        let (xj, yj) = polygon[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pixelwise confusion counts and rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub tpr: f64,
    pub fpr: f64,
}

/// Score a predicted mask against ground truth. Rates with an empty
/// denominator are reported as zero.
pub fn evaluate(pred: &BinaryMask, truth: &BinaryMask) -> Result<MetricReport> {
    if pred.height != truth.height || pred.width != truth.width {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{} but truth is {}x{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in pred.bits.iter().zip(&truth.bits) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let tpr = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let fpr = if fp + tn > 0 {
        fp as f64 / (fp + tn) as f64
    } else {
        0.0
    };
    Ok(MetricReport {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
        tpr,
        fpr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(h: usize, w: usize, top: usize, left: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| {
            r >= top && r < top + side && c >= left && c < left + side
        })
    }

    #[test]
    fn empty_mask_gives_no_regions() {
        let regions = close_regions(&BinaryMask::new(30, 30), 36, 5).unwrap();
        assert!(regions.is_empty());
    }

    #[test]
    fn filled_square_closes_onto_itself() {
        let mask = square_mask(40, 40, 15, 15, 9);
        let regions = close_regions(&mask, 36, 5).unwrap();
        assert_eq!(regions.len(), 1);
        let region = &regions[0];
        // Center of the square is inside.
        assert!(region.area.contains(&(19, 19)));
        // At least 80% of the square's pixels are recovered.
        let recovered = mask
            .ones()
            .iter()
            .filter(|p| region.area.contains(p) || region.knots.contains(p))
            .count();
        assert!(
            recovered as f64 >= 0.8 * 81.0,
            "only {recovered}/81 square pixels recovered"
        );
    }

    #[test]
    fn closed_square_scores_high_tpr_low_fpr() {
        let truth = square_mask(64, 64, 20, 20, 9);
        let regions = close_regions(&truth, 36, 5).unwrap();
        let closed = regions_mask(&regions, 64, 64);
        let report = evaluate(&closed, &truth).unwrap();
        assert!(report.tpr >= 0.8, "TPR {}", report.tpr);
        assert!(report.fpr <= 0.02, "FPR {}", report.fpr);
    }

    #[test]
    fn distant_squares_stay_separate_regions() {
        let a = square_mask(60, 60, 5, 5, 6);
        let b = square_mask(60, 60, 40, 40, 6);
        let mask = a.union(&b).unwrap();
        let regions = close_regions(&mask, 36, 5).unwrap();
        assert_eq!(regions.len(), 2, "separation > 2 d_max keeps clusters apart");
    }

    #[test]
    fn region_count_is_non_increasing_in_d_max() {
        let mut mask = BinaryMask::new(80, 80);
        for &(r, c) in &[(10, 10), (10, 30), (40, 10), (60, 60), (62, 64), (20, 70)] {
            mask.set(r, c, true);
        }
        let mut last = usize::MAX;
        for d_max in [1usize, 5, 15, 40] {
            let count = close_regions(&mask, 36, d_max).unwrap().len();
            assert!(count <= last, "d_max {d_max}: {count} regions after {last}");
            last = count;
        }
    }

    #[test]
    fn hull_interior_pixels_are_recovered() {
        // Every defect pixel inside the region's hull stays within the area
        // or lands next to it (1 px rasterization slack).
        let mask = BinaryMask::from_fn(50, 50, |r, c| {
            let dr = r as f64 - 25.0;
            let dc = c as f64 - 25.0;
            (dr * dr + dc * dc).sqrt() <= 8.0
        });
        let regions = close_regions(&mask, 36, 5).unwrap();
        assert_eq!(regions.len(), 1);
        let region_mask = regions[0].mask(50, 50);
        for (r, c) in mask.ones() {
            let mut covered = false;
            'outer: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let nr = r as isize + dr;
                    let nc = c as isize + dc;
                    if nr >= 0
                        && nc >= 0
                        && (nr as usize) < 50
                        && (nc as usize) < 50
                        && region_mask.get(nr as usize, nc as usize)
                    {
                        covered = true;
                        break 'outer;
                    }
                }
            }
            assert!(covered, "defect pixel ({r},{c}) not covered within 1 px");
        }
    }

    #[test]
    fn tiny_clusters_fall_back_to_their_pixels() {
        let mut mask = BinaryMask::new(20, 20);
        mask.set(4, 4, true);
        mask.set(4, 5, true);
        let regions = close_regions(&mask, 36, 2).unwrap();
        assert_eq!(regions.len(), 1);
        assert!(regions[0].curve.is_empty());
        assert_eq!(regions[0].area.len(), 2);
    }

    #[test]
    fn spline_interpolates_the_knots() {
        let points = vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
        let curve = periodic_spline_closed(&points, 8);
        assert_eq!(curve.len(), 32);
        // The curve passes through every knot (samples at s = 0).
        for (i, &(x, y)) in points.iter().enumerate() {
            let (cx, cy) = curve[i * 8];
            assert!((cx - x).abs() < 1e-9 && (cy - y).abs() < 1e-9);
        }
    }

    #[test]
    fn point_in_polygon_even_odd() {
        let square = vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        assert!(point_in_polygon(2.0, 2.0, &square));
        assert!(!point_in_polygon(5.0, 2.0, &square));
        assert!(!point_in_polygon(-1.0, 2.0, &square));
    }

    #[test]
    fn evaluate_exact_and_complement() {
        let truth = square_mask(20, 20, 5, 5, 6);
        let exact = evaluate(&truth, &truth).unwrap();
        assert_eq!(exact.tpr, 1.0);
        assert_eq!(exact.fpr, 0.0);

        let complement = evaluate(&truth.not(), &truth).unwrap();
        assert_eq!(complement.tpr, 0.0);
        assert_eq!(complement.fpr, 1.0);
    }

    #[test]
    fn evaluate_swap_symmetry_and_partition() {
        let pred = square_mask(20, 20, 3, 3, 5);
        let truth = square_mask(20, 20, 5, 5, 6);
        let ab = evaluate(&pred, &truth).unwrap();
        let ba = evaluate(&truth, &pred).unwrap();
        assert_eq!(ab.false_negatives, ba.false_positives);
        assert_eq!(ab.false_positives, ba.false_negatives);
        assert_eq!(ab.true_positives, ba.true_positives);
        let total = ab.true_positives + ab.false_positives + ab.true_negatives + ab.false_negatives;
        assert_eq!(total, 400);
    }

    #[test]
    fn evaluate_rejects_shape_mismatch() {
        let a = BinaryMask::new(10, 10);
        let b = BinaryMask::new(10, 11);
        assert!(matches!(
            evaluate(&a, &b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn close_regions_validates_parameters() {
        let mask = BinaryMask::new(10, 10);
        assert!(close_regions(&mask, 4, 5).is_err());
        assert!(close_regions(&mask, 36, 0).is_err());
    }
}
