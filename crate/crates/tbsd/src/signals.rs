//! 1D/2D periodic and quasi-periodic signal sets.
//!
//! A periodic signal is a connected duplication of a short mode segment; a
//! quasi-periodic signal relaxes this so that each segment of a segmentation
//! only has to stay within an l2-ball of radius `sigma` around the mode.
//! These constructors and verifiers back both the synthetic texture
//! generators and the property tests of the texture model.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A discrete, finite, real-valued 1D signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal1D {
    values: Vec<f64>,
}

impl Signal1D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("Signal1D"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Signal1D"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at `i` under periodic extension of the signal.
    fn periodic_at(&self, i: usize) -> f64 {
        self.values[i % self.values.len()]
    }
}

/// A 2D signal set (signal matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct Signal2D {
    values: DMatrix<f64>,
}

impl Signal2D {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput("Signal2D"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Signal2D"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Description of a periodic signal: mode of length `T` duplicated over a
/// domain of `n` samples (the trailing copy truncated when `T` does not
/// divide `n`).
#[derive(Debug, Clone)]
pub struct PeriodicSpec {
    mode: Signal1D,
    domain: usize,
}

impl PeriodicSpec {
    pub fn new(mode: Signal1D, domain: usize) -> Result<Self> {
        let period = mode.len();
        if period <= 1 || period >= domain {
            return Err(Error::InvalidPeriod { period, domain });
        }
        Ok(Self { mode, domain })
    }

    pub fn mode(&self) -> &Signal1D {
        &self.mode
    }

    pub fn period(&self) -> usize {
        self.mode.len()
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    /// Lift to a quasi-periodic spec with equal-length segments and the
    /// given control limit.
    pub fn to_quasi(&self, sigma: f64) -> Result<QuasiSpec> {
        let t = self.period();
        let full = self.domain / t;
        let mut segments = vec![t; full];
        let rem = self.domain - full * t;
        if rem > 0 {
            // Fold the truncated tail into the last segment so lengths sum
            // to the domain while every segment stays >= T.
            if let Some(last) = segments.last_mut() {
                *last += rem;
            }
        }
        if segments.len() < 2 {
            return Err(Error::InvalidQuasiSpec(
                "domain too short for two segments".into(),
            ));
        }
        QuasiSpec::new(self.mode.clone(), segments, sigma)
    }
}

/// The five elements of quasi-periodicity: mode, segmentation, quasi-period
/// (the mode length), control limit, and domain (the segmentation sum).
#[derive(Debug, Clone)]
pub struct QuasiSpec {
    mode: Signal1D,
    segments: Vec<usize>,
    sigma: f64,
}

impl QuasiSpec {
    pub fn new(mode: Signal1D, segments: Vec<usize>, sigma: f64) -> Result<Self> {
        if segments.len() < 2 {
            return Err(Error::InvalidQuasiSpec(format!(
                "need at least 2 segments, got {}",
                segments.len()
            )));
        }
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::InvalidQuasiSpec(format!(
                "control limit must be finite and nonnegative, got {sigma}"
            )));
        }
        let t = mode.len();
        if let Some(&min) = segments.iter().min() {
            if min == 0 {
                return Err(Error::InvalidQuasiSpec("zero-length segment".into()));
            }
            if t > min {
                return Err(Error::InvalidQuasiSpec(format!(
                    "mode length {t} exceeds shortest segment {min}"
                )));
            }
        }
        Ok(Self {
            mode,
            segments,
            sigma,
        })
    }

    pub fn mode(&self) -> &Signal1D {
        &self.mode
    }

    pub fn quasi_period(&self) -> usize {
        self.mode.len()
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn domain(&self) -> usize {
        self.segments.iter().sum()
    }

    /// Start offsets of each segment.
    pub fn segment_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.segments.len());
        let mut acc = 0;
        for &t in &self.segments {
            starts.push(acc);
            acc += t;
        }
        starts
    }
}

/// Duplicate the mode over the spec's domain, truncating the last copy.
pub fn make_periodic(spec: &PeriodicSpec) -> Signal1D {
    let values = (0..spec.domain())
        .map(|i| spec.mode.periodic_at(i))
        .collect();
    Signal1D { values }
}

/// Pointwise weighted sum of signals on the common domain `N = max n_k`,
/// shorter signals extended periodically.
pub fn compose(signals: &[Signal1D], weights: &[f64]) -> Result<Signal1D> {
    if signals.is_empty() {
        return Err(Error::EmptyInput("compose"));
    }
    if signals.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} signals but {} weights",
            signals.len(),
            weights.len()
        )));
    }
    let n = signals.iter().map(Signal1D::len).max().unwrap();
    let values = (0..n)
        .map(|i| {
            signals
                .iter()
                .zip(weights)
                .map(|(s, w)| w * s.periodic_at(i))
                .sum()
        })
        .collect();
    Signal1D::new(values)
}

/// Smallest `T` in `(1, n)` with `|s[i+T] - s[i]| <= tol` for all valid `i`,
/// or `None` when no such period exists.
pub fn detect_period(signal: &Signal1D, tol: f64) -> Option<usize> {
    let s = signal.values();
    let n = s.len();
    (2..n).find(|&t| (0..n - t).all(|i| (s[i + t] - s[i]).abs() <= tol))
}

/// Generate a quasi-periodic signal: each segment is the mode extended
/// periodically to the segment length plus a bounded perturbation, so that
/// [`verify_quasi`] holds for the generating spec. Deterministic in the seed.
pub fn make_quasi(spec: &QuasiSpec, jitter_seed: u64) -> Signal1D {
    let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
    let t = spec.quasi_period();
    let mut values = Vec::with_capacity(spec.domain());
    for &seg_len in spec.segments() {
        let base: Vec<f64> = (0..seg_len).map(|i| spec.mode.periodic_at(i)).collect();
        if spec.sigma == 0.0 {
            values.extend(base);
            continue;
        }
        let raw: Vec<f64> = (0..seg_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Scale so the deviation over the compared window (first T entries)
        // lands strictly inside the sigma ball.
        let head_norm = raw[..t].iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if head_norm > 0.0 {
            0.9 * spec.sigma / head_norm
        } else {
            0.0
        };
        values.extend(base.iter().zip(&raw).map(|(b, r)| b + scale * r));
    }
    Signal1D { values }
}

/// Per-segment squared deviations from the mode (compared on the first `T`
/// entries of each segment) and whether all stay within `sigma^2`.
pub fn verify_quasi(signal: &Signal1D, spec: &QuasiSpec) -> Result<(bool, Vec<f64>)> {
    let sum: usize = spec.segments().iter().sum();
    if sum != signal.len() {
        return Err(Error::SegmentationMismatch {
            sum,
            expected: signal.len(),
        });
    }
    let t = spec.quasi_period();
    let mode = spec.mode.values();
    let mut deviations = Vec::with_capacity(spec.segments().len());
    let mut start = 0;
    for &seg_len in spec.segments() {
        let seg = &signal.values()[start..start + seg_len];
        let dev: f64 = (0..t).map(|i| (seg[i] - mode[i]).powi(2)).sum();
        deviations.push(dev);
        start += seg_len;
    }
    let limit = spec.sigma * spec.sigma;
    let ok = deviations.iter().all(|&d| d <= limit);
    Ok((ok, deviations))
}

/// Both sides of the composite quasi-periodicity bound on a shared segment:
/// `lhs` is the squared deviation of the weighted composite, `bound` is
/// `(sum beta^2) * sum (||S_k on segment||_2 + sigma_k)^2`. The Cauchy-Schwarz
/// argument guarantees `lhs <= bound` whenever every component is
/// quasi-periodic on the segment.
pub fn composite_quasi_bound(
    components: &[(Signal1D, QuasiSpec)],
    weights: &[f64],
    shared_segment: std::ops::Range<usize>,
) -> Result<(f64, f64)> {
    if components.is_empty() {
        return Err(Error::EmptyInput("composite_quasi_bound"));
    }
    if components.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} components but {} weights",
            components.len(),
            weights.len()
        )));
    }
    let seg_len = shared_segment.len();
    for (signal, spec) in components {
        if shared_segment.end > signal.len() || seg_len == 0 {
            return Err(Error::SegmentOutOfRange {
                start: shared_segment.start,
                end: shared_segment.end,
                len: signal.len(),
            });
        }
        if spec.quasi_period() > seg_len {
            return Err(Error::SegmentOutOfRange {
                start: shared_segment.start,
                end: shared_segment.end,
                len: spec.quasi_period(),
            });
        }
    }

    // Deviation vectors on the segment, zero beyond each component's mode
    // length (the mode only constrains the first T entries).
    let mut composite_dev = vec![0.0; seg_len];
    let mut bound_sum = 0.0;
    for ((signal, spec), &beta) in components.iter().zip(weights) {
        let window = &signal.values()[shared_segment.clone()];
        let mode = spec.mode.values();
        for (i, value) in window.iter().enumerate().take(spec.quasi_period()) {
            composite_dev[i] += beta * (value - mode[i]);
        }
        let seg_norm = window.iter().map(|v| v * v).sum::<f64>().sqrt();
        bound_sum += (seg_norm + spec.sigma).powi(2);
    }
    let beta_sq: f64 = weights.iter().map(|b| b * b).sum();
    let lhs: f64 = composite_dev.iter().map(|v| v * v).sum();
    Ok((lhs, beta_sq * bound_sum))
}

/// Outer product `M[i][j] = row[i] * col[j]`.
pub fn outer_2d(row_signal: &Signal1D, col_signal: &Signal1D) -> Signal2D {
    let m = row_signal.len();
    let n = col_signal.len();
    let values = DMatrix::from_fn(m, n, |i, j| row_signal.values[i] * col_signal.values[j]);
    Signal2D { values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(values: &[f64]) -> Signal1D {
        Signal1D::new(values.to_vec()).unwrap()
    }

    #[test]
    fn make_periodic_duplicates_mode() {
        let spec = PeriodicSpec::new(sig(&[1.0, 2.0]), 6).unwrap();
        assert_eq!(make_periodic(&spec).values(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn make_periodic_truncates_partial_copy() {
        let spec = PeriodicSpec::new(sig(&[1.0, 2.0, 3.0]), 7).unwrap();
        assert_eq!(
            make_periodic(&spec).values(),
            &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]
        );
    }

    #[test]
    fn periodic_spec_rejects_degenerate_periods() {
        assert!(matches!(
            PeriodicSpec::new(sig(&[3.0]), 6),
            Err(Error::InvalidPeriod { period: 1, .. })
        ));
        assert!(matches!(
            PeriodicSpec::new(sig(&[1.0; 6]), 6),
            Err(Error::InvalidPeriod { period: 6, .. })
        ));
    }

    #[test]
    fn detect_period_exact_repetition() {
        assert_eq!(detect_period(&sig(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]), 0.0), Some(2));
        assert_eq!(detect_period(&sig(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 0.0), None);
    }

    #[test]
    fn compose_identity_and_zero_weight() {
        let a = sig(&[0.5, 1.5, -0.5, 0.25]);
        let only = compose(std::slice::from_ref(&a), &[1.0]).unwrap();
        assert_eq!(only, a);

        let b = sig(&[9.0, 9.0, 9.0, 9.0]);
        let zeroed = compose(&[a.clone(), b], &[1.0, 0.0]).unwrap();
        assert_eq!(zeroed, a);
    }

    #[test]
    fn compose_periods_two_and_three_has_period_six() {
        let s2 = make_periodic(&PeriodicSpec::new(sig(&[0.0, 1.0]), 12).unwrap());
        let s3 = make_periodic(&PeriodicSpec::new(sig(&[0.0, 0.5, 0.25]), 12).unwrap());
        let composite = compose(&[s2, s3], &[1.0, 1.0]).unwrap();
        assert_eq!(composite.len(), 12);
        // Brute-force period scan: the minimal period of the composite.
        assert_eq!(detect_period(&composite, 1e-9), Some(6));
    }

    #[test]
    fn compose_lcm_property_over_period_grid() {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 { a } else { gcd(b, a % b) }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t1 in 2..=12usize {
            for t2 in (t1 + 1)..=12usize {
                let lcm = t1 * t2 / gcd(t1, t2);
                let n = 3 * lcm;
                let m1: Vec<f64> = (0..t1).map(|_| rng.gen_range(0.0..1.0)).collect();
                let m2: Vec<f64> = (0..t2).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s1 = make_periodic(&PeriodicSpec::new(sig(&m1), n).unwrap());
                let s2 = make_periodic(&PeriodicSpec::new(sig(&m2), n).unwrap());
                let composite = compose(&[s1, s2], &[1.0, 1.0]).unwrap();
                assert_eq!(composite.len(), n, "domain is the max component domain");
                let t = detect_period(&composite, 1e-9)
                    .unwrap_or_else(|| panic!("no period for ({t1}, {t2})"));
                assert_eq!(lcm % t, 0, "period {t} must divide lcm({t1},{t2})={lcm}");
            }
        }
    }

    #[test]
    fn make_quasi_sigma_zero_is_periodic() {
        let mode = sig(&[0.2, 0.9, 0.4]);
        let spec = QuasiSpec::new(mode.clone(), vec![3, 3, 3], 0.0).unwrap();
        let out = make_quasi(&spec, 42);
        let periodic = make_periodic(&PeriodicSpec::new(mode, 9).unwrap());
        assert_eq!(out, periodic);
    }

    #[test]
    fn make_quasi_is_deterministic() {
        let spec = QuasiSpec::new(sig(&[0.1, 0.8, 0.3, 0.5]), vec![5, 4, 6], 0.25).unwrap();
        assert_eq!(make_quasi(&spec, 9), make_quasi(&spec, 9));
        assert_ne!(make_quasi(&spec, 9), make_quasi(&spec, 10));
    }

    #[test]
    fn generated_quasi_signals_verify() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..50u64 {
            let t = rng.gen_range(3..8usize);
            let mode: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..1.0)).collect();
            let m = rng.gen_range(2..5usize);
            let segments: Vec<usize> = (0..m).map(|_| t + rng.gen_range(0..4usize)).collect();
            let sigma = rng.gen_range(0.0..0.5);
            let spec = QuasiSpec::new(sig(&mode), segments, sigma).unwrap();
            let out = make_quasi(&spec, trial);
            let (ok, devs) = verify_quasi(&out, &spec).unwrap();
            assert!(ok, "trial {trial}: deviations {devs:?} vs sigma^2 {}", sigma * sigma);
        }
    }

    #[test]
    fn make_quasi_matches_spec_example() {
        // sigma = 0.1, segments (10, 12, 11), mode length 10.
        let mode: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin() * 0.5 + 0.5).collect();
        let spec = QuasiSpec::new(sig(&mode), vec![10, 12, 11], 0.1).unwrap();
        let out = make_quasi(&spec, 5);
        let (ok, _) = verify_quasi(&out, &spec).unwrap();
        assert!(ok);
    }

    #[test]
    fn verify_quasi_flags_single_corrupted_segment() {
        let mode = sig(&[0.3, 0.6, 0.1]);
        let periodic = make_periodic(&PeriodicSpec::new(mode.clone(), 9).unwrap());
        let spec = QuasiSpec::new(mode, vec![3, 3, 3], 0.0).unwrap();
        let (ok, devs) = verify_quasi(&periodic, &spec).unwrap();
        assert!(ok);
        assert!(devs.iter().all(|&d| d == 0.0));

        let mut corrupted = periodic.values().to_vec();
        corrupted[4] += 0.5;
        let corrupted = Signal1D::new(corrupted).unwrap();
        let (ok, devs) = verify_quasi(&corrupted, &spec).unwrap();
        assert!(!ok);
        assert_eq!(devs.iter().filter(|&&d| d > 0.0).count(), 1);
        assert!(devs[1] > 0.0);
    }

    #[test]
    fn verify_quasi_rejects_segmentation_mismatch() {
        let spec = QuasiSpec::new(sig(&[0.1, 0.2]), vec![2, 2], 0.0).unwrap();
        let signal = sig(&[0.1, 0.2, 0.1, 0.2, 0.1]);
        assert!(matches!(
            verify_quasi(&signal, &spec),
            Err(Error::SegmentationMismatch { sum: 4, expected: 5 })
        ));
    }

    #[test]
    fn composite_bound_trivial_cases() {
        let mode = sig(&[0.4, 0.7, 0.2]);
        let spec = QuasiSpec::new(mode.clone(), vec![3, 3], 0.0).unwrap();
        let signal = make_quasi(&spec, 0);

        let (lhs, bound) =
            composite_quasi_bound(&[(signal.clone(), spec.clone())], &[1.0], 0..3).unwrap();
        assert_eq!(lhs, 0.0);
        assert!(lhs <= bound);

        // Two identical components with opposite weights cancel exactly.
        let pair = [(signal.clone(), spec.clone()), (signal, spec)];
        let (lhs, bound) = composite_quasi_bound(&pair, &[1.0, -1.0], 0..3).unwrap();
        assert_eq!(lhs, 0.0);
        assert!(lhs <= bound);
    }

    #[test]
    fn composite_bound_rejects_out_of_range_segment() {
        let spec = QuasiSpec::new(sig(&[0.4, 0.7]), vec![2, 2], 0.0).unwrap();
        let signal = make_quasi(&spec, 0);
        assert!(matches!(
            composite_quasi_bound(&[(signal, spec)], &[1.0], 2..6),
            Err(Error::SegmentOutOfRange { .. })
        ));
    }

    #[test]
    fn composite_bound_holds_over_random_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200u64 {
            let k = rng.gen_range(1..=4usize);
            let m = rng.gen_range(2..5usize);
            let seg_len = rng.gen_range(6..12usize);
            let segments = vec![seg_len; m];
            let mut components = Vec::with_capacity(k);
            let mut weights = Vec::with_capacity(k);
            for _ in 0..k {
                let t = rng.gen_range(2..=seg_len);
                let mode: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let sigma = rng.gen_range(0.0..0.6);
                let spec = QuasiSpec::new(sig(&mode), segments.clone(), sigma).unwrap();
                let signal = make_quasi(&spec, trial * 17 + components.len() as u64);
                components.push((signal, spec));
                weights.push(rng.gen_range(-2.0..2.0));
            }
            let seg_idx = rng.gen_range(0..m);
            let range = seg_idx * seg_len..(seg_idx + 1) * seg_len;
            let (lhs, bound) = composite_quasi_bound(&components, &weights, range).unwrap();
            assert!(
                lhs <= bound + 1e-12,
                "trial {trial}: lhs {lhs} exceeds bound {bound}"
            );
        }
    }

    #[test]
    fn outer_product_matches_definition() {
        let m = outer_2d(&sig(&[1.0, 2.0]), &sig(&[3.0, 4.0]));
        assert_eq!(m.values(), &DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 6.0, 8.0]));
    }

    #[test]
    fn outer_product_transpose_symmetry() {
        let a = sig(&[0.3, 1.2, -0.7]);
        let b = sig(&[2.0, 0.5]);
        let ab = outer_2d(&a, &b);
        let ba = outer_2d(&b, &a);
        assert_eq!(ab.values().transpose(), *ba.values());
    }

    #[test]
    fn outer_rows_inherit_column_period() {
        let row = make_periodic(&PeriodicSpec::new(sig(&[1.0, 3.0]), 6).unwrap());
        let col = make_periodic(&PeriodicSpec::new(sig(&[0.5, 0.25, 1.0]), 9).unwrap());
        let m = outer_2d(&row, &col);
        for i in 0..m.values().nrows() {
            let row_signal = Signal1D::new(m.values().row(i).iter().copied().collect()).unwrap();
            if row.values()[i] != 0.0 {
                assert_eq!(detect_period(&row_signal, 1e-12), Some(3));
            }
        }
    }

    #[test]
    fn quasi_times_ones_scales_rows() {
        let spec = QuasiSpec::new(sig(&[0.2, 0.8, 0.5]), vec![3, 4], 0.1).unwrap();
        let quasi = make_quasi(&spec, 1);
        let ones = sig(&[1.0, 1.0, 1.0]);
        let m = outer_2d(&quasi, &ones);
        for i in 0..quasi.len() {
            for j in 0..3 {
                assert_eq!(m.values()[(i, j)], quasi.values()[i]);
            }
        }
    }

    #[test]
    fn make_periodic_detects_mode_period() {
        // The minimal detected period of a duplicated mode is the mode's own
        // minimal divisor-consistent period.
        let spec = PeriodicSpec::new(sig(&[1.0, 2.0, 1.0, 2.0]), 12).unwrap();
        let out = make_periodic(&spec);
        assert_eq!(detect_period(&out, 0.0), Some(2));
    }
}
