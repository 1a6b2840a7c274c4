//! KL confidence intervals for `E[Q] Var[Y]` from paired samples.
//!
//! For `Y, Q` in `[0, 1]`, `Q_s (Y_{2s} - Y_{2s-1})^2 / 2` has mean
//! `E[Q] Var[Y]` and lies in `[0, 1/2]`, so twice its average behaves like
//! a Bernoulli mean and can be inverted with the binary KL divergence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{kl_lower_bound, kl_upper_bound};

/// Bisection tolerance for interval endpoints.
pub const INTERVAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarianceBoundError {
    #[error("need two Y values per Q value, got {y} Y and {q} Q")]
    LengthMismatch { y: usize, q: usize },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("confidence parameter must be positive, got {0}")]
    InvalidDelta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedVarianceEstimate {
    pub pairs: u64,
    /// `(1 / 2t) sum_s Q_s (Y_{2s} - Y_{2s-1})^2`, in `[0, 1/2]`.
    pub vbar: f64,
    pub delta: f64,
}

impl PairedVarianceEstimate {
    /// KL budget `delta / pairs`; infinite before any pair.
    pub fn budget(&self) -> f64 {
        if self.pairs == 0 {
            f64::INFINITY
        } else {
            self.delta / self.pairs as f64
        }
    }
}

fn check_unit(values: &[f64], offset: usize) -> Result<(), VarianceBoundError> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(VarianceBoundError::OutOfRange {
            index: offset + i,
            value: values[i],
        }),
        None => Ok(()),
    }
}

pub fn paired_variance_estimate(
    y: &[f64],
    q: &[f64],
    delta: f64,
) -> Result<PairedVarianceEstimate, VarianceBoundError> {
    if y.len() != 2 * q.len() {
        return Err(VarianceBoundError::LengthMismatch {
            y: y.len(),
            q: q.len(),
        });
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(VarianceBoundError::InvalidDelta(delta));
    }
    check_unit(y, 0)?;
    check_unit(q, 0)?;
    let t = q.len();
    let sum: f64 = q
        .iter()
        .zip(y.chunks_exact(2))
        .map(|(qs, pair)| qs * (pair[1] - pair[0]).powi(2))
        .sum();
    let vbar = if t == 0 { 0.0 } else { sum / (2 * t) as f64 };
    Ok(PairedVarianceEstimate {
        pairs: t as u64,
        vbar,
        delta,
    })
}

/// `(inf, sup)` of `{mu : KL(2 vbar, 2 mu) <= delta / pairs}`.
pub fn variance_confidence_interval(est: &PairedVarianceEstimate) -> (f64, f64) {
    let p = (2.0 * est.vbar).clamp(0.0, 1.0);
    let budget = est.budget();
    if budget.is_infinite() {
        return (0.0, 0.5);
    }
    let lower = kl_lower_bound(p, budget, INTERVAL_TOLERANCE);
    let upper = kl_upper_bound(p, budget, INTERVAL_TOLERANCE);
    (0.5 * lower, 0.5 * upper)
}

/// `1 - 2e ceil(delta ln floor(n/2)) e^-delta`, the probability that the
/// intervals from `n` samples of `Y` hold simultaneously. Often negative.
pub fn coverage_lower_bound(delta: f64, n: u64) -> f64 {
    let half = (n / 2).max(1) as f64;
    1.0 - 2.0 * std::f64::consts::E * (delta * half.ln()).ceil() * (-delta).exp()
}

/// Streaming estimate; an odd number of `Y` values keeps the last pair open
/// and leaves the estimate unchanged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningPairedVariance {
    pairs: u64,
    sum: f64,
    pending: Option<f64>,
}

impl RunningPairedVariance {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed the next `Y`; `q` is used when it closes a pair.
    pub fn push(&mut self, y: f64, q: f64) {
        match self.pending.take() {
            None => self.pending = Some(y),
            Some(first) => {
                self.pairs += 1;
                self.sum += q * (y - first).powi(2);
            }
        }
    }

    pub fn estimate(&self, delta: f64) -> PairedVarianceEstimate {
        let vbar = if self.pairs == 0 {
            0.0
        } else {
            self.sum / (2 * self.pairs) as f64
        };
        PairedVarianceEstimate {
            pairs: self.pairs,
            vbar,
            delta,
        }
    }
}

/// Intersection of the intervals after every pair; `None` once it is empty.
pub fn running_intersection(
    y: &[f64],
    q: &[f64],
    delta: f64,
) -> Result<Option<(f64, f64)>, VarianceBoundError> {
    paired_variance_estimate(y, q, delta)?;
    let mut running = RunningPairedVariance::new();
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for (s, pair) in y.chunks_exact(2).enumerate() {
        running.push(pair[0], q[s]);
        running.push(pair[1], q[s]);
        let (l, h) = variance_confidence_interval(&running.estimate(delta));
        lo = lo.max(l);
        hi = hi.min(h);
        if lo > hi {
            return Ok(None);
        }
    }
    Ok(Some((lo, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::bernoulli_kl;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn estimate_values() {
        let e = paired_variance_estimate(&[0.0, 1.0, 1.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(e.vbar, 0.5);
        assert_eq!(e.pairs, 2);
        let e = paired_variance_estimate(&[0.0, 1.0, 1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(e.vbar, 0.0);
        let e = paired_variance_estimate(&[0.3; 6], &[0.9; 3], 1.0).unwrap();
        assert_eq!(e.vbar, 0.0);
        assert!(matches!(
            paired_variance_estimate(&[0.1, 0.2, 0.3], &[1.0], 1.0),
            Err(VarianceBoundError::LengthMismatch { y: 3, q: 1 })
        ));
        assert!(paired_variance_estimate(&[0.1, 1.2], &[1.0], 1.0).is_err());
        assert!(paired_variance_estimate(&[0.1, 0.2], &[1.0], 0.0).is_err());
    }

    #[test]
    fn interval_values() {
        let zero = PairedVarianceEstimate {
            pairs: 10,
            vbar: 0.2,
            delta: 0.0,
        };
        assert_eq!(variance_confidence_interval(&zero), (0.2, 0.2));
        // 2 vbar = 0.25, budget KL(0.25, 0.5) puts the upper 2 mu at 0.5.
        let budget = bernoulli_kl(0.25, 0.5);
        assert_abs_diff_eq!(budget, 0.130812, epsilon = 1e-6);
        let est = PairedVarianceEstimate {
            pairs: 1,
            vbar: 0.125,
            delta: budget,
        };
        let (lo, hi) = variance_confidence_interval(&est);
        assert_abs_diff_eq!(hi, 0.25, epsilon = 1e-9);
        assert!(lo < 0.125);
        assert_abs_diff_eq!(bernoulli_kl(0.25, 2.0 * lo), budget, epsilon = 1e-9);
    }

    #[test]
    fn streaming_matches_batch() {
        let y = [0.1, 0.7, 0.4, 0.4, 0.9, 0.0];
        let q = [0.5, 1.0, 0.25];
        let batch = paired_variance_estimate(&y, &q, 2.0).unwrap();
        let mut r = RunningPairedVariance::new();
        for (i, &v) in y.iter().enumerate() {
            r.push(v, q[i / 2]);
        }
        assert_abs_diff_eq!(r.estimate(2.0).vbar, batch.vbar, epsilon = 1e-15);
        // An unpaired value leaves the estimate unchanged.
        r.push(0.3, 1.0);
        assert_eq!(r.estimate(2.0), batch);
    }

    #[test]
    fn coverage_bound_is_vacuous_at_small_delta() {
        assert!(coverage_lower_bound(5.0, 2000) < 0.0);
        assert!(coverage_lower_bound(20.0, 2000) > 0.99);
    }

    #[test]
    fn summand_mean_is_twice_the_target() {
        // Y uniform (variance 1/12), Q uniform (mean 1/2): E = 2 * 1/24.
        let mut rng = rng_from_seed(6);
        let n = 1_000_000;
        let (mut s, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let (a, b, q): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let z = q * (a - b).powi(2);
            s += z;
            sq += z * z;
        }
        let mean = s / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 2.0 / 24.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn running_intersection_covers_truth_at_large_delta() {
        let mut rng = rng_from_seed(2);
        let y: Vec<f64> = (0..400).map(|_| rng.random()).collect();
        let q: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let (lo, hi) = running_intersection(&y, &q, 20.0).unwrap().unwrap();
        assert!(lo <= 1.0 / 24.0 && 1.0 / 24.0 <= hi);
    }

    proptest! {
        #[test]
        fn interval_contains_point_estimate(vbar in 0.0f64..=0.5, pairs in 1u64..10_000, delta in 0.0f64..20.0) {
            let est = PairedVarianceEstimate { pairs, vbar, delta };
            let (lo, hi) = variance_confidence_interval(&est);
            prop_assert!(lo <= vbar + 1e-15 && vbar <= hi + 1e-15);
            prop_assert!(lo >= 0.0 && hi <= 0.5);
        }

        #[test]
        fn width_shrinks_with_more_pairs(vbar in 0.0f64..=0.5, pairs in 1u64..5_000, delta in 0.01f64..10.0) {
            let a = variance_confidence_interval(&PairedVarianceEstimate { pairs, vbar, delta });
            let b = variance_confidence_interval(&PairedVarianceEstimate { pairs: pairs + 1, vbar, delta });
            prop_assert!(b.1 - b.0 <= a.1 - a.0 + 1e-9);
        }

        #[test]
        fn estimate_lies_in_range(
            y in prop::collection::vec(0.0f64..=1.0, 0..50),
            qs in prop::collection::vec(0.0f64..=1.0, 25),
        ) {
            let t = y.len() / 2;
            let est = paired_variance_estimate(&y[..2 * t], &qs[..t], 1.0).unwrap();
            prop_assert!((0.0..=0.5).contains(&est.vbar));
        }
    }
}
