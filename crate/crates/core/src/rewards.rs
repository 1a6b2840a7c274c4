//! Maps estimator observations into bandit rewards in `[0, 1]`.
//!
//! Uniform costs feed `1 - y^2` (smaller second moment means larger reward).
//! With per-arm ranges `[a_k, b_k]` each arm is scaled against its own width
//! `b_k - a_min`, and index bounds are mapped back with
//! [`scale_back_bound`] before arms are compared. Non-uniform costs use the
//! paired reward `-(D1 + D2)(X1 - X2)^2 / 4`, whose mean is `-delta_k V_k`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("observation {y} is outside [0, 1]; configure per-arm ranges")]
    UnscaledObservation { y: f64 },
    #[error("arm {arm}: observation {x} is outside its range [{lower}, {upper}]")]
    OutOfRange {
        arm: usize,
        x: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid range for arm {arm}: [{lower}, {upper}]")]
    InvalidRange { arm: usize, lower: f64, upper: f64 },
    #[error("invalid paired reward scale: {0}")]
    InvalidScale(String),
}

/// Relative slack on range checks; values inside it are clamped.
const RANGE_SLACK: f64 = 1e-12;

/// `1 - y^2` for `y` in `[0, 1]`.
pub fn uniform_reward(y: f64) -> Result<f64, RewardError> {
    if y.is_nan() || y < -RANGE_SLACK || y > 1.0 + RANGE_SLACK {
        return Err(RewardError::UnscaledObservation { y });
    }
    let y = y.clamp(0.0, 1.0);
    Ok(1.0 - y * y)
}

/// Known per-arm observation ranges `[a_k, b_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    a_min: f64,
}

impl RangeSpec {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self, RewardError> {
        for (arm, &(lower, upper)) in bounds.iter().enumerate() {
            if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                return Err(RewardError::InvalidRange { arm, lower, upper });
            }
        }
        let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let upper = bounds.iter().map(|b| b.1).collect();
        let a_min = lower.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { lower, upper, a_min })
    }

    /// Every arm on `[0, 1]`; the scaled reward reduces to `1 - y^2`.
    pub fn unit(n_arms: usize) -> Self {
        Self::new(&vec![(0.0, 1.0); n_arms]).expect("unit ranges are valid")
    }

    pub fn n_arms(&self) -> usize {
        self.lower.len()
    }

    pub fn bounds(&self, arm: usize) -> (f64, f64) {
        (self.lower[arm], self.upper[arm])
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    /// `(b_k - a_min)^2`.
    pub fn range_weight(&self, arm: usize) -> f64 {
        let r = self.upper[arm] - self.a_min;
        r * r
    }

    pub fn range_weights(&self) -> Vec<f64> {
        (0..self.n_arms()).map(|k| self.range_weight(k)).collect()
    }

    /// True when all arms share one width, so scaled-back bounds order arms
    /// exactly as the raw indices do.
    pub fn is_homogeneous(&self) -> bool {
        let w0 = self.range_weight(0);
        (1..self.n_arms()).all(|k| self.range_weight(k) == w0)
    }

    /// Clamp `x` into the arm's range.
    pub fn saturate(&self, x: f64, arm: usize) -> f64 {
        x.clamp(self.lower[arm], self.upper[arm])
    }
}

/// `((b_k - a_min)^2 - (x - a_min)^2) / (b_k - a_min)^2`.
pub fn range_scaled_reward(x: f64, arm: usize, spec: &RangeSpec) -> Result<f64, RewardError> {
    let (lower, upper) = spec.bounds(arm);
    let slack = RANGE_SLACK * (upper - lower).max(1.0);
    if x.is_nan() || x < lower - slack || x > upper + slack {
        return Err(RewardError::OutOfRange { arm, x, lower, upper });
    }
    let x = x.clamp(lower, upper);
    let w = spec.range_weight(arm);
    let d = x - spec.a_min;
    Ok(((w - d * d) / w).clamp(0.0, 1.0))
}

/// Map a reward-space upper bound back to a bound on `-E[(X - a_min)^2]`:
/// `(b_k - a_min)^2 (B - 1)`.
pub fn scale_back_bound(bound: f64, arm: usize, spec: &RangeSpec) -> f64 {
    spec.range_weight(arm) * (bound - 1.0)
}

/// `-(d1 + d2)(x1 - x2)^2 / 4`, an unbiased estimate of `-delta V` when
/// costs are independent of values.
pub fn paired_cost_reward(x1: f64, x2: f64, d1: f64, d2: f64) -> f64 {
    let diff = x1 - x2;
    -0.25 * (d1 + d2) * diff * diff
}

/// Caps used to squash the unbounded paired reward into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairedRewardScale {
    /// Largest single-draw cost expected before clamping.
    pub d_max: f64,
    /// Width of the observation range.
    pub x_range: f64,
}

impl PairedRewardScale {
    pub fn new(d_max: f64, x_range: f64) -> Result<Self, RewardError> {
        let s = Self { d_max, x_range };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(RewardError::InvalidScale(format!("d_max = {}", self.d_max)));
        }
        if !(self.x_range > 0.0 && self.x_range.is_finite()) {
            return Err(RewardError::InvalidScale(format!("x_range = {}", self.x_range)));
        }
        Ok(())
    }

    /// Magnitude of the raw reward that maps to 0.
    pub fn floor(&self) -> f64 {
        0.5 * self.d_max * self.x_range * self.x_range
    }

    /// Whether `raw` falls below the floor and gets clamped.
    pub fn clamps(&self, raw: f64) -> bool {
        raw < -self.floor()
    }
}

/// `1 + raw / (d_max x_range^2 / 2)`, clamped to `[0, 1]`.
pub fn clamp_paired_to_unit(raw: f64, scale: &PairedRewardScale) -> f64 {
    (1.0 + raw / scale.floor()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn uniform_reward_values() {
        assert_eq!(uniform_reward(0.0).unwrap(), 1.0);
        assert_eq!(uniform_reward(1.0).unwrap(), 0.0);
        assert_eq!(uniform_reward(0.5).unwrap(), 0.75);
        assert!(uniform_reward(1.2).is_err());
        assert!(uniform_reward(-0.01).is_err());
    }

    #[test]
    fn range_scaled_values() {
        let spec = RangeSpec::new(&[(0.0, 2.0), (1.0, 3.0)]).unwrap();
        assert_eq!(spec.a_min(), 0.0);
        assert_eq!(range_scaled_reward(0.0, 0, &spec).unwrap(), 1.0);
        assert_eq!(range_scaled_reward(2.0, 0, &spec).unwrap(), 0.0);
        assert_eq!(range_scaled_reward(1.0, 0, &spec).unwrap(), 0.75);
        assert_eq!(range_scaled_reward(3.0, 1, &spec).unwrap(), 0.0);
        match range_scaled_reward(0.5, 1, &spec) {
            Err(RewardError::OutOfRange { arm, .. }) => assert_eq!(arm, 1),
            other => panic!("{other:?}"),
        }
        assert!(RangeSpec::new(&[(1.0, 1.0)]).is_err());
        let unit = RangeSpec::unit(3);
        assert_eq!(
            range_scaled_reward(0.3, 2, &unit).unwrap(),
            uniform_reward(0.3).unwrap()
        );
    }

    #[test]
    fn scale_back_values() {
        let spec = RangeSpec::new(&[(0.0, 2.0), (0.0, 2.0)]).unwrap();
        assert_eq!(scale_back_bound(1.0, 0, &spec), 0.0);
        assert_eq!(scale_back_bound(0.0, 0, &spec), -4.0);
        assert_eq!(scale_back_bound(0.3, 0, &spec), scale_back_bound(0.3, 1, &spec));
    }

    #[test]
    fn paired_reward_values() {
        assert_eq!(paired_cost_reward(0.4, 0.4, 3.0, 9.0), 0.0);
        assert_eq!(paired_cost_reward(0.0, 1.0, 1.0, 1.0), -0.5);
    }

    #[test]
    fn paired_reward_expectation_is_minus_delta_v() {
        // X ~ scaled Bernoulli with variance 0.04 (s = 0.4, p = 1/2),
        // D ~ Uniform(1, 3) independent of X with mean 2.
        let mut rng = rng_from_seed(21);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x1 = if rng.random::<bool>() { 0.7 } else { 0.3 };
            let x2 = if rng.random::<bool>() { 0.7 } else { 0.3 };
            let d1 = rng.random_range(1.0..3.0);
            let d2 = rng.random_range(1.0..3.0);
            let r = paired_cost_reward(x1, x2, d1, d2);
            sum += r;
            sum_sq += r * r;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean + 0.08).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn clamp_values() {
        let s = PairedRewardScale::new(2.0, 1.0).unwrap();
        assert_eq!(clamp_paired_to_unit(0.0, &s), 1.0);
        assert_eq!(clamp_paired_to_unit(-s.floor(), &s), 0.0);
        assert_eq!(clamp_paired_to_unit(-10.0 * s.floor(), &s), 0.0);
        assert!(s.clamps(-1.5));
        assert!(!s.clamps(-0.5));
        assert!(PairedRewardScale::new(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn transforms_land_in_unit_interval(
            lower in -5.0f64..5.0,
            width in 0.01f64..10.0,
            frac in 0.0f64..=1.0,
            raw in -100.0f64..=0.0,
        ) {
            let spec = RangeSpec::new(&[(lower, lower + width), (lower - 1.0, lower + 2.0 * width)]).unwrap();
            let x = lower + frac * width;
            let r = range_scaled_reward(x, 0, &spec).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            let scale = PairedRewardScale::new(3.0, 2.0).unwrap();
            let u = clamp_paired_to_unit(raw, &scale);
            prop_assert!((0.0..=1.0).contains(&u));
        }

        #[test]
        fn scale_back_recovers_negative_square(
            lower in -5.0f64..5.0,
            width in 0.01f64..10.0,
            frac in 0.0f64..=1.0,
        ) {
            let spec = RangeSpec::new(&[(lower - 0.5, lower + width), (lower, lower + width)]).unwrap();
            let x = lower + frac * width;
            let b = range_scaled_reward(x, 1, &spec).unwrap();
            let back = scale_back_bound(b, 1, &spec);
            let expect = -(x - spec.a_min()).powi(2);
            prop_assert!((back - expect).abs() <= 1e-9 * spec.range_weight(1).max(1.0));
        }

        #[test]
        fn paired_reward_is_symmetric(
            x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, d1 in 0.001f64..5.0, d2 in 0.001f64..5.0,
        ) {
            prop_assert_eq!(paired_cost_reward(x1, x2, d1, d2), paired_cost_reward(x2, x1, d2, d1));
            prop_assert!(paired_cost_reward(x1, x2, d1, d2) <= 0.0);
        }

        #[test]
        fn paired_clamp_preserves_order(a in -10.0f64..0.0, b in -10.0f64..0.0) {
            let s = PairedRewardScale::new(4.0, 2.0).unwrap();
            if a > b {
                prop_assert!(clamp_paired_to_unit(a, &s) >= clamp_paired_to_unit(b, &s));
            }
        }
    }

    #[test]
    fn uniform_reward_orders_arms_by_second_moment() {
        // Two arms with mean 0.5: E[1 - X^2] ordering must follow -E[X^2].
        let mut rng = rng_from_seed(3);
        let n = 200_000;
        let mut means = [0.0; 2];
        for (k, s) in [0.2f64, 0.6].iter().enumerate() {
            let mut acc = 0.0;
            for _ in 0..n {
                let x = 0.5 + s * (if rng.random::<bool>() { 0.5 } else { -0.5 });
                acc += uniform_reward(x).unwrap();
            }
            means[k] = acc / n as f64;
        }
        // E[X^2] = 0.25 + s^2/4.
        assert_abs_diff_eq!(means[0], 1.0 - 0.26, epsilon = 2e-3);
        assert_abs_diff_eq!(means[1], 1.0 - 0.34, epsilon = 2e-3);
        assert!(means[0] > means[1]);
    }
}
