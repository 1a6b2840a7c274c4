use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Estimator, EstimatorError};
use crate::rng::McRng;

/// `midpoint + (Z - 1/2) * scale` with `Z ~ Bernoulli(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledBernoulliSpec {
    pub midpoint: f64,
    pub scale: f64,
    pub p: f64,
}

impl ScaledBernoulliSpec {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !self.midpoint.is_finite() {
            return Err(EstimatorError::InvalidSpec("midpoint must be finite".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(EstimatorError::InvalidSpec(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(EstimatorError::InvalidSpec(format!(
                "p must lie in [0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.midpoint + (self.p - 0.5) * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale * self.p * (1.0 - self.p)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.midpoint - 0.5 * self.scale, self.midpoint + 0.5 * self.scale)
    }
}

pub fn sample_scaled_bernoulli(spec: &ScaledBernoulliSpec, rng: &mut McRng) -> f64 {
    let z = if rng.random::<f64>() < spec.p { 1.0 } else { 0.0 };
    spec.midpoint + (z - 0.5) * spec.scale
}

#[derive(Debug, Clone, Copy)]
pub struct ScaledBernoulli(ScaledBernoulliSpec);

impl ScaledBernoulli {
    pub fn new(spec: ScaledBernoulliSpec) -> Self {
        Self(spec)
    }
}

impl Estimator for ScaledBernoulli {
    fn sample(&mut self, rng: &mut McRng) -> Result<f64, EstimatorError> {
        Ok(sample_scaled_bernoulli(&self.0, rng))
    }
}

/// Always returns the same value.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl Estimator for Constant {
    fn sample(&mut self, _rng: &mut McRng) -> Result<f64, EstimatorError> {
        Ok(self.0)
    }
}
