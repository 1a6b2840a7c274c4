//! Base estimators: the arms of the allocation problem.
//!
//! An [`Estimator`] produces iid unbiased draws of the target quantity. An
//! [`Arm`] pairs one with a [`CostModel`] and its own random stream and
//! emits [`Observation`]s.

mod ais;
mod cir;
mod logistic;
mod synthetic;

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from_seed, McRng};

pub use ais::{
    ais_schedule, slice_sample_step, slice_sweep, AisSampler, AisSpec, AisTarget, GaussianToy, TargetSpec,
};
pub use cir::{cir_importance_weight, cir_payoff, simulate_cir_path, CirPath, CirSampler, CirSpec};
pub use logistic::{
    logistic_posterior_gradient, logistic_posterior_logdensity, Dataset, DatasetSource, LogisticTarget,
    PRIOR_VARIANCE,
};
pub use synthetic::{sample_scaled_bernoulli, Constant, ScaledBernoulli, ScaledBernoulliSpec};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimator produced a non-finite value {value}")]
    NonFinite { value: f64 },
    #[error("log density is not finite at the current point")]
    NonFiniteDensity,
    #[error("invalid estimator specification: {0}")]
    InvalidSpec(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One draw: the estimate and the time it took to produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub value: f64,
    pub cost: f64,
}

/// A source of iid unbiased estimates.
pub trait Estimator: Send {
    fn sample(&mut self, rng: &mut McRng) -> Result<f64, EstimatorError>;
}

/// How long a draw takes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostModel {
    /// Every draw costs one unit.
    Unit,
    /// Every draw costs `delta`.
    Deterministic { delta: f64 },
    /// `1 + Geometric(1/delta)` failures: support `{1, 2, ...}`, mean `delta`.
    Geometric { delta: f64 },
    /// `mean * exp(sigma_log Z - sigma_log^2 / 2)`, a mean-preserving
    /// lognormal jitter.
    Jittered { mean: f64, sigma_log: f64 },
    /// Elapsed wall-clock seconds of the draw. Not reproducible.
    WallClock,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::Unit
    }
}

/// Smallest cost ever reported, keeping costs strictly positive.
pub const MIN_COST: f64 = 1e-12;

impl CostModel {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: String| Err(EstimatorError::InvalidSpec(m));
        match *self {
            CostModel::Unit | CostModel::WallClock => Ok(()),
            CostModel::Deterministic { delta } if !(delta > 0.0 && delta.is_finite()) => {
                bad(format!("deterministic cost must be positive, got {delta}"))
            }
            CostModel::Geometric { delta } if !(delta >= 1.0 && delta.is_finite()) => {
                bad(format!("geometric cost mean must be >= 1, got {delta}"))
            }
            CostModel::Jittered { mean, sigma_log }
                if !(mean > 0.0 && mean.is_finite() && sigma_log >= 0.0 && sigma_log.is_finite()) =>
            {
                bad(format!(
                    "invalid jittered cost (mean {mean}, sigma_log {sigma_log})"
                ))
            }
            _ => Ok(()),
        }
    }

    /// Mean cost, when known in closed form.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            CostModel::Unit => Some(1.0),
            CostModel::Deterministic { delta } | CostModel::Geometric { delta } => Some(delta),
            CostModel::Jittered { mean, .. } => Some(mean),
            CostModel::WallClock => None,
        }
    }

    /// Draw a cost. `elapsed` is the measured duration of the draw, used only
    /// by [`CostModel::WallClock`].
    pub fn sample(&self, elapsed: f64, rng: &mut McRng) -> f64 {
        let cost = match *self {
            CostModel::Unit => 1.0,
            CostModel::Deterministic { delta } => delta,
            CostModel::Geometric { delta } => {
                let failures = Geometric::new(1.0 / delta)
                    .expect("validated probability")
                    .sample(rng);
                1.0 + failures as f64
            }
            CostModel::Jittered { mean, sigma_log } => {
                let z: f64 = StandardNormal.sample(rng);
                mean * (sigma_log * z - 0.5 * sigma_log * sigma_log).exp()
            }
            CostModel::WallClock => elapsed,
        };
        cost.max(MIN_COST)
    }
}

/// An estimator with its cost model and private random stream.
pub struct Arm {
    estimator: Box<dyn Estimator>,
    cost: CostModel,
    rng: McRng,
}

impl Arm {
    pub fn new(estimator: Box<dyn Estimator>, cost: CostModel, seed: u64) -> Self {
        Self {
            estimator,
            cost,
            rng: rng_from_seed(seed),
        }
    }

    pub fn draw(&mut self) -> Result<Observation, EstimatorError> {
        let start = Instant::now();
        let value = self.estimator.sample(&mut self.rng)?;
        let elapsed = start.elapsed().as_secs_f64();
        let cost = self.cost.sample(elapsed, &mut self.rng);
        finish(value, cost)
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost
    }
}

fn finish(value: f64, cost: f64) -> Result<Observation, EstimatorError> {
    if !value.is_finite() {
        return Err(EstimatorError::NonFinite { value });
    }
    Ok(Observation { value, cost })
}

impl std::fmt::Debug for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Arm")
            .field("cost", &self.cost)
            .finish_non_exhaustive()
    }
}

/// Declarative description of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorSpec {
    ScaledBernoulli(ScaledBernoulliSpec),
    Constant { value: f64 },
    Cir(CirSpec),
    Ais(AisSpec),
}

/// Declarative description of an arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub cost: CostModel,
    /// Known observation range `[a_k, b_k]`; defaults to the estimator's own
    /// range when it has one.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

impl ArmSpec {
    pub fn new(estimator: EstimatorSpec, cost: CostModel) -> Self {
        Self {
            estimator,
            cost,
            range: None,
        }
    }

    pub fn with_range(mut self, lower: f64, upper: f64) -> Self {
        self.range = Some((lower, upper));
        self
    }

    /// Validate and resolve external inputs (datasets) once, so replicates
    /// can instantiate arms cheaply.
    pub fn prepare(&self) -> Result<PreparedArm, EstimatorError> {
        self.cost.validate()?;
        let kind = match &self.estimator {
            EstimatorSpec::ScaledBernoulli(s) => {
                s.validate()?;
                Prepared::ScaledBernoulli(*s)
            }
            EstimatorSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(EstimatorError::InvalidSpec("constant must be finite".into()));
                }
                Prepared::Constant(*value)
            }
            EstimatorSpec::Cir(s) => {
                s.validate()?;
                Prepared::Cir(*s)
            }
            EstimatorSpec::Ais(s) => {
                s.validate()?;
                Prepared::Ais {
                    target: s.target.resolve()?,
                    schedule: s.resolved_schedule(),
                    slice_width: s.slice_width,
                }
            }
        };
        let range = match self.range {
            Some(r) => Some(r),
            None => match &self.estimator {
                EstimatorSpec::ScaledBernoulli(s) => Some(s.support()),
                _ => None,
            },
        };
        Ok(PreparedArm {
            kind,
            cost: self.cost,
            range,
        })
    }
}

#[derive(Clone)]
enum Prepared {
    ScaledBernoulli(ScaledBernoulliSpec),
    Constant(f64),
    Cir(CirSpec),
    Ais {
        target: Arc<dyn AisTarget>,
        schedule: Vec<f64>,
        slice_width: f64,
    },
}

/// A validated arm description that can be instantiated per replicate.
#[derive(Clone)]
pub struct PreparedArm {
    kind: Prepared,
    cost: CostModel,
    range: Option<(f64, f64)>,
}

impl PreparedArm {
    pub fn instantiate(&self, seed: u64) -> Arm {
        let estimator: Box<dyn Estimator> = match &self.kind {
            Prepared::ScaledBernoulli(s) => Box::new(ScaledBernoulli::new(*s)),
            Prepared::Constant(v) => Box::new(Constant(*v)),
            Prepared::Cir(s) => Box::new(CirSampler::new(*s)),
            Prepared::Ais {
                target,
                schedule,
                slice_width,
            } => Box::new(AisSampler::new(target.clone(), schedule.clone(), *slice_width)),
        };
        Arm::new(estimator, self.cost, seed)
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.range
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost
    }

    /// Analytic mean and variance, when known.
    pub fn moments(&self) -> Option<(f64, f64)> {
        match &self.kind {
            Prepared::ScaledBernoulli(s) => Some((s.mean(), s.variance())),
            Prepared::Constant(v) => Some((*v, 0.0)),
            _ => None,
        }
    }

    /// Analytic target value, when known.
    pub fn known_mean(&self) -> Option<f64> {
        match &self.kind {
            Prepared::Ais { target, .. } => target.log_normalizer().map(f64::exp),
            _ => self.moments().map(|m| m.0),
        }
    }
}

/// Standard normal draw.
pub(crate) fn std_normal(rng: &mut McRng) -> f64 {
    rng.sample(StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_draws_are_positive_and_match_means() {
        let mut rng = rng_from_seed(12);
        let n = 1_000_000;
        for model in [
            CostModel::Unit,
            CostModel::Deterministic { delta: 0.25 },
            CostModel::Geometric { delta: 2.0 },
            CostModel::Geometric { delta: 5.0 },
            CostModel::Jittered {
                mean: 400.0,
                sigma_log: 0.1,
            },
        ] {
            let mut sum = 0.0;
            for _ in 0..n {
                let c = model.sample(0.0, &mut rng);
                assert!(c > 0.0);
                sum += c;
            }
            let mean = sum / n as f64;
            let expected = model.mean().unwrap();
            assert!(
                (mean - expected).abs() / expected < 0.02,
                "{model:?}: {mean} vs {expected}"
            );
        }
        assert!(CostModel::Geometric { delta: 0.5 }.validate().is_err());
        assert!(CostModel::Deterministic { delta: 0.0 }.validate().is_err());
    }

    #[test]
    fn geometric_cost_support_starts_at_one() {
        let mut rng = rng_from_seed(2);
        let model = CostModel::Geometric { delta: 2.0 };
        let draws: Vec<f64> = (0..10_000).map(|_| model.sample(0.0, &mut rng)).collect();
        assert!(draws.iter().all(|&d| d >= 1.0 && d.fract() == 0.0));
        let ones = draws.iter().filter(|&&d| d == 1.0).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() < 0.03);
    }

    #[test]
    fn wall_clock_cost_is_positive() {
        let spec = ArmSpec::new(EstimatorSpec::Constant { value: 1.0 }, CostModel::WallClock);
        let mut arm = spec.prepare().unwrap().instantiate(0);
        for _ in 0..10 {
            assert!(arm.draw().unwrap().cost > 0.0);
        }
    }

    #[test]
    fn arms_reproduce_from_seed() {
        let spec = ArmSpec::new(
            EstimatorSpec::ScaledBernoulli(ScaledBernoulliSpec {
                midpoint: 0.5,
                scale: 0.4,
                p: 0.5,
            }),
            CostModel::Geometric { delta: 3.0 },
        );
        let prepared = spec.prepare().unwrap();
        let mut a = prepared.instantiate(99);
        let mut b = prepared.instantiate(99);
        for _ in 0..100 {
            assert_eq!(a.draw().unwrap(), b.draw().unwrap());
        }
        assert_eq!(prepared.range(), Some((0.3, 0.7)));
    }
}
