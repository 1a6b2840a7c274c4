//! Annealed importance sampling with coordinate-wise slice sampling.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::logistic::{DatasetSource, LogisticTarget};
use super::{std_normal, Estimator, EstimatorError};
use crate::rng::McRng;

/// Cap on stepping-out expansions per coordinate update.
const MAX_STEP_OUT: u32 = 10_000;

/// A prior/likelihood pair; the normalizer is `E_prior[likelihood]`.
pub trait AisTarget: Send + Sync {
    fn dim(&self) -> usize;
    /// Normalized log prior density.
    fn log_prior(&self, x: &[f64]) -> f64;
    fn log_likelihood(&self, x: &[f64]) -> f64;
    fn sample_prior(&self, rng: &mut McRng, out: &mut [f64]);
    /// `ln Z` when known in closed form.
    fn log_normalizer(&self) -> Option<f64>;
}

/// Prior `N(0, I_d)`, likelihood `exp(-precision |x|^2 / 2)`,
/// `Z = (1 + precision)^(-d/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianToy {
    pub dim: usize,
    pub precision: f64,
}

impl AisTarget for GaussianToy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        -0.5 * sq - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        -0.5 * self.precision * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn sample_prior(&self, rng: &mut McRng, out: &mut [f64]) {
        for v in out {
            *v = std_normal(rng);
        }
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(-0.5 * self.dim as f64 * (1.0 + self.precision).ln())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    GaussianToy {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "two")]
        precision: f64,
    },
    Logistic {
        dataset: DatasetSource,
    },
}

fn one() -> usize {
    1
}

fn two() -> f64 {
    2.0
}

impl TargetSpec {
    pub fn resolve(&self) -> Result<Arc<dyn AisTarget>, EstimatorError> {
        match self {
            TargetSpec::GaussianToy { dim, precision } => {
                if *dim == 0 || !(*precision >= 0.0 && precision.is_finite()) {
                    return Err(EstimatorError::InvalidSpec(
                        "gaussian toy needs dim >= 1 and a nonnegative precision".into(),
                    ));
                }
                Ok(Arc::new(GaussianToy {
                    dim: *dim,
                    precision: *precision,
                }))
            }
            TargetSpec::Logistic { dataset } => {
                let data = dataset.load()?;
                if data.dim() == 0 {
                    return Err(EstimatorError::Dataset("dataset has no features".into()));
                }
                Ok(Arc::new(LogisticTarget::new(Arc::new(data))))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AisSpec {
    pub n_anneal: usize,
    pub target: TargetSpec,
    #[serde(default = "default_width")]
    pub slice_width: f64,
    /// Replaces the default fourth-power schedule.
    #[serde(default)]
    pub schedule: Option<Vec<f64>>,
}

fn default_width() -> f64 {
    1.0
}

impl AisSpec {
    pub fn new(n_anneal: usize, target: TargetSpec) -> Self {
        Self {
            n_anneal,
            target,
            slice_width: 1.0,
            schedule: None,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: String| Err(EstimatorError::InvalidSpec(m));
        if !(self.slice_width > 0.0 && self.slice_width.is_finite()) {
            return bad(format!("slice width must be positive, got {}", self.slice_width));
        }
        match &self.schedule {
            None if self.n_anneal < 2 => bad(format!(
                "annealing needs at least 2 temperatures, got {}",
                self.n_anneal
            )),
            None => Ok(()),
            Some(s) => validate_schedule(s),
        }
    }

    pub fn resolved_schedule(&self) -> Vec<f64> {
        self.schedule
            .clone()
            .unwrap_or_else(|| ais_schedule(self.n_anneal))
    }
}

fn validate_schedule(s: &[f64]) -> Result<(), EstimatorError> {
    let ok = s.len() >= 2 && s[0] == 0.0 && s[s.len() - 1] == 1.0 && s.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(EstimatorError::InvalidSpec(
            "schedule must be nondecreasing from 0 to 1 with at least 2 entries".into(),
        ))
    }
}

/// `(i / (n-1))^4` for `i = 0..n`.
pub fn ais_schedule(n_anneal: usize) -> Vec<f64> {
    assert!(n_anneal >= 2, "annealing needs at least 2 temperatures");
    let last = (n_anneal - 1) as f64;
    (0..n_anneal)
        .map(|i| {
            if i == n_anneal - 1 {
                1.0
            } else {
                (i as f64 / last).powi(4)
            }
        })
        .collect()
}

/// One coordinate-wise slice-sampling sweep in place.
pub fn slice_sweep<F>(
    x: &mut [f64],
    mut logdensity: F,
    width: f64,
    rng: &mut McRng,
) -> Result<(), EstimatorError>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut current = logdensity(x);
    if !current.is_finite() {
        return Err(EstimatorError::NonFiniteDensity);
    }
    for i in 0..x.len() {
        current = update_coordinate(x, i, current, &mut logdensity, width, rng);
    }
    Ok(())
}

/// Sweep on a copy of `x`.
pub fn slice_sample_step<F>(
    x: &[f64],
    logdensity: F,
    width: f64,
    rng: &mut McRng,
) -> Result<Vec<f64>, EstimatorError>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut y = x.to_vec();
    slice_sweep(&mut y, logdensity, width, rng)?;
    Ok(y)
}

fn update_coordinate<F>(
    x: &mut [f64],
    i: usize,
    current: f64,
    logdensity: &mut F,
    width: f64,
    rng: &mut McRng,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let x0 = x[i];
    // Slice level: current + ln U with U uniform on (0, 1].
    let level = current + (1.0 - rng.random::<f64>()).ln();
    let mut eval = |x: &mut [f64], v: f64| {
        x[i] = v;
        logdensity(x)
    };

    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    let mut left_budget = (rng.random::<f64>() * MAX_STEP_OUT as f64) as u32;
    let mut right_budget = MAX_STEP_OUT - 1 - left_budget;
    while left_budget > 0 && eval(x, left) > level {
        left -= width;
        left_budget -= 1;
    }
    while right_budget > 0 && eval(x, right) > level {
        right += width;
        right_budget -= 1;
    }

    loop {
        let candidate = left + rng.random::<f64>() * (right - left);
        let value = eval(x, candidate);
        if value > level {
            return value;
        }
        if candidate == x0 {
            // Bracket collapsed onto the start point.
            x[i] = x0;
            return current;
        }
        if candidate < x0 {
            left = candidate;
        } else {
            right = candidate;
        }
    }
}

/// Draws AIS importance weights; each weight is unbiased for the normalizer.
#[derive(Clone)]
pub struct AisSampler {
    target: Arc<dyn AisTarget>,
    schedule: Vec<f64>,
    slice_width: f64,
    state: Vec<f64>,
}

impl AisSampler {
    pub fn new(target: Arc<dyn AisTarget>, schedule: Vec<f64>, slice_width: f64) -> Self {
        let dim = target.dim();
        Self {
            target,
            schedule,
            slice_width,
            state: vec![0.0; dim],
        }
    }

    pub fn with_steps(target: Arc<dyn AisTarget>, n_anneal: usize) -> Self {
        Self::new(target, ais_schedule(n_anneal), 1.0)
    }

    pub fn n_anneal(&self) -> usize {
        self.schedule.len()
    }

    /// Log of one AIS weight.
    pub fn sample_log_weight(&mut self, rng: &mut McRng) -> Result<f64, EstimatorError> {
        let target = self.target.as_ref();
        let x = &mut self.state;
        target.sample_prior(rng, x);
        let mut log_w = 0.0;
        let last = self.schedule.len() - 1;
        for j in 1..=last {
            let beta = self.schedule[j];
            let step = beta - self.schedule[j - 1];
            if step != 0.0 {
                log_w += step * target.log_likelihood(x);
            }
            if j < last {
                slice_sweep(
                    x,
                    |y| target.log_prior(y) + beta * target.log_likelihood(y),
                    self.slice_width,
                    rng,
                )?;
            }
        }
        if log_w.is_nan() {
            return Err(EstimatorError::NonFiniteDensity);
        }
        Ok(log_w)
    }
}

impl Estimator for AisSampler {
    fn sample(&mut self, rng: &mut McRng) -> Result<f64, EstimatorError> {
        self.sample_log_weight(rng).map(f64::exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_values() {
        assert_eq!(ais_schedule(2), vec![0.0, 1.0]);
        assert_eq!(ais_schedule(3), vec![0.0, 0.0625, 1.0]);
        let five = ais_schedule(5);
        let expected = [0.0, 1.0 / 256.0, 16.0 / 256.0, 81.0 / 256.0, 1.0];
        for (a, b) in five.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(validate_schedule(&[0.0, 0.5, 0.4, 1.0]).is_err());
        assert!(validate_schedule(&[0.0, 0.9]).is_err());
    }

    #[test]
    fn slice_step_preserves_uniform_support() {
        let mut rng = rng_from_seed(4);
        let unit = |y: &[f64]| {
            if (0.0..=1.0).contains(&y[0]) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut x = vec![0.3];
        for _ in 0..10_000 {
            x = slice_sample_step(&x, unit, 1.0, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&x[0]));
        }
        assert!(slice_sample_step(&[2.0], unit, 1.0, &mut rng).is_err());
    }

    #[test]
    fn chain_targets_standard_normal() {
        let mut rng = rng_from_seed(8);
        let mut x = vec![0.0];
        let n = 100_000;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            slice_sweep(&mut x, |y| -0.5 * y[0] * y[0], 1.0, &mut rng).unwrap();
            values.push(x[0]);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        // Batch means account for autocorrelation.
        let batches = 100;
        let size = n / batches;
        let bm: Vec<f64> = values
            .chunks(size)
            .map(|c| c.iter().sum::<f64>() / size as f64)
            .collect();
        let bvar = bm.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
        let se = (bvar / batches as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn detailed_balance_on_three_bins() {
        // Piecewise-constant density on [0, 3) with bin masses 0.2, 0.5, 0.3.
        let masses = [0.2, 0.5, 0.3];
        let logdensity = |y: &[f64]| {
            if (0.0..3.0).contains(&y[0]) {
                f64::ln(masses[y[0] as usize])
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut rng = rng_from_seed(21);
        let n = 300_000;
        let mut flux = [[0u64; 3]; 3];
        for _ in 0..n {
            // Start from the stationary distribution.
            let u: f64 = rng.random();
            let bin = if u < 0.2 {
                0
            } else if u < 0.7 {
                1
            } else {
                2
            };
            let start = bin as f64 + rng.random::<f64>();
            let end = slice_sample_step(&[start], logdensity, 1.0, &mut rng).unwrap()[0];
            flux[bin][end as usize] += 1;
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                let (a, b) = (flux[i][j] as f64, flux[j][i] as f64);
                // Difference of two near-Poisson counts.
                let sd = (a + b).sqrt();
                assert!((a - b).abs() < 4.0 * sd, "flux {i}->{j} {a} vs {b}");
                assert!(a > 1000.0);
            }
        }
        let visits: Vec<f64> = (0..3)
            .map(|j| (0..3).map(|i| flux[i][j]).sum::<u64>() as f64 / n as f64)
            .collect();
        for (v, m) in visits.iter().zip(masses) {
            assert!((v - m).abs() < 0.005);
        }
    }

    #[test]
    fn prior_equal_target_gives_unit_weight() {
        let toy = Arc::new(GaussianToy {
            dim: 3,
            precision: 0.0,
        });
        let mut sampler = AisSampler::with_steps(toy, 2);
        let mut rng = rng_from_seed(0);
        for _ in 0..10 {
            assert_eq!(sampler.sample(&mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn toy_normalizer_is_recovered() {
        let toy = Arc::new(GaussianToy {
            dim: 1,
            precision: 2.0,
        });
        let z = toy.log_normalizer().unwrap().exp();
        assert_abs_diff_eq!(z, 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        let mut rng = rng_from_seed(31);
        for steps in [2, 50] {
            let mut sampler = AisSampler::with_steps(toy.clone(), steps);
            let n = 10_000;
            let w: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng).unwrap()).collect();
            assert!(w.iter().all(|&v| v > 0.0 && v.is_finite()));
            let mean = w.iter().sum::<f64>() / n as f64;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - z).abs() < 3.0 * se,
                "steps {steps}: {mean} vs {z} (se {se})"
            );
        }
    }

    #[test]
    fn longer_annealing_reduces_weight_variance() {
        let toy: Arc<dyn AisTarget> = Arc::new(GaussianToy {
            dim: 4,
            precision: 2.0,
        });
        let mut rng = rng_from_seed(5);
        let mut variance = |steps: usize| {
            let mut sampler = AisSampler::with_steps(toy.clone(), steps);
            let n = 200;
            let w: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng).unwrap()).collect();
            let mean = w.iter().sum::<f64>() / n as f64;
            w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        };
        let (v400, v2000, v8000) = (variance(400), variance(2000), variance(8000));
        assert!(v2000 <= v400 && v8000 <= v2000, "{v400} {v2000} {v8000}");
    }
}
