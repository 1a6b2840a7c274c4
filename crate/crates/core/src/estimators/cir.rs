//! Caplet pricing under the Cox-Ingersoll-Ross short-rate model, with an
//! exponentially twisted Euler scheme as a family of importance samplers.

use serde::{Deserialize, Serialize};

use super::{std_normal, Estimator, EstimatorError};
use crate::rng::McRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CirSpec {
    /// Long-run drift level.
    pub eta: f64,
    /// Mean-reversion speed.
    pub kappa: f64,
    /// Volatility.
    pub sigma: f64,
    /// Initial rate.
    pub r0: f64,
    /// Maturity.
    pub maturity: f64,
    pub n_steps: usize,
    /// Notional.
    pub nominal: f64,
    pub strike: f64,
    /// Mean shift of the driving normals.
    pub theta: f64,
}

impl Default for CirSpec {
    fn default() -> Self {
        Self {
            eta: 0.016,
            kappa: 0.2,
            sigma: 0.02,
            r0: 0.08,
            maturity: 1.0,
            n_steps: 100,
            nominal: 1000.0,
            strike: 0.07,
            theta: 0.0,
        }
    }
}

impl CirSpec {
    pub fn with_strike(mut self, strike: f64) -> Self {
        self.strike = strike;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidSpec(m.to_string()));
        let finite = [
            self.eta,
            self.kappa,
            self.sigma,
            self.r0,
            self.maturity,
            self.nominal,
            self.strike,
            self.theta,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("CIR parameters must be finite");
        }
        if self.n_steps == 0 {
            return bad("CIR needs at least one step");
        }
        if self.sigma < 0.0 {
            return bad("CIR volatility must be nonnegative");
        }
        if self.r0 <= 0.0 || self.maturity <= 0.0 || self.nominal < 0.0 || self.strike <= 0.0 {
            return bad("CIR r0, maturity and strike must be positive, nominal nonnegative");
        }
        Ok(())
    }

    fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirPath {
    /// `r_1, ..., r_n`.
    pub rates: Vec<f64>,
    /// Sum of the drawn normals.
    pub noise_sum: f64,
    /// Steps where the previous rate was negative and got truncated to 0.
    pub truncations: u32,
}

/// Euler path with full truncation; normals are drawn from `N(theta, 1)`.
pub fn simulate_cir_path(spec: &CirSpec, rng: &mut McRng) -> CirPath {
    let mut path = CirPath {
        rates: Vec::with_capacity(spec.n_steps),
        noise_sum: 0.0,
        truncations: 0,
    };
    fill_path(spec, rng, &mut path);
    path
}

fn fill_path(spec: &CirSpec, rng: &mut McRng, path: &mut CirPath) {
    let dt = spec.dt();
    let sqrt_dt = dt.sqrt();
    path.rates.clear();
    path.noise_sum = 0.0;
    path.truncations = 0;
    let mut r = spec.r0;
    for _ in 0..spec.n_steps {
        let eps = spec.theta + std_normal(rng);
        path.noise_sum += eps;
        let r_pos = if r < 0.0 {
            path.truncations += 1;
            0.0
        } else {
            r
        };
        r += (spec.eta - spec.kappa * r_pos) * dt + spec.sigma * r_pos.sqrt() * sqrt_dt * eps;
        path.rates.push(r);
    }
}

/// `exp(-(T/n)((r_1 + r_n)/2 + sum r_t)) * M * max(r_n - K, 0)`.
pub fn cir_payoff(path: &CirPath, spec: &CirSpec) -> f64 {
    let (first, last) = match (path.rates.first(), path.rates.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return 0.0,
    };
    let intrinsic = (last - spec.strike).max(0.0);
    if intrinsic == 0.0 || spec.nominal == 0.0 {
        return 0.0;
    }
    let sum: f64 = path.rates.iter().sum();
    let discount = (-spec.dt() * (0.5 * (first + last) + sum)).exp();
    discount * spec.nominal * intrinsic
}

/// Likelihood ratio of `N(0,1)^n` to `N(theta,1)^n` at the drawn normals:
/// `exp(-theta * noise_sum + n theta^2 / 2)`.
pub fn cir_importance_weight(noise_sum: f64, spec: &CirSpec) -> f64 {
    let n = spec.n_steps as f64;
    (-spec.theta * noise_sum + 0.5 * n * spec.theta * spec.theta).exp()
}

/// Weighted payoff `w * p` per draw.
#[derive(Debug, Clone)]
pub struct CirSampler {
    spec: CirSpec,
    path: CirPath,
}

impl CirSampler {
    pub fn new(spec: CirSpec) -> Self {
        Self {
            spec,
            path: CirPath {
                rates: Vec::with_capacity(spec.n_steps),
                noise_sum: 0.0,
                truncations: 0,
            },
        }
    }

    pub fn spec(&self) -> &CirSpec {
        &self.spec
    }

    /// One path's `(importance weight, payoff)`.
    pub fn sample_parts(&mut self, rng: &mut McRng) -> (f64, f64) {
        fill_path(&self.spec, rng, &mut self.path);
        let payoff = cir_payoff(&self.path, &self.spec);
        let weight = if payoff == 0.0 {
            0.0
        } else {
            cir_importance_weight(self.path.noise_sum, &self.spec)
        };
        (weight, payoff)
    }

    /// Truncations on the most recent path.
    pub fn last_truncations(&self) -> u32 {
        self.path.truncations
    }
}

impl Estimator for CirSampler {
    fn sample(&mut self, rng: &mut McRng) -> Result<f64, EstimatorError> {
        let (w, p) = self.sample_parts(rng);
        Ok(w * p)
    }
}
