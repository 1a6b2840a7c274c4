use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::{argmax, check_reward, Policy, PolicyError, Selections};
use crate::rng::McRng;

/// Beta-Bernoulli posterior counts for Thompson sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ThompsonState {
    pub successes: Vec<u64>,
    pub failures: Vec<u64>,
    pub prior_alpha: f64,
    pub prior_beta: f64,
}

/// `Beta(a, b)` through two unit-scale Gamma draws.
pub(crate) fn sample_beta(a: f64, b: f64, rng: &mut McRng) -> f64 {
    let x = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    let y = Gamma::new(b, 1.0).expect("positive shape").sample(rng);
    let s = x + y;
    if s > 0.0 {
        x / s
    } else {
        // Both draws underflowed (tiny shapes); fall back to the prior mean.
        a / (a + b)
    }
}

impl ThompsonState {
    pub fn new(n_arms: usize, prior_alpha: f64, prior_beta: f64) -> Self {
        Self {
            successes: vec![0; n_arms],
            failures: vec![0; n_arms],
            prior_alpha,
            prior_beta,
        }
    }

    pub fn n_arms(&self) -> usize {
        self.successes.len()
    }

    /// One posterior draw `theta_k ~ Beta(S_k + alpha, F_k + beta)` per arm.
    pub fn sample_posteriors(&self, rng: &mut McRng) -> Vec<f64> {
        self.successes
            .iter()
            .zip(&self.failures)
            .map(|(&s, &f)| sample_beta(s as f64 + self.prior_alpha, f as f64 + self.prior_beta, rng))
            .collect()
    }

    /// Draw posteriors and return the arm with the largest sample.
    pub fn select(&self, rng: &mut McRng) -> usize {
        argmax(self.sample_posteriors(rng))
    }

    /// Resample `reward` to a coin flip and count it for `arm`. Returns the
    /// Bernoulli outcome.
    pub fn record(&mut self, arm: usize, reward: f64, rng: &mut McRng) -> Result<bool, PolicyError> {
        if arm >= self.n_arms() {
            return Err(PolicyError::ArmOutOfRange {
                arm,
                n_arms: self.n_arms(),
            });
        }
        let reward = check_reward(reward)?;
        let success = rng.random::<f64>() < reward;
        if success {
            self.successes[arm] += 1;
        } else {
            self.failures[arm] += 1;
        }
        Ok(success)
    }
}

/// Thompson sampling with Bernoulli resampling of `[0, 1]` rewards.
#[derive(Debug, Clone)]
pub struct Thompson {
    state: ThompsonState,
    range_weights: Option<Vec<f64>>,
    selections: Selections,
}

impl Thompson {
    pub fn new(n_arms: usize, alpha: f64, beta: f64, range_weights: Option<Vec<f64>>) -> Self {
        Self {
            state: ThompsonState::new(n_arms, alpha, beta),
            range_weights,
            selections: Selections::new(n_arms),
        }
    }

    pub fn state(&self) -> &ThompsonState {
        &self.state
    }
}

impl Policy for Thompson {
    fn n_arms(&self) -> usize {
        self.state.n_arms()
    }

    fn select(&mut self, _t: u64, rng: &mut McRng) -> usize {
        let draws = self.state.sample_posteriors(rng);
        let arm = match &self.range_weights {
            None => argmax(draws),
            Some(w) => argmax(draws.iter().zip(w).map(|(d, w)| w * (d - 1.0))),
        };
        self.selections.mark(arm)
    }

    fn update(&mut self, arm: usize, reward: f64, rng: &mut McRng) -> Result<(), PolicyError> {
        self.selections.check(arm)?;
        self.state.record(arm, reward, rng).map(|_| ())
    }

    fn name(&self) -> String {
        "ts".to_string()
    }
}
