use super::{argmax, check_reward, kl_upper_bound, ArmStatistics, Policy, PolicyError, Selections};
use crate::rng::McRng;

/// `mean + sqrt(2 ln t / count)`.
pub fn ucb1_index(stats: &ArmStatistics, t: u64) -> Result<f64, PolicyError> {
    if stats.count == 0 {
        return Err(PolicyError::ZeroCount);
    }
    Ok(ucb1_raw(stats, t))
}

/// `mean + sqrt(2 V E / count) + c * 3E / count` with `E = zeta ln t` and `V`
/// the empirical variance `m2 / count`.
pub fn ucbv_index(stats: &ArmStatistics, t: u64, zeta: f64, c: f64) -> Result<f64, PolicyError> {
    if stats.count == 0 {
        return Err(PolicyError::ZeroCount);
    }
    Ok(ucbv_raw(stats, t, zeta, c))
}

/// Exploration level `f(t) = ln t + 3 ln ln t`, held at `f(3)` for `t < 3`.
pub fn klucb_exploration(t: u64) -> f64 {
    let t = t.max(3) as f64;
    t.ln() + 3.0 * t.ln().ln()
}

/// `sup { q : KL(mean, q) <= f(t) / count }`, solved by bisection on `[mean, 1]`.
///
/// Means that drift marginally outside `[0, 1]` through rounding are clamped.
pub fn klucb_index(stats: &ArmStatistics, t: u64, tolerance: f64) -> Result<f64, PolicyError> {
    if stats.count == 0 {
        return Err(PolicyError::ZeroCount);
    }
    Ok(klucb_raw(stats, t, tolerance))
}

fn ucb1_raw(stats: &ArmStatistics, t: u64) -> f64 {
    let t = t.max(1) as f64;
    stats.mean + (2.0 * t.ln() / stats.count as f64).sqrt()
}

fn ucbv_raw(stats: &ArmStatistics, t: u64, zeta: f64, c: f64) -> f64 {
    let n = stats.count as f64;
    let e = zeta * (t.max(1) as f64).ln();
    stats.mean + (2.0 * stats.variance() * e / n).sqrt() + c * 3.0 * e / n
}

fn klucb_raw(stats: &ArmStatistics, t: u64, tolerance: f64) -> f64 {
    let budget = klucb_exploration(t) / stats.count as f64;
    kl_upper_bound(stats.mean.clamp(0.0, 1.0), budget, tolerance)
}

/// Which upper confidence bound a [`UcbPolicy`] maximizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UcbRule {
    Ucb1,
    UcbV { zeta: f64, c: f64 },
    KlUcb { tolerance: f64 },
}

/// Index policy: one forced pull per arm, then the arm with the largest bound.
#[derive(Debug, Clone)]
pub struct UcbPolicy {
    rule: UcbRule,
    stats: Vec<ArmStatistics>,
    range_weights: Option<Vec<f64>>,
    selections: Selections,
}

impl UcbPolicy {
    pub fn new(n_arms: usize, rule: UcbRule, range_weights: Option<Vec<f64>>) -> Self {
        Self {
            rule,
            stats: vec![ArmStatistics::new(); n_arms],
            range_weights,
            selections: Selections::new(n_arms),
        }
    }

    pub fn stats(&self) -> &[ArmStatistics] {
        &self.stats
    }

    pub fn index(&self, arm: usize, t: u64) -> Result<f64, PolicyError> {
        let s = &self.stats[arm];
        match self.rule {
            UcbRule::Ucb1 => ucb1_index(s, t),
            UcbRule::UcbV { zeta, c } => ucbv_index(s, t, zeta, c),
            UcbRule::KlUcb { tolerance } => klucb_index(s, t, tolerance),
        }
    }

    fn raw_index(&self, s: &ArmStatistics, t: u64) -> f64 {
        match self.rule {
            UcbRule::Ucb1 => ucb1_raw(s, t),
            UcbRule::UcbV { zeta, c } => ucbv_raw(s, t, zeta, c),
            UcbRule::KlUcb { tolerance } => klucb_raw(s, t, tolerance),
        }
    }
}

impl Policy for UcbPolicy {
    fn n_arms(&self) -> usize {
        self.stats.len()
    }

    fn select(&mut self, t: u64, _rng: &mut McRng) -> usize {
        if let Some(arm) = self.stats.iter().position(|s| s.count == 0) {
            return self.selections.mark(arm);
        }
        let arm = match &self.range_weights {
            None => argmax(self.stats.iter().map(|s| self.raw_index(s, t))),
            Some(w) => argmax(
                self.stats
                    .iter()
                    .zip(w)
                    .map(|(s, w)| w * (self.raw_index(s, t) - 1.0)),
            ),
        };
        self.selections.mark(arm)
    }

    fn update(&mut self, arm: usize, reward: f64, _rng: &mut McRng) -> Result<(), PolicyError> {
        self.selections.check(arm)?;
        let reward = check_reward(reward)?;
        self.stats[arm].push(reward);
        Ok(())
    }

    fn name(&self) -> String {
        match self.rule {
            UcbRule::Ucb1 => "ucb1",
            UcbRule::UcbV { .. } => "ucbv",
            UcbRule::KlUcb { .. } => "klucb",
        }
        .to_string()
    }
}
