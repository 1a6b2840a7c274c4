//! Stochastic bandit policies over rewards in `[0, 1]`.
//!
//! UCB1, UCB-V, KL-UCB and Bernoulli-resampling Thompson sampling share the
//! [`Policy`] select/update contract. Ties are always broken towards the
//! lowest arm index so traces are reproducible.

mod baseline;
mod kl;
mod stats;
mod thompson;
mod ucb;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::McRng;

pub use baseline::{FixedArm, Replay, RoundRobin};
pub use kl::{bernoulli_kl, kl_lower_bound, kl_upper_bound, KL_MAX_ITERATIONS};
pub use stats::ArmStatistics;
pub use thompson::{Thompson, ThompsonState};
pub use ucb::{klucb_exploration, klucb_index, ucb1_index, ucbv_index, UcbPolicy, UcbRule};

/// Slack allowed when checking that a reward lies in `[0, 1]`; rewards
/// within it are clamped, anything further out is rejected.
pub const REWARD_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("index requested for an arm with no pulls; initialize every arm first")]
    ZeroCount,
    #[error("arm {arm} is out of range for a {n_arms}-armed policy")]
    ArmOutOfRange { arm: usize, n_arms: usize },
    #[error("update for arm {arm}, which the policy never selected")]
    UnselectedArm { arm: usize },
    #[error("reward {reward} is outside [0, 1]")]
    RewardOutOfRange { reward: f64 },
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
}

/// The select/update contract shared by every allocation rule.
///
/// `t` is the 1-based round index. Policy instances are single-run state;
/// they are `Send` so replicates can run on worker threads.
pub trait Policy: Send {
    fn n_arms(&self) -> usize;

    fn select(&mut self, t: u64, rng: &mut McRng) -> usize;

    fn update(&mut self, arm: usize, reward: f64, rng: &mut McRng) -> Result<(), PolicyError>;

    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "ucb1")]
    Ucb1,
    #[serde(rename = "ucbv")]
    UcbV,
    #[serde(rename = "klucb")]
    KlUcb,
    #[serde(rename = "ts")]
    Thompson,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Ucb1,
        PolicyKind::UcbV,
        PolicyKind::KlUcb,
        PolicyKind::Thompson,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Ucb1 => "ucb1",
            PolicyKind::UcbV => "ucbv",
            PolicyKind::KlUcb => "klucb",
            PolicyKind::Thompson => "ts",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ucb1" => Ok(PolicyKind::Ucb1),
            "ucbv" | "ucb-v" => Ok(PolicyKind::UcbV),
            "klucb" | "kl-ucb" => Ok(PolicyKind::KlUcb),
            "ts" | "thompson" => Ok(PolicyKind::Thompson),
            other => Err(PolicyError::InvalidConfig(format!("unknown policy `{other}`"))),
        }
    }
}

fn default_zeta() -> f64 {
    1.0
}
fn default_c() -> f64 {
    1.0
}
fn default_tolerance() -> f64 {
    1e-9
}
fn default_prior() -> (f64, f64) {
    (1.0, 1.0)
}

/// Parameters of one of the four bandit rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Exploration constant of UCB-V's `E = zeta * ln t`.
    #[serde(default = "default_zeta")]
    pub ucbv_zeta: f64,
    /// Weight of UCB-V's `3E/T` range term.
    #[serde(default = "default_c")]
    pub ucbv_c: f64,
    /// Absolute bisection tolerance for KL-UCB, in `(0, 1e-6]`.
    #[serde(default = "default_tolerance")]
    pub klucb_tolerance: f64,
    /// Beta prior `(alpha, beta)` for Thompson sampling.
    #[serde(default = "default_prior")]
    pub ts_prior: (f64, f64),
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            ucbv_zeta: default_zeta(),
            ucbv_c: default_c(),
            klucb_tolerance: default_tolerance(),
            ts_prior: default_prior(),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: String| Err(PolicyError::InvalidConfig(msg));
        if !(self.ucbv_zeta > 0.0 && self.ucbv_zeta.is_finite()) {
            return bad(format!("ucbv_zeta must be positive, got {}", self.ucbv_zeta));
        }
        if !(self.ucbv_c > 0.0 && self.ucbv_c.is_finite()) {
            return bad(format!("ucbv_c must be positive, got {}", self.ucbv_c));
        }
        if !(self.klucb_tolerance > 0.0 && self.klucb_tolerance <= 1e-6) {
            return bad(format!(
                "klucb_tolerance must lie in (0, 1e-6], got {}",
                self.klucb_tolerance
            ));
        }
        let (a, b) = self.ts_prior;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return bad(format!("ts_prior must be positive, got ({a}, {b})"));
        }
        Ok(())
    }

    /// Instantiate the policy for `n_arms` arms.
    ///
    /// `range_weights`, when given, holds the squared per-arm reward ranges
    /// `(b_k - a_min)^2`; arms are then compared on the scaled-back bound
    /// `w_k * (B_k - 1)` instead of the raw index `B_k`.
    pub fn build(
        &self,
        n_arms: usize,
        range_weights: Option<Vec<f64>>,
    ) -> Result<Box<dyn Policy>, PolicyError> {
        self.validate()?;
        if n_arms == 0 {
            return Err(PolicyError::InvalidConfig(
                "a policy needs at least one arm".into(),
            ));
        }
        if let Some(w) = &range_weights {
            if w.len() != n_arms || w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(PolicyError::InvalidConfig(
                    "range weights must be positive, one per arm".into(),
                ));
            }
        }
        Ok(match self.kind {
            PolicyKind::Ucb1 => Box::new(UcbPolicy::new(n_arms, UcbRule::Ucb1, range_weights)),
            PolicyKind::UcbV => Box::new(UcbPolicy::new(
                n_arms,
                UcbRule::UcbV {
                    zeta: self.ucbv_zeta,
                    c: self.ucbv_c,
                },
                range_weights,
            )),
            PolicyKind::KlUcb => Box::new(UcbPolicy::new(
                n_arms,
                UcbRule::KlUcb {
                    tolerance: self.klucb_tolerance,
                },
                range_weights,
            )),
            PolicyKind::Thompson => Box::new(Thompson::new(
                n_arms,
                self.ts_prior.0,
                self.ts_prior.1,
                range_weights,
            )),
        })
    }
}

/// Clamp a reward that is within [`REWARD_SLACK`] of `[0, 1]`.
pub(crate) fn check_reward(reward: f64) -> Result<f64, PolicyError> {
    if reward.is_nan() || reward < -REWARD_SLACK || reward > 1.0 + REWARD_SLACK {
        return Err(PolicyError::RewardOutOfRange { reward });
    }
    Ok(reward.clamp(0.0, 1.0))
}

/// Index of the largest score, lowest index on ties. NaN never wins.
pub(crate) fn argmax(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut first = true;
    for (i, s) in scores.into_iter().enumerate() {
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        if first || s > best_score {
            best = i;
            best_score = s;
            first = false;
        }
    }
    best
}

/// Tracks which arms a policy has handed out, so updates for arms that were
/// never selected can be refused.
#[derive(Debug, Clone)]
pub(crate) struct Selections(Vec<bool>);

impl Selections {
    pub(crate) fn new(n_arms: usize) -> Self {
        Self(vec![false; n_arms])
    }

    pub(crate) fn mark(&mut self, arm: usize) -> usize {
        self.0[arm] = true;
        arm
    }

    pub(crate) fn check(&self, arm: usize) -> Result<(), PolicyError> {
        match self.0.get(arm) {
            None => Err(PolicyError::ArmOutOfRange {
                arm,
                n_arms: self.0.len(),
            }),
            Some(false) => Err(PolicyError::UnselectedArm { arm }),
            Some(true) => Ok(()),
        }
    }
}
