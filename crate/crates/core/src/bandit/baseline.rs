//! Non-adaptive allocation rules used as baselines and test stubs.

use super::{check_reward, Policy, PolicyError, Selections};
use crate::rng::McRng;

/// Cycles through the arms in index order (uniform allocation).
#[derive(Debug, Clone)]
pub struct RoundRobin {
    n_arms: usize,
    next: usize,
    selections: Selections,
}

impl RoundRobin {
    pub fn new(n_arms: usize) -> Self {
        assert!(n_arms > 0, "need at least one arm");
        Self {
            n_arms,
            next: 0,
            selections: Selections::new(n_arms),
        }
    }
}

impl Policy for RoundRobin {
    fn n_arms(&self) -> usize {
        self.n_arms
    }

    fn select(&mut self, _t: u64, _rng: &mut McRng) -> usize {
        let arm = self.next;
        self.next = (self.next + 1) % self.n_arms;
        self.selections.mark(arm)
    }

    fn update(&mut self, arm: usize, reward: f64, _rng: &mut McRng) -> Result<(), PolicyError> {
        self.selections.check(arm)?;
        check_reward(reward).map(|_| ())
    }

    fn name(&self) -> String {
        "uniform".to_string()
    }
}

/// Always plays the same arm.
#[derive(Debug, Clone)]
pub struct FixedArm {
    n_arms: usize,
    arm: usize,
    selections: Selections,
}

impl FixedArm {
    pub fn new(n_arms: usize, arm: usize) -> Self {
        assert!(arm < n_arms, "fixed arm {arm} out of range for {n_arms} arms");
        Self {
            n_arms,
            arm,
            selections: Selections::new(n_arms),
        }
    }
}

impl Policy for FixedArm {
    fn n_arms(&self) -> usize {
        self.n_arms
    }

    fn select(&mut self, _t: u64, _rng: &mut McRng) -> usize {
        self.selections.mark(self.arm)
    }

    fn update(&mut self, arm: usize, reward: f64, _rng: &mut McRng) -> Result<(), PolicyError> {
        self.selections.check(arm)?;
        check_reward(reward).map(|_| ())
    }

    fn name(&self) -> String {
        format!("fixed-{}", self.arm)
    }
}

/// Replays a recorded sequence of choices; wraps around at the end.
#[derive(Debug, Clone)]
pub struct Replay {
    n_arms: usize,
    choices: Vec<usize>,
    pos: usize,
    selections: Selections,
}

impl Replay {
    pub fn new(n_arms: usize, choices: Vec<usize>) -> Self {
        assert!(!choices.is_empty(), "nothing to replay");
        assert!(choices.iter().all(|&a| a < n_arms), "recorded arm out of range");
        Self {
            n_arms,
            choices,
            pos: 0,
            selections: Selections::new(n_arms),
        }
    }
}

impl Policy for Replay {
    fn n_arms(&self) -> usize {
        self.n_arms
    }

    fn select(&mut self, _t: u64, _rng: &mut McRng) -> usize {
        let arm = self.choices[self.pos % self.choices.len()];
        self.pos += 1;
        self.selections.mark(arm)
    }

    fn update(&mut self, arm: usize, reward: f64, _rng: &mut McRng) -> Result<(), PolicyError> {
        self.selections.check(arm)?;
        check_reward(reward).map(|_| ())
    }

    fn name(&self) -> String {
        "replay".to_string()
    }
}
