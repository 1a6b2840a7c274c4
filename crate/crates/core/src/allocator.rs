//! Sequential allocation loops: a bandit policy picks which estimator to
//! draw from next, and the observations are averaged into one estimate.
//!
//! [`run_uniform_cost`] feeds one reward per draw. [`run_cost_aware`] uses
//! each decision for two draws and feeds the paired reward, tracking the
//! renewal times `J_m` so the estimate can be read off at any time `t`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{ArmStatistics, Policy, PolicyError};
use crate::estimators::{Arm, EstimatorError};
use crate::rewards::{
    clamp_paired_to_unit, paired_cost_reward, range_scaled_reward, PairedRewardScale, RangeSpec, RewardError,
};
use crate::rng::McRng;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("arm {arm} failed on draw {draw}: {source}")]
    Estimator {
        arm: usize,
        draw: u64,
        #[source]
        source: EstimatorError,
    },
    #[error("draw {draw}: {source}")]
    Reward {
        draw: u64,
        #[source]
        source: RewardError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid run: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Clamp observations into their arm's range before computing rewards,
    /// instead of rejecting them. The estimate always uses the raw value.
    pub saturate: bool,
    /// Keep one [`TraceRecord`] per draw.
    pub record_trace: bool,
    /// Ascending points at which to snapshot the running state: round
    /// numbers for [`run_uniform_cost`], times for [`run_cost_aware`].
    pub checkpoints: Vec<f64>,
}

/// One draw of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based draw index.
    pub round: u64,
    pub arm: usize,
    pub value: f64,
    pub cost: f64,
    /// Reward fed to the policy; in paired runs only the second draw of a
    /// pair carries it.
    pub reward: Option<f64>,
    /// Cumulative cost after this draw.
    pub renewal_time: f64,
}

/// Running state at a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub at: f64,
    /// Observations counted in the estimate.
    pub observations: u64,
    pub sum: f64,
    pub arm_stats: Vec<ArmStatistics>,
}

impl Snapshot {
    fn capture(at: f64, acc: &Accumulator) -> Self {
        Self {
            at,
            observations: acc.observations,
            sum: acc.sum,
            arm_stats: acc.arm_stats.clone(),
        }
    }

    /// Plain average, `0` before any observation.
    pub fn estimate(&self) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            self.sum / self.observations as f64
        }
    }

    pub fn tallies(&self) -> Vec<u64> {
        self.arm_stats.iter().map(|s| s.count).collect()
    }

    pub fn combine(&self) -> Option<CombinedEstimate> {
        combine(&self.arm_stats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunKind {
    UniformCost,
    CostAware,
}

/// Full record of one sequential run.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRun {
    pub kind: RunKind,
    /// Total draws made, including any draws past the budget.
    pub draws: u64,
    /// Policy decisions (equal to `draws` for uniform costs).
    pub decisions: u64,
    /// Statistics of every draw made.
    pub arm_stats: Vec<ArmStatistics>,
    /// Sum of every value drawn.
    pub sum: f64,
    /// Cumulative cost `J` after the last draw.
    pub renewal_time: f64,
    /// Round count (uniform) or time budget (cost-aware).
    pub horizon: f64,
    /// `renewal_time - horizon` for cost-aware runs, else 0.
    pub overshoot: f64,
    /// Paired rewards that fell below the configured floor.
    pub clamp_events: u64,
    /// Observations clamped into their range for the reward.
    pub saturations: u64,
    /// One snapshot per requested checkpoint, then one at the horizon.
    pub snapshots: Vec<Snapshot>,
    pub trace: Vec<TraceRecord>,
}

impl AllocationRun {
    pub fn n_arms(&self) -> usize {
        self.arm_stats.len()
    }

    pub fn tallies(&self) -> Vec<u64> {
        self.arm_stats.iter().map(|s| s.count).collect()
    }

    /// State at the horizon: every draw for uniform costs, draws completed
    /// within the budget for cost-aware runs.
    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("a run always has a final snapshot")
    }

    /// The estimate at the horizon.
    pub fn estimate(&self) -> f64 {
        self.final_snapshot().estimate()
    }

    /// Number of renewals by time `t`: `1 + #{m : J_m <= t}`. Needs a trace.
    pub fn renewal_count(&self, t: f64) -> Option<u64> {
        if self.trace.is_empty() && self.draws > 0 {
            return None;
        }
        let done = self.trace.partition_point(|r| r.renewal_time <= t) as u64;
        Some(1 + done)
    }

    /// `S / (N(t) - 1)`, or `0` before the first completed draw. Needs a trace.
    pub fn estimate_at_time(&self, t: f64) -> Option<f64> {
        let n = self.renewal_count(t)? - 1;
        if n == 0 {
            return Some(0.0);
        }
        let sum: f64 = self.trace[..n as usize].iter().map(|r| r.value).sum();
        Some(sum / n as f64)
    }

    /// Write the trace as CSV with columns
    /// `round, arm, value, cost, reward, J_m`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<(), AllocError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["round", "arm", "value", "cost", "reward", "J_m"])?;
        for r in &self.trace {
            w.write_record([
                r.round.to_string(),
                r.arm.to_string(),
                r.value.to_string(),
                r.cost.to_string(),
                r.reward.map(|v| v.to_string()).unwrap_or_default(),
                r.renewal_time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-arm means and two ways of pooling them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate {
    /// Average of all observations.
    pub uniform_mean: f64,
    /// Arm means weighted by `T_k / v_k` with `v_k` the sample variance.
    pub weighted_mean: f64,
    pub arm_means: Vec<f64>,
    pub arm_variances: Vec<Option<f64>>,
}

/// Floor applied to per-arm sample variances in the weighted combiner.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Pool per-arm statistics; `None` without observations.
///
/// Arms with fewer than two observations have no variance estimate and get
/// no weight; if no arm has two, the weighted mean falls back to the
/// uniform mean.
pub fn combine(arm_stats: &[ArmStatistics]) -> Option<CombinedEstimate> {
    let total: u64 = arm_stats.iter().map(|s| s.count).sum();
    if total == 0 {
        return None;
    }
    let mut active = arm_stats.iter().filter(|s| s.count > 0);
    let uniform_mean = match (active.next(), active.next()) {
        (Some(only), None) => only.mean,
        _ => arm_stats.iter().map(ArmStatistics::sum).sum::<f64>() / total as f64,
    };
    let arm_variances: Vec<Option<f64>> = arm_stats.iter().map(ArmStatistics::sample_variance).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (s, v) in arm_stats.iter().zip(&arm_variances) {
        if let Some(v) = v {
            let w = s.count as f64 / v.max(VARIANCE_FLOOR);
            num += w * s.mean;
            den += w;
        }
    }
    let weighted_mean = if den > 0.0 { num / den } else { uniform_mean };
    Some(CombinedEstimate {
        uniform_mean,
        weighted_mean,
        arm_means: arm_stats.iter().map(|s| s.mean).collect(),
        arm_variances,
    })
}

struct Accumulator {
    observations: u64,
    sum: f64,
    arm_stats: Vec<ArmStatistics>,
}

impl Accumulator {
    fn new(n_arms: usize) -> Self {
        Self {
            observations: 0,
            sum: 0.0,
            arm_stats: vec![ArmStatistics::new(); n_arms],
        }
    }

    fn add(&mut self, arm: usize, value: f64) {
        self.observations += 1;
        self.sum += value;
        self.arm_stats[arm].push(value);
    }
}

fn check_inputs(arms: &[Arm], policy: &dyn Policy, checkpoints: &[f64]) -> Result<(), AllocError> {
    if arms.is_empty() {
        return Err(AllocError::Invalid("no arms".into()));
    }
    if policy.n_arms() != arms.len() {
        return Err(AllocError::Invalid(format!(
            "policy expects {} arms, got {}",
            policy.n_arms(),
            arms.len()
        )));
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) || checkpoints.iter().any(|c| c.is_nan()) {
        return Err(AllocError::Invalid("checkpoints must be ascending".into()));
    }
    Ok(())
}

fn draw(arms: &mut [Arm], arm: usize, draw: u64) -> Result<crate::estimators::Observation, AllocError> {
    arms[arm]
        .draw()
        .map_err(|source| AllocError::Estimator { arm, draw, source })
}

/// `n` rounds of select, draw, reward `1 - y^2` on the range-scaled value.
pub fn run_uniform_cost(
    arms: &mut [Arm],
    policy: &mut dyn Policy,
    n: u64,
    ranges: &RangeSpec,
    options: &RunOptions,
    rng: &mut McRng,
) -> Result<AllocationRun, AllocError> {
    check_inputs(arms, policy, &options.checkpoints)?;
    let k = arms.len();
    if ranges.n_arms() != k {
        return Err(AllocError::Invalid("one range per arm required".into()));
    }
    if n < k as u64 {
        return Err(AllocError::Invalid(format!(
            "{n} rounds cannot initialize {k} arms"
        )));
    }
    let mut acc = Accumulator::new(k);
    let mut trace = Vec::new();
    let mut snapshots = Vec::with_capacity(options.checkpoints.len() + 1);
    let mut pending = options.checkpoints.iter().copied().peekable();
    let mut renewal_time = 0.0;
    let mut saturations = 0;

    while pending.next_if(|&c| c < 1.0).is_some() {
        snapshots.push(Snapshot::capture(0.0, &acc));
    }
    for t in 1..=n {
        let arm = policy.select(t, rng);
        let obs = draw(arms, arm, t)?;
        let x = if options.saturate {
            let s = ranges.saturate(obs.value, arm);
            if s != obs.value {
                saturations += 1;
            }
            s
        } else {
            obs.value
        };
        let reward =
            range_scaled_reward(x, arm, ranges).map_err(|source| AllocError::Reward { draw: t, source })?;
        policy.update(arm, reward, rng)?;
        acc.add(arm, obs.value);
        renewal_time += obs.cost;
        if options.record_trace {
            trace.push(TraceRecord {
                round: t,
                arm,
                value: obs.value,
                cost: obs.cost,
                reward: Some(reward),
                renewal_time,
            });
        }
        while let Some(c) = pending.next_if(|&c| c < (t + 1) as f64) {
            snapshots.push(Snapshot::capture(c, &acc));
        }
    }
    for c in pending {
        snapshots.push(Snapshot::capture(c, &acc));
    }
    snapshots.push(Snapshot::capture(n as f64, &acc));
    Ok(AllocationRun {
        kind: RunKind::UniformCost,
        draws: n,
        decisions: n,
        sum: acc.sum,
        arm_stats: acc.arm_stats.clone(),
        renewal_time,
        horizon: n as f64,
        overshoot: 0.0,
        clamp_events: 0,
        saturations,
        snapshots,
        trace,
    })
}

/// Paired decisions until the cumulative cost reaches `budget`.
///
/// Each decision draws twice from the chosen arm and feeds the clamped
/// paired reward; a pair is never split, so the last one may run past the
/// budget. Estimates at time `t` count only draws with `J_m <= t`.
pub fn run_cost_aware(
    arms: &mut [Arm],
    policy: &mut dyn Policy,
    budget: f64,
    scale: &PairedRewardScale,
    options: &RunOptions,
    rng: &mut McRng,
) -> Result<AllocationRun, AllocError> {
    check_inputs(arms, policy, &options.checkpoints)?;
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(AllocError::Invalid(format!(
            "budget must be positive, got {budget}"
        )));
    }
    if options.checkpoints.last().is_some_and(|&c| c > budget) {
        return Err(AllocError::Invalid(
            "checkpoints must not exceed the budget".into(),
        ));
    }
    scale
        .validate()
        .map_err(|source| AllocError::Reward { draw: 0, source })?;
    let k = arms.len();
    let mut counted = Accumulator::new(k);
    let mut all = Accumulator::new(k);
    let mut trace = Vec::new();
    let mut snapshots = Vec::with_capacity(options.checkpoints.len() + 1);
    let mut pending = options
        .checkpoints
        .iter()
        .copied()
        .chain(std::iter::once(budget))
        .peekable();
    let mut renewal_time = 0.0;
    let mut draws = 0u64;
    let mut decisions = 0u64;
    let mut clamp_events = 0;

    while renewal_time < budget {
        decisions += 1;
        let arm = policy.select(decisions, rng);
        let first = draw(arms, arm, draws + 1)?;
        let second = draw(arms, arm, draws + 2)?;
        let raw = paired_cost_reward(first.value, second.value, first.cost, second.cost);
        if scale.clamps(raw) {
            clamp_events += 1;
        }
        let reward = clamp_paired_to_unit(raw, scale);
        policy.update(arm, reward, rng)?;
        for (obs, reward) in [(first, None), (second, Some(reward))] {
            draws += 1;
            let next_time = renewal_time + obs.cost;
            while let Some(c) = pending.next_if(|&c| c < next_time) {
                snapshots.push(Snapshot::capture(c, &counted));
            }
            renewal_time = next_time;
            counted.add(arm, obs.value);
            all.add(arm, obs.value);
            if options.record_trace {
                trace.push(TraceRecord {
                    round: draws,
                    arm,
                    value: obs.value,
                    cost: obs.cost,
                    reward,
                    renewal_time,
                });
            }
        }
    }
    for c in pending {
        snapshots.push(Snapshot::capture(c, &counted));
    }
    Ok(AllocationRun {
        kind: RunKind::CostAware,
        draws,
        decisions,
        sum: all.sum,
        arm_stats: all.arm_stats,
        renewal_time,
        horizon: budget,
        overshoot: (renewal_time - budget).max(0.0),
        clamp_events,
        saturations: 0,
        snapshots,
        trace,
    })
}
