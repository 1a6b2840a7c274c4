//! Replicated evaluation of allocation methods.
//!
//! A [`Scenario`] fixes the arms and the budget; [`PreparedScenario::evaluate`]
//! runs one method over many independent replicates and aggregates the
//! squared errors at each checkpoint into a [`MethodReport`]. Replicate `r`
//! draws arm `k` from a stream derived from `(seed, r, k)` alone, so every
//! method sees the same observations from a given arm.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{run_cost_aware, run_uniform_cost, AllocError, AllocationRun, RunOptions};
use crate::bandit::{FixedArm, Policy, PolicyConfig, PolicyError, PolicyKind, RoundRobin};
use crate::estimators::{Arm, ArmSpec, EstimatorError, PreparedArm};
use crate::pmc::run_pmc;
use crate::rewards::{PairedRewardScale, RangeSpec, RewardError};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("arm {arm}: {source}")]
    Arm {
        arm: usize,
        #[source]
        source: EstimatorError,
    },
    #[error("replicate {replicate}: {source}")]
    Run {
        replicate: u64,
        #[source]
        source: AllocError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How much sampling a run gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Budget {
    /// `n` draws, one reward per draw.
    Rounds { n: u64 },
    /// Cumulative cost `budget`, paired rewards scaled by `d_max` and
    /// `x_range`.
    Time { budget: f64, d_max: f64, x_range: f64 },
}

impl Budget {
    pub fn horizon(&self) -> f64 {
        match *self {
            Budget::Rounds { n } => n as f64,
            Budget::Time { budget, .. } => budget,
        }
    }
}

/// Arms, budget and reporting points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub arms: Vec<ArmSpec>,
    pub budget: Budget,
    /// Ascending reporting points below the horizon; the horizon is always
    /// reported.
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    /// Clamp out-of-range observations into the arm range for rewards.
    #[serde(default)]
    pub saturate: bool,
    /// The true value; otherwise the arms' known mean or a reference run.
    #[serde(default)]
    pub reference_mean: Option<f64>,
    /// Arm used for the reference run.
    #[serde(default)]
    pub reference_arm: usize,
    #[serde(default = "default_reference_samples")]
    pub reference_samples: u64,
}

fn default_reference_samples() -> u64 {
    1_000_000
}

impl Scenario {
    pub fn new(name: impl Into<String>, arms: Vec<ArmSpec>, budget: Budget) -> Self {
        Self {
            name: name.into(),
            arms,
            budget,
            checkpoints: Vec::new(),
            saturate: false,
            reference_mean: None,
            reference_arm: 0,
            reference_samples: default_reference_samples(),
        }
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<f64>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    /// Validate, resolve arms and fix the reference value. `seed` drives
    /// the reference run when one is needed.
    pub fn prepare(&self, seed: u64) -> Result<PreparedScenario, HarnessError> {
        if self.arms.is_empty() {
            return Err(HarnessError::Invalid("no arms".into()));
        }
        let horizon = self.budget.horizon();
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(HarnessError::Invalid("budget must be positive".into()));
        }
        let mut points = self.checkpoints.clone();
        if points.iter().any(|&c| !(c >= 0.0 && c < horizon)) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Invalid(format!(
                "checkpoints must be strictly ascending in [0, {horizon})"
            )));
        }
        if matches!(self.budget, Budget::Rounds { .. }) && points.iter().any(|c| c.fract() != 0.0) {
            return Err(HarnessError::Invalid("round checkpoints must be integers".into()));
        }
        points.push(horizon);
        let arms = self
            .arms
            .iter()
            .enumerate()
            .map(|(arm, s)| s.prepare().map_err(|source| HarnessError::Arm { arm, source }))
            .collect::<Result<Vec<PreparedArm>, _>>()?;
        let bounds: Vec<(f64, f64)> = arms.iter().map(|a| a.range().unwrap_or((0.0, 1.0))).collect();
        let ranges = RangeSpec::new(&bounds)?;
        let scale = match self.budget {
            Budget::Time { d_max, x_range, .. } => Some(PairedRewardScale::new(d_max, x_range)?),
            Budget::Rounds { n } => {
                if n < arms.len() as u64 {
                    return Err(HarnessError::Invalid(format!(
                        "{n} rounds cannot initialize {} arms",
                        arms.len()
                    )));
                }
                None
            }
        };
        let moments: Option<Vec<(f64, f64)>> = arms.iter().map(PreparedArm::moments).collect();
        let reference_mean = match self.reference_mean {
            Some(m) => m,
            None => match arms.iter().find_map(PreparedArm::known_mean) {
                Some(m) => m,
                None => self.reference_run(&arms, seed)?,
            },
        };
        Ok(PreparedScenario {
            name: self.name.clone(),
            arms,
            budget: self.budget,
            checkpoints: points,
            saturate: self.saturate,
            ranges,
            scale,
            reference_mean,
            variances: moments.map(|m| m.into_iter().map(|(_, v)| v).collect()),
        })
    }

    fn reference_run(&self, arms: &[PreparedArm], seed: u64) -> Result<f64, HarnessError> {
        let k = self.reference_arm;
        if k >= arms.len() {
            return Err(HarnessError::Invalid(format!("reference arm {k} out of range")));
        }
        if self.reference_samples == 0 {
            return Err(HarnessError::Invalid(
                "the true value is unknown and no reference samples were requested".into(),
            ));
        }
        let mut arm = arms[k].instantiate(derive_seed(seed, &[REFERENCE_STREAM, k as u64]));
        let mut sum = 0.0;
        for _ in 0..self.reference_samples {
            sum += arm
                .draw()
                .map_err(|source| HarnessError::Arm { arm: k, source })?
                .value;
        }
        Ok(sum / self.reference_samples as f64)
    }
}

const REFERENCE_STREAM: u64 = u64::MAX;
const ARM_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;

/// An allocation method to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Method {
    Policy(PolicyConfig),
    /// Round-robin over the arms.
    Uniform,
    Fixed {
        arm: usize,
    },
    Pmc {
        population: usize,
    },
}

impl Method {
    pub fn policy(kind: PolicyKind) -> Self {
        Method::Policy(PolicyConfig::new(kind))
    }

    pub fn label(&self) -> String {
        match self {
            Method::Policy(c) => c.kind.label().to_string(),
            Method::Uniform => "uniform".into(),
            Method::Fixed { arm } => format!("fixed-{arm}"),
            Method::Pmc { .. } => "pmc".into(),
        }
    }
}

/// Where replicates run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon worker pool; `None` uses the global pool.
    Parallel {
        workers: Option<usize>,
    },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { workers: None }
        } else {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub replicates: u64,
    pub seed: u64,
    pub execution: Execution,
}

impl EvalSettings {
    pub fn new(replicates: u64, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

/// Run `f(r)` for every replicate; results come back in replicate order.
pub fn run_replicates<T, F>(replicates: u64, execution: Execution, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(u64) -> Result<T, HarnessError> + Sync,
{
    match execution {
        Execution::Sequential => (0..replicates).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { workers } => {
            use rayon::prelude::*;
            let job = || (0..replicates).into_par_iter().map(&f).collect();
            match workers {
                None => job(),
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| HarnessError::ThreadPool(e.to_string()))?
                    .install(job),
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => (0..replicates).map(f).collect(),
    }
}

/// What one replicate reports at each checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub estimates: Vec<f64>,
    pub weighted_estimates: Vec<f64>,
    pub tallies: Vec<Vec<u64>>,
    pub draws: u64,
    pub clamp_events: u64,
    pub saturations: u64,
}

/// A validated scenario ready for evaluation.
#[derive(Clone)]
pub struct PreparedScenario {
    pub name: String,
    arms: Vec<PreparedArm>,
    pub budget: Budget,
    /// Reporting points, ending at the horizon.
    pub checkpoints: Vec<f64>,
    saturate: bool,
    ranges: RangeSpec,
    scale: Option<PairedRewardScale>,
    pub reference_mean: f64,
    /// Per-arm variances when every arm has them in closed form.
    pub variances: Option<Vec<f64>>,
}

impl PreparedScenario {
    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn ranges(&self) -> &RangeSpec {
        &self.ranges
    }

    /// Fresh arms for replicate `r`.
    pub fn instantiate_arms(&self, seed: u64, replicate: u64) -> Vec<Arm> {
        self.arms
            .iter()
            .enumerate()
            .map(|(k, a)| a.instantiate(derive_seed(seed, &[replicate, ARM_STREAM, k as u64])))
            .collect()
    }

    fn build_policy(&self, method: &Method) -> Result<Box<dyn Policy>, HarnessError> {
        let k = self.n_arms();
        Ok(match method {
            Method::Policy(config) => {
                let weights = match self.budget {
                    Budget::Rounds { .. } if !self.ranges.is_homogeneous() => {
                        Some(self.ranges.range_weights())
                    }
                    _ => None,
                };
                config.build(k, weights)?
            }
            Method::Uniform => Box::new(RoundRobin::new(k)),
            Method::Fixed { arm } => {
                if *arm >= k {
                    return Err(HarnessError::Invalid(format!("fixed arm {arm} out of range")));
                }
                Box::new(FixedArm::new(k, *arm))
            }
            Method::Pmc { .. } => unreachable!("handled separately"),
        })
    }

    /// One replicate of `method`.
    pub fn run_replicate(
        &self,
        method: &Method,
        seed: u64,
        replicate: u64,
        record_trace: bool,
    ) -> Result<(ReplicateResult, Option<AllocationRun>), HarnessError> {
        let wrap = |source| HarnessError::Run { replicate, source };
        let mut arms = self.instantiate_arms(seed, replicate);
        let mut rng = rng_from_seed(derive_seed(seed, &[replicate, POLICY_STREAM]));
        if let Method::Pmc { population } = method {
            let n = match self.budget {
                Budget::Rounds { n } => n,
                Budget::Time { .. } => {
                    return Err(HarnessError::Invalid(
                        "population Monte Carlo runs on a draw budget".into(),
                    ))
                }
            };
            let points: Vec<u64> = self.checkpoints[..self.checkpoints.len() - 1]
                .iter()
                .map(|&c| c as u64)
                .collect();
            let run = run_pmc(&mut arms, *population, n, &points, &mut rng).map_err(wrap)?;
            let estimates: Vec<f64> = run.snapshots.iter().map(|s| s.estimate).collect();
            return Ok((
                ReplicateResult {
                    weighted_estimates: estimates.clone(),
                    estimates,
                    tallies: run.snapshots.iter().map(|s| s.tallies.clone()).collect(),
                    draws: run.draws,
                    clamp_events: 0,
                    saturations: 0,
                },
                None,
            ));
        }
        let mut policy = self.build_policy(method)?;
        let options = RunOptions {
            saturate: self.saturate,
            record_trace,
            checkpoints: self.checkpoints[..self.checkpoints.len() - 1].to_vec(),
        };
        let run = match self.budget {
            Budget::Rounds { n } => {
                run_uniform_cost(&mut arms, policy.as_mut(), n, &self.ranges, &options, &mut rng)
            }
            Budget::Time { budget, .. } => run_cost_aware(
                &mut arms,
                policy.as_mut(),
                budget,
                self.scale.as_ref().expect("time budgets carry a scale"),
                &options,
                &mut rng,
            ),
        }
        .map_err(wrap)?;
        let result = ReplicateResult {
            estimates: run.snapshots.iter().map(|s| s.estimate()).collect(),
            weighted_estimates: run
                .snapshots
                .iter()
                .map(|s| s.combine().map_or(0.0, |c| c.weighted_mean))
                .collect(),
            tallies: run.snapshots.iter().map(|s| s.tallies()).collect(),
            draws: run.draws,
            clamp_events: run.clamp_events,
            saturations: run.saturations,
        };
        Ok((result, record_trace.then_some(run)))
    }

    /// Evaluate `method` over `settings.replicates` replicates.
    pub fn evaluate(&self, method: &Method, settings: &EvalSettings) -> Result<MethodReport, HarnessError> {
        if settings.replicates < 2 {
            return Err(HarnessError::Invalid("need at least 2 replicates".into()));
        }
        if let Method::Policy(c) = method {
            c.validate()?;
        }
        let seed = settings.seed;
        let results = run_replicates(settings.replicates, settings.execution, |r| {
            self.run_replicate(method, seed, r, false).map(|(res, _)| res)
        })?;
        Ok(MethodReport::aggregate(self, method.label(), results))
    }

    /// Per-checkpoint, per-arm losses `L_k` of always drawing from arm `k`:
    /// `V_k / n` when variances are known and draws are counted, otherwise
    /// the empirical MSE of fixed-arm replicate runs.
    pub fn single_arm_losses(&self, settings: &EvalSettings) -> Result<Vec<Vec<f64>>, HarnessError> {
        if let (Some(v), Budget::Rounds { .. }) = (&self.variances, self.budget) {
            return Ok(self
                .checkpoints
                .iter()
                .map(|&c| {
                    v.iter()
                        .map(|vk| {
                            if c > 0.0 {
                                vk / c
                            } else {
                                self.reference_mean.powi(2)
                            }
                        })
                        .collect()
                })
                .collect());
        }
        let per_arm = (0..self.n_arms())
            .map(|arm| self.evaluate(&Method::Fixed { arm }, settings))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((0..self.checkpoints.len())
            .map(|i| per_arm.iter().map(|r| r.rows[i].mse).collect())
            .collect())
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub checkpoint: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub weighted_mse: f64,
    pub weighted_mse_se: f64,
    pub mean_tallies: Vec<f64>,
    /// `min_k L_k` at this checkpoint, once baselines are attached.
    pub best_single_loss: Option<f64>,
    /// `c^2 (mse - min_k L_k)`.
    pub regret: Option<f64>,
    pub weighted_regret: Option<f64>,
    /// `c^2 * se(mse)`.
    pub regret_se: Option<f64>,
    pub weighted_regret_se: Option<f64>,
    /// `sum_k mean(T_k) (V_k - V*)` when variances are known.
    pub identity_rhs: Option<f64>,
}

/// Replicate averages for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub replicates: u64,
    pub reference_mean: f64,
    pub rows: Vec<ReportRow>,
    pub replicate_results: Vec<ReplicateResult>,
    pub clamp_events: u64,
    pub saturations: u64,
    pub mean_draws: f64,
}

impl MethodReport {
    fn aggregate(scenario: &PreparedScenario, method: String, results: Vec<ReplicateResult>) -> Self {
        let mu = scenario.reference_mean;
        let r = results.len();
        let rows = scenario
            .checkpoints
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let sq: Vec<f64> = results.iter().map(|x| (x.estimates[i] - mu).powi(2)).collect();
                let wsq: Vec<f64> = results
                    .iter()
                    .map(|x| (x.weighted_estimates[i] - mu).powi(2))
                    .collect();
                let (mse, mse_se) = mean_and_se(&sq);
                let (weighted_mse, weighted_mse_se) = mean_and_se(&wsq);
                let k = scenario.n_arms();
                let mean_tallies: Vec<f64> = (0..k)
                    .map(|a| results.iter().map(|x| x.tallies[i][a] as f64).sum::<f64>() / r as f64)
                    .collect();
                let identity_rhs = match (&scenario.variances, scenario.budget) {
                    (Some(v), Budget::Rounds { .. }) => {
                        let best = v.iter().copied().fold(f64::INFINITY, f64::min);
                        Some(mean_tallies.iter().zip(v).map(|(t, vk)| t * (vk - best)).sum())
                    }
                    _ => None,
                };
                ReportRow {
                    checkpoint: c,
                    mse,
                    mse_se,
                    weighted_mse,
                    weighted_mse_se,
                    mean_tallies,
                    best_single_loss: None,
                    regret: None,
                    weighted_regret: None,
                    regret_se: None,
                    weighted_regret_se: None,
                    identity_rhs,
                }
            })
            .collect();
        Self {
            method,
            replicates: r as u64,
            reference_mean: mu,
            rows,
            clamp_events: results.iter().map(|x| x.clamp_events).sum(),
            saturations: results.iter().map(|x| x.saturations).sum(),
            mean_draws: results.iter().map(|x| x.draws as f64).sum::<f64>() / r as f64,
            replicate_results: results,
        }
    }

    /// Fill in regrets from per-checkpoint single-arm losses.
    pub fn attach_baseline(&mut self, losses: &[Vec<f64>]) {
        for (row, l) in self.rows.iter_mut().zip(losses) {
            let best = l.iter().copied().fold(f64::INFINITY, f64::min);
            let c2 = row.checkpoint * row.checkpoint;
            row.best_single_loss = Some(best);
            row.regret = Some(c2 * (row.mse - best));
            row.weighted_regret = Some(c2 * (row.weighted_mse - best));
            row.regret_se = Some(c2 * row.mse_se);
            row.weighted_regret_se = Some(c2 * row.weighted_mse_se);
        }
    }

    pub fn final_row(&self) -> &ReportRow {
        self.rows.last().expect("reports always have a horizon row")
    }
}

/// Both sides of the regret identity at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    /// Mean of `n^2 ((mu_hat - mu)^2 - V*/n)`.
    pub lhs: f64,
    pub lhs_se: f64,
    /// Mean of `sum_k T_k (V_k - V*)`.
    pub rhs: f64,
    pub rhs_se: f64,
    /// Mean and standard error of the per-replicate difference.
    pub discrepancy: f64,
    pub discrepancy_se: f64,
    pub pass: bool,
}

/// Compare empirical normalized excess loss to the pull-count side of the
/// identity at checkpoint `index`; passes within 3 standard errors.
pub fn regret_identity_check(
    scenario: &PreparedScenario,
    report: &MethodReport,
    index: usize,
) -> Result<IdentityCheck, HarnessError> {
    let v = scenario
        .variances
        .as_ref()
        .ok_or_else(|| HarnessError::Invalid("the identity check needs closed-form arm variances".into()))?;
    if !matches!(scenario.budget, Budget::Rounds { .. }) {
        return Err(HarnessError::Invalid(
            "the identity check needs a draw budget".into(),
        ));
    }
    let n = scenario.checkpoints[index];
    let best = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mu = report.reference_mean;
    let mut lhs = Vec::with_capacity(report.replicate_results.len());
    let mut rhs = Vec::with_capacity(report.replicate_results.len());
    for r in &report.replicate_results {
        lhs.push(n * n * ((r.estimates[index] - mu).powi(2) - best / n));
        rhs.push(
            r.tallies[index]
                .iter()
                .zip(v)
                .map(|(&t, vk)| t as f64 * (vk - best))
                .sum(),
        );
    }
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let (lhs_mean, lhs_se) = mean_and_se(&lhs);
    let (rhs_mean, rhs_se) = mean_and_se(&rhs);
    let (d, d_se) = mean_and_se(&diff);
    Ok(IdentityCheck {
        lhs: lhs_mean,
        lhs_se,
        rhs: rhs_mean,
        rhs_se,
        discrepancy: d,
        discrepancy_se: d_se,
        pass: d.abs() <= 3.0 * d_se || (d == 0.0 && d_se == 0.0),
    })
}

/// Expected pull regret `sum_k T_k (V_k - V*)` per replicate, at the horizon.
pub fn pull_regrets(variances: &[f64], report: &MethodReport) -> Vec<f64> {
    let best = variances.iter().copied().fold(f64::INFINITY, f64::min);
    report
        .replicate_results
        .iter()
        .map(|r| {
            let last = r.tallies.last().expect("horizon tallies");
            last.iter()
                .zip(variances)
                .map(|(&t, v)| t as f64 * (v - best))
                .sum()
        })
        .collect()
}

/// One tile of the policy comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub s1: f64,
    pub s2: f64,
    /// `(policy, mean pull regret, standard error)`.
    pub regrets: Vec<(String, f64, f64)>,
    /// `None` when every policy has the same regret.
    pub winner: Option<String>,
    /// Gap to the runner-up in standard errors of the paired difference.
    pub margin_se: f64,
}

/// Scaled-Bernoulli pair around `midpoint` with scales `s1`, `s2`.
pub fn scaled_pair(midpoint: f64, s1: f64, s2: f64, n: u64) -> Scenario {
    use crate::estimators::{CostModel, EstimatorSpec, ScaledBernoulliSpec};
    let arm = |scale| {
        ArmSpec::new(
            EstimatorSpec::ScaledBernoulli(ScaledBernoulliSpec {
                midpoint,
                scale,
                p: 0.5,
            }),
            CostModel::Unit,
        )
        .with_range(0.0, 1.0)
    };
    Scenario::new(
        format!("pair-{s1}-{s2}"),
        vec![arm(s1), arm(s2)],
        Budget::Rounds { n },
    )
}

/// Winner per `(s1, s2)` cell over the given scale grid.
pub fn policy_grid(
    scales: &[f64],
    policies: &[PolicyConfig],
    n: u64,
    settings: &EvalSettings,
) -> Result<Vec<GridCell>, HarnessError> {
    let mut cells = Vec::new();
    for (i, &s1) in scales.iter().enumerate() {
        for &s2 in &scales[i..] {
            let prepared = scaled_pair(0.5, s1, s2, n).prepare(settings.seed)?;
            cells.push(grid_cell(&prepared, s1, s2, policies, settings)?);
        }
    }
    Ok(cells)
}

/// Compare `policies` on one prepared two-arm cell.
pub fn grid_cell(
    prepared: &PreparedScenario,
    s1: f64,
    s2: f64,
    policies: &[PolicyConfig],
    settings: &EvalSettings,
) -> Result<GridCell, HarnessError> {
    let variances = prepared
        .variances
        .clone()
        .ok_or_else(|| HarnessError::Invalid("grid cells need known variances".into()))?;
    let mut per_policy = Vec::new();
    for p in policies {
        let report = prepared.evaluate(&Method::Policy(p.clone()), settings)?;
        per_policy.push((p.kind.label().to_string(), pull_regrets(&variances, &report)));
    }
    let regrets: Vec<(String, f64, f64)> = per_policy
        .iter()
        .map(|(l, r)| {
            let (m, se) = mean_and_se(r);
            (l.clone(), m, se)
        })
        .collect();
    let mut order: Vec<usize> = (0..regrets.len()).collect();
    order.sort_by(|&a, &b| regrets[a].1.total_cmp(&regrets[b].1).then(a.cmp(&b)));
    let all_equal = regrets.iter().all(|r| r.1 == regrets[order[0]].1);
    let (winner, margin_se) = if all_equal || order.len() < 2 {
        (None, 0.0)
    } else {
        let (best, second) = (order[0], order[1]);
        let diff: Vec<f64> = per_policy[second]
            .1
            .iter()
            .zip(&per_policy[best].1)
            .map(|(a, b)| a - b)
            .collect();
        let (d, se) = mean_and_se(&diff);
        (
            Some(regrets[best].0.clone()),
            if se > 0.0 { d / se } else { f64::INFINITY },
        )
    };
    Ok(GridCell {
        s1,
        s2,
        regrets,
        winner,
        margin_se,
    })
}

/// Which pooled estimate a report shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Combiner {
    #[default]
    Uniform,
    Weighted,
    Both,
}

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub replicates: u64,
    pub reference_mean: f64,
    pub version: String,
}

impl ReportMetadata {
    pub fn header_line(&self) -> String {
        format!(
            "# experiment={} config_hash={} seed={} replicates={} reference_mean={} version={}",
            self.experiment, self.config_hash, self.seed, self.replicates, self.reference_mean, self.version
        )
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write rows `experiment, policy, checkpoint, mse, regret, se, T_1..T_K,
/// identity_rhs` after a `#` metadata line. Weighted-combiner rows carry
/// the policy label suffixed with `+weighted`.
pub fn write_report_csv<W: Write>(
    mut writer: W,
    meta: &ReportMetadata,
    reports: &[MethodReport],
    combiner: Combiner,
) -> Result<(), HarnessError> {
    writeln!(writer, "{}", meta.header_line())?;
    let k = reports
        .first()
        .and_then(|r| r.rows.first())
        .map_or(0, |row| row.mean_tallies.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "experiment".to_string(),
        "policy".into(),
        "checkpoint".into(),
        "mse".into(),
        "regret".into(),
        "se".into(),
    ];
    header.extend((1..=k).map(|i| format!("T_{i}")));
    header.push("identity_rhs".into());
    w.write_record(&header)?;
    for report in reports {
        for row in &report.rows {
            let variants: &[(bool, &str)] = match combiner {
                Combiner::Uniform => &[(false, "")],
                Combiner::Weighted => &[(true, "+weighted")],
                Combiner::Both => &[(false, ""), (true, "+weighted")],
            };
            for &(weighted, suffix) in variants {
                let (mse, regret, se) = if weighted {
                    (row.weighted_mse, row.weighted_regret, row.weighted_mse_se)
                } else {
                    (row.mse, row.regret, row.mse_se)
                };
                let mut rec = vec![
                    meta.experiment.clone(),
                    format!("{}{}", report.method, suffix),
                    row.checkpoint.to_string(),
                    mse.to_string(),
                    opt(regret),
                    se.to_string(),
                ];
                rec.extend(row.mean_tallies.iter().map(|t| t.to_string()));
                rec.push(opt(row.identity_rhs));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the grid as `s1, s2, winner, margin_se, regret_<p>, se_<p>...`.
pub fn write_grid_csv<W: Write>(
    mut writer: W,
    meta: &ReportMetadata,
    cells: &[GridCell],
) -> Result<(), HarnessError> {
    writeln!(writer, "{}", meta.header_line())?;
    let mut w = csv::Writer::from_writer(writer);
    let labels: Vec<String> = cells
        .first()
        .map(|c| c.regrets.iter().map(|r| r.0.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["s1".to_string(), "s2".into(), "winner".into(), "margin_se".into()];
    for l in &labels {
        header.push(format!("regret_{l}"));
        header.push(format!("se_{l}"));
    }
    w.write_record(&header)?;
    for c in cells {
        let mut rec = vec![
            c.s1.to_string(),
            c.s2.to_string(),
            c.winner.clone().unwrap_or_else(|| "tie".into()),
            c.margin_se.to_string(),
        ];
        for (_, m, se) in &c.regrets {
            rec.push(m.to_string());
            rec.push(se.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{CostModel, EstimatorSpec, ScaledBernoulliSpec};

    fn sb(scale: f64) -> ArmSpec {
        ArmSpec::new(
            EstimatorSpec::ScaledBernoulli(ScaledBernoulliSpec {
                midpoint: 0.5,
                scale,
                p: 0.5,
            }),
            CostModel::Unit,
        )
    }

    fn seq(replicates: u64, seed: u64) -> EvalSettings {
        EvalSettings::new(replicates, seed).with_execution(Execution::Sequential)
    }

    #[test]
    fn deterministic_arm_has_zero_mse() {
        let s = Scenario::new(
            "const",
            vec![ArmSpec::new(
                EstimatorSpec::Constant { value: 0.4 },
                CostModel::Unit,
            )],
            Budget::Rounds { n: 20 },
        )
        .with_checkpoints(vec![1.0, 5.0]);
        let p = s.prepare(0).unwrap();
        let report = p.evaluate(&Method::policy(PolicyKind::Ucb1), &seq(5, 1)).unwrap();
        assert!(report.rows.iter().all(|r| r.mse < 1e-30));
        assert_eq!(report.rows.len(), 3);
    }

    #[test]
    fn single_arm_mse_is_variance_over_n() {
        let s = Scenario::new("one", vec![sb(0.6)], Budget::Rounds { n: 50 });
        let p = s.prepare(0).unwrap();
        let report = p.evaluate(&Method::Uniform, &seq(10_000, 3)).unwrap();
        let row = report.final_row();
        let expected = 0.09 / 50.0;
        assert!(
            (row.mse - expected).abs() < 3.0 * row.mse_se,
            "{} vs {expected}",
            row.mse
        );
    }

    #[test]
    fn round_robin_identity_rhs() {
        let s = Scenario::new("rr", vec![sb(0.2), sb(0.6)], Budget::Rounds { n: 101 })
            .with_checkpoints(vec![10.0]);
        let p = s.prepare(0).unwrap();
        let report = p.evaluate(&Method::Uniform, &seq(4, 3)).unwrap();
        assert!((report.rows[0].identity_rhs.unwrap() - 5.0 * 0.08).abs() < 1e-12);
        let rhs = report.final_row().identity_rhs.unwrap();
        assert!((rhs - 50.0 * 0.08).abs() < 1e-12);
    }

    #[test]
    fn forced_allocations_satisfy_the_identity() {
        let s = Scenario::new("fixed", vec![sb(0.2), sb(0.4), sb(0.6)], Budget::Rounds { n: 40 });
        let p = s.prepare(0).unwrap();
        let best = p.evaluate(&Method::Fixed { arm: 0 }, &seq(200, 1)).unwrap();
        let c = regret_identity_check(&p, &best, 0).unwrap();
        assert_eq!(c.rhs, 0.0);
        assert!(c.pass);
        let worst = p.evaluate(&Method::Fixed { arm: 2 }, &seq(20_000, 1)).unwrap();
        let c = regret_identity_check(&p, &worst, 0).unwrap();
        assert!((c.rhs - 40.0 * 0.08).abs() < 1e-9);
        assert!(c.pass && (c.lhs - c.rhs).abs() < 3.0 * c.lhs_se, "{c:?}");
    }

    #[test]
    fn execution_mode_does_not_change_results() {
        let s = Scenario::new("det", vec![sb(0.2), sb(0.6)], Budget::Rounds { n: 300 })
            .with_checkpoints(vec![10.0, 100.0]);
        let p = s.prepare(0).unwrap();
        let m = Method::policy(PolicyKind::Thompson);
        let a = p.evaluate(&m, &seq(16, 9)).unwrap();
        let b = p
            .evaluate(
                &m,
                &EvalSettings::new(16, 9).with_execution(Execution::Parallel { workers: Some(3) }),
            )
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn methods_share_arm_streams() {
        let s = Scenario::new("crn", vec![sb(0.2), sb(0.6)], Budget::Rounds { n: 30 });
        let p = s.prepare(0).unwrap();
        let a = p
            .run_replicate(&Method::Fixed { arm: 1 }, 5, 3, true)
            .unwrap()
            .1
            .unwrap();
        let b = p.run_replicate(&Method::Uniform, 5, 3, true).unwrap().1.unwrap();
        let from_a: Vec<f64> = a.trace.iter().map(|r| r.value).take(15).collect();
        let from_b: Vec<f64> = b.trace.iter().filter(|r| r.arm == 1).map(|r| r.value).collect();
        assert_eq!(from_a, from_b);
    }

    #[test]
    fn equal_variances_tie() {
        let cells = policy_grid(
            &[0.3],
            &[
                PolicyConfig::new(PolicyKind::Ucb1),
                PolicyConfig::new(PolicyKind::Thompson),
            ],
            200,
            &seq(10, 1),
        )
        .unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].winner, None);
        assert!(cells[0].regrets.iter().all(|r| r.1 == 0.0));
    }

    #[test]
    fn unknown_mean_without_reference_is_rejected() {
        use crate::estimators::CirSpec;
        let mut s = Scenario::new(
            "cir",
            vec![ArmSpec::new(
                EstimatorSpec::Cir(CirSpec::default()),
                CostModel::Unit,
            )],
            Budget::Rounds { n: 10 },
        );
        s.reference_samples = 0;
        assert!(matches!(s.prepare(0), Err(HarnessError::Invalid(_))));
        s.reference_samples = 1000;
        let p = s.prepare(0).unwrap();
        assert!(p.reference_mean > 0.0);
    }

    #[test]
    fn invalid_scenarios() {
        let base = Scenario::new("x", vec![sb(0.2), sb(0.4)], Budget::Rounds { n: 10 });
        assert!(base.clone().with_checkpoints(vec![5.0, 3.0]).prepare(0).is_err());
        assert!(base.clone().with_checkpoints(vec![10.0]).prepare(0).is_err());
        assert!(base.clone().with_checkpoints(vec![2.5]).prepare(0).is_err());
        let short = Scenario::new("x", vec![sb(0.2), sb(0.4)], Budget::Rounds { n: 1 });
        assert!(short.prepare(0).is_err());
        let p = base.prepare(0).unwrap();
        assert!(p.evaluate(&Method::Uniform, &seq(1, 0)).is_err());
        assert!(p.evaluate(&Method::Fixed { arm: 5 }, &seq(2, 0)).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let s = Scenario::new("csv", vec![sb(0.2), sb(0.6)], Budget::Rounds { n: 20 })
            .with_checkpoints(vec![10.0]);
        let p = s.prepare(0).unwrap();
        let settings = seq(4, 2);
        let mut report = p.evaluate(&Method::policy(PolicyKind::Ucb1), &settings).unwrap();
        report.attach_baseline(&p.single_arm_losses(&settings).unwrap());
        let meta = ReportMetadata {
            experiment: "custom".into(),
            config_hash: "abc".into(),
            seed: 2,
            replicates: 4,
            reference_mean: 0.5,
            version: "0.1.0".into(),
        };
        let mut out = Vec::new();
        write_report_csv(&mut out, &meta, &[report], Combiner::Both).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# experiment=custom config_hash=abc seed=2"));
        assert_eq!(
            lines[1],
            "experiment,policy,checkpoint,mse,regret,se,T_1,T_2,identity_rhs"
        );
        assert_eq!(lines.len(), 2 + 4);
        assert!(lines[2].starts_with("custom,ucb1,10,"));
        assert!(lines[3].starts_with("custom,ucb1+weighted,10,"));
    }
}
