//! Ready-made scenarios for the three experiment families.

use serde::{Deserialize, Serialize};

use crate::estimators::{AisSpec, ArmSpec, CirSpec, CostModel, EstimatorSpec, TargetSpec};
use crate::harness::{Budget, Scenario};

/// Scales swept by the two-arm grid.
pub const SYNTHETIC_SCALES: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Strikes offered for the caplet.
pub const CIR_STRIKES: [f64; 3] = [0.06, 0.07, 0.08];

/// Annealing lengths of the default AIS arms.
pub const AIS_STEPS: [usize; 3] = [400, 2000, 8000];

/// `k / 10` for `k = 0..=15`.
pub fn cir_thetas() -> Vec<f64> {
    (0..=15).map(|k| k as f64 / 10.0).collect()
}

/// Integer checkpoints at 1%, 10% and 50% of `n` that leave room to
/// initialize `k` arms.
pub fn default_checkpoints(n: u64, k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = [n / 100, n / 10, n / 2]
        .into_iter()
        .filter(|&c| c >= k as u64 && c < n)
        .map(|c| c as f64)
        .collect();
    out.dedup();
    out
}

/// Caplet pricing with one arm per drift value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CirExperiment {
    pub strike: f64,
    pub thetas: Vec<f64>,
    /// Upper end of the reward range; larger weighted payoffs saturate.
    pub payoff_cap: f64,
    pub sigma: f64,
    pub n_steps: usize,
}

impl Default for CirExperiment {
    fn default() -> Self {
        Self {
            strike: 0.06,
            thetas: cir_thetas(),
            payoff_cap: 100.0,
            sigma: CirSpec::default().sigma,
            n_steps: CirSpec::default().n_steps,
        }
    }
}

impl CirExperiment {
    pub fn arms(&self) -> Vec<ArmSpec> {
        self.thetas
            .iter()
            .map(|&theta| {
                let spec = CirSpec {
                    sigma: self.sigma,
                    n_steps: self.n_steps,
                    ..CirSpec::default()
                }
                .with_strike(self.strike)
                .with_theta(theta);
                ArmSpec::new(EstimatorSpec::Cir(spec), CostModel::Unit).with_range(0.0, self.payoff_cap)
            })
            .collect()
    }

    /// `n` draws; the reference price comes from the untwisted arm.
    pub fn scenario(&self, n: u64) -> Scenario {
        let arms = self.arms();
        let k = arms.len();
        let mut s = Scenario::new(format!("cir-k{}", self.strike), arms, Budget::Rounds { n })
            .with_checkpoints(default_checkpoints(n, k));
        s.saturate = true;
        s.reference_arm = self.thetas.iter().position(|&t| t == 0.0).unwrap_or(0);
        s
    }
}

/// AIS on the Gaussian toy target with stochastic per-arm costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AisToyExperiment {
    pub dim: usize,
    pub precision: f64,
    pub steps: Vec<usize>,
    /// Mean cost per draw of each arm; defaults to the step count.
    pub cost_means: Vec<f64>,
    pub sigma_log: f64,
    /// Observation range used to scale paired rewards.
    pub x_range: f64,
}

impl Default for AisToyExperiment {
    fn default() -> Self {
        Self {
            dim: 1,
            precision: 2.0,
            steps: AIS_STEPS.to_vec(),
            cost_means: AIS_STEPS.iter().map(|&s| s as f64).collect(),
            sigma_log: 0.1,
            x_range: 1.0,
        }
    }
}

impl AisToyExperiment {
    /// Each draw pays a fixed setup cost on top of one unit per step, which
    /// favours long chains.
    pub fn setup_dominated(setup: f64) -> Self {
        Self {
            cost_means: AIS_STEPS.iter().map(|&s| s as f64 + setup).collect(),
            ..Self::default()
        }
    }

    /// Per-step cost grows like `sqrt(steps / 400)`, which favours short
    /// chains.
    pub fn superlinear() -> Self {
        Self {
            cost_means: AIS_STEPS
                .iter()
                .map(|&s| s as f64 * (s as f64 / 400.0).sqrt())
                .collect(),
            ..Self::default()
        }
    }

    /// A minimum charge of `floor` per draw, with per-step cost multiplied
    /// by `spill` for chains longer than `floor` steps.
    pub fn minimum_charge(floor: f64, spill: f64) -> Self {
        Self {
            cost_means: AIS_STEPS
                .iter()
                .map(|&s| {
                    let s = s as f64;
                    if s > floor {
                        s * spill
                    } else {
                        floor
                    }
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn with_x_range(mut self, x_range: f64) -> Self {
        self.x_range = x_range;
        self
    }

    pub fn arms(&self) -> Vec<ArmSpec> {
        self.steps
            .iter()
            .zip(&self.cost_means)
            .map(|(&steps, &mean)| {
                let target = TargetSpec::GaussianToy {
                    dim: self.dim,
                    precision: self.precision,
                };
                ArmSpec::new(
                    EstimatorSpec::Ais(AisSpec::new(steps, target)),
                    CostModel::Jittered {
                        mean,
                        sigma_log: self.sigma_log,
                    },
                )
            })
            .collect()
    }

    /// Cost cap used to scale paired rewards: the largest mean cost plus
    /// six standard deviations of the jitter.
    pub fn d_max(&self) -> f64 {
        let top = self.cost_means.iter().copied().fold(0.0, f64::max);
        top * (6.0 * self.sigma_log).exp()
    }

    /// Cost-aware run over `budget` time units.
    pub fn scenario(&self, budget: f64) -> Scenario {
        Scenario::new(
            format!("ais-toy-d{}", self.dim),
            self.arms(),
            Budget::Time {
                budget,
                d_max: self.d_max(),
                x_range: self.x_range,
            },
        )
    }
}
