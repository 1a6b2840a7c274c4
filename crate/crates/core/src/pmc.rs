//! Population Monte Carlo over a finite set of proposal kernels.
//!
//! Each generation draws `G` kernel indices from the current mixture, takes
//! one weighted draw from each chosen kernel, and resets every mixture
//! coefficient to that kernel's share of the total weight.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::allocator::AllocError;
use crate::estimators::Arm;
use crate::rng::McRng;

/// Floor applied to mixture coefficients before renormalizing.
pub const ALPHA_FLOOR: f64 = 1e-6;

pub const DEFAULT_POPULATION: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub alphas: Vec<f64>,
    pub generation: u64,
    pub population: usize,
}

impl MixtureState {
    pub fn uniform(n_kernels: usize, population: usize) -> Self {
        assert!(n_kernels > 0 && population > 0);
        Self {
            alphas: vec![1.0 / n_kernels as f64; n_kernels],
            generation: 0,
            population,
        }
    }
}

/// What one generation produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    /// Kernel chosen for each draw.
    pub components: Vec<usize>,
    /// Weighted estimates, one per draw.
    pub values: Vec<f64>,
    pub costs: Vec<f64>,
    /// Every weight was zero and the coefficients were kept.
    pub degenerate: bool,
}

/// `alpha_k = sum_t w_t 1{I_t = k} / sum_t w_t`, floored and renormalized.
/// `None` when the weights sum to zero.
pub fn mixture_update(n_kernels: usize, components: &[usize], weights: &[f64]) -> Option<Vec<f64>> {
    let mut mass = vec![0.0; n_kernels];
    for (&k, &w) in components.iter().zip(weights) {
        mass[k] += w;
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let floored: Vec<f64> = mass.iter().map(|m| (m / total).max(ALPHA_FLOOR)).collect();
    let norm: f64 = floored.iter().sum();
    Some(floored.into_iter().map(|a| a / norm).collect())
}

/// One generation of `count` draws (normally the population size).
///
/// Each arm must yield nonnegative weighted estimates, such as importance
/// weight times payoff; those values double as the adaptation weights.
pub fn pmc_generation(
    state: &MixtureState,
    arms: &mut [Arm],
    count: usize,
    rng: &mut McRng,
) -> Result<(GenerationOutcome, MixtureState), AllocError> {
    if arms.len() != state.alphas.len() {
        return Err(AllocError::Invalid(format!(
            "{} mixture coefficients for {} kernels",
            state.alphas.len(),
            arms.len()
        )));
    }
    let picker = WeightedIndex::new(&state.alphas)
        .map_err(|e| AllocError::Invalid(format!("invalid mixture: {e}")))?;
    let mut outcome = GenerationOutcome {
        components: Vec::with_capacity(count),
        values: Vec::with_capacity(count),
        costs: Vec::with_capacity(count),
        degenerate: false,
    };
    for i in 0..count {
        let k = picker.sample(rng);
        let obs = arms[k].draw().map_err(|source| AllocError::Estimator {
            arm: k,
            draw: i as u64 + 1,
            source,
        })?;
        outcome.components.push(k);
        outcome.values.push(obs.value);
        outcome.costs.push(obs.cost);
    }
    let weights: Vec<f64> = outcome.values.iter().map(|v| v.abs()).collect();
    let alphas = match mixture_update(arms.len(), &outcome.components, &weights) {
        Some(a) => a,
        None => {
            outcome.degenerate = true;
            state.alphas.clone()
        }
    };
    let next = MixtureState {
        alphas,
        generation: state.generation + 1,
        population: state.population,
    };
    Ok((outcome, next))
}

/// Running PMC estimate after a given number of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PmcSnapshot {
    pub draws: u64,
    pub estimate: f64,
    pub tallies: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmcRun {
    pub estimate: f64,
    pub draws: u64,
    pub total_cost: f64,
    pub tallies: Vec<u64>,
    /// Mixture coefficients after each generation.
    pub alpha_history: Vec<Vec<f64>>,
    pub degenerate_generations: u64,
    /// One per checkpoint, then one at `n`.
    pub snapshots: Vec<PmcSnapshot>,
}

/// Run generations until `n` draws; the last generation may be short.
/// `checkpoints` are ascending draw counts.
pub fn run_pmc(
    arms: &mut [Arm],
    population: usize,
    n: u64,
    checkpoints: &[u64],
    rng: &mut McRng,
) -> Result<PmcRun, AllocError> {
    if population == 0 {
        return Err(AllocError::Invalid("population must be positive".into()));
    }
    if arms.is_empty() {
        return Err(AllocError::Invalid("no kernels".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) || checkpoints.last().is_some_and(|&c| c > n) {
        return Err(AllocError::Invalid(
            "checkpoints must be ascending and at most n".into(),
        ));
    }
    let mut state = MixtureState::uniform(arms.len(), population);
    let mut run = PmcRun {
        estimate: 0.0,
        draws: 0,
        total_cost: 0.0,
        tallies: vec![0; arms.len()],
        alpha_history: Vec::new(),
        degenerate_generations: 0,
        snapshots: Vec::with_capacity(checkpoints.len() + 1),
    };
    let mut sum = 0.0;
    let mut pending = checkpoints.iter().copied().chain(std::iter::once(n)).peekable();
    let snapshot = |draws: u64, sum: f64, tallies: &[u64]| PmcSnapshot {
        draws,
        estimate: if draws == 0 { 0.0 } else { sum / draws as f64 },
        tallies: tallies.to_vec(),
    };
    while pending.next_if(|&c| c == 0).is_some() {
        run.snapshots.push(snapshot(0, 0.0, &run.tallies));
    }
    while run.draws < n {
        let count = population.min((n - run.draws) as usize);
        let (outcome, next) = pmc_generation(&state, arms, count, rng)?;
        for ((&k, &v), &c) in outcome.components.iter().zip(&outcome.values).zip(&outcome.costs) {
            run.draws += 1;
            run.tallies[k] += 1;
            run.total_cost += c;
            sum += v;
            while pending.next_if(|&c| c == run.draws).is_some() {
                run.snapshots.push(snapshot(run.draws, sum, &run.tallies));
            }
        }
        if outcome.degenerate {
            run.degenerate_generations += 1;
        }
        run.alpha_history.push(next.alphas.clone());
        state = next;
    }
    for _ in pending {
        run.snapshots.push(snapshot(run.draws, sum, &run.tallies));
    }
    run.estimate = if run.draws == 0 {
        0.0
    } else {
        sum / run.draws as f64
    };
    Ok(run)
}
