//! Adaptive allocation of a sampling budget among unbiased Monte Carlo estimators
//! of one quantity, using stochastic bandit policies.

pub mod allocator;
pub mod bandit;
pub mod estimators;
pub mod harness;
pub mod pmc;
pub mod presets;
pub mod rewards;
pub mod rng;
pub mod variance_bounds;
