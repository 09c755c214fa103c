//! Markov chain samplers. Every runner returns a [`ChainRecord`] and charges
//! target evaluations to the record: one per density call and
//! [`LogDensity::grad_cost`] per gradient call.

mod delayed;
mod hmc;
mod mfnuts;
mod mh;
mod nuts;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;

pub use delayed::{da_accept, da_stage_one_log, da_stage_two_log, DaOutcome};
pub use hmc::{hmc_step, run_hmc, HmcOptions, HmcStep};
pub use mfnuts::{mfnuts_log_acceptance, mfnuts_run};
pub use mh::{mh_step, run_mh, MhOptions};
pub use nuts::{adapt_nuts, nuts_step, run_nuts, u_turn, Adaptation, NutsOptions, NutsStep};

/// Output of one chain after adaptation or burn-in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub samples: Vec<Vec<f64>>,
    /// Target log density at each sample (the high fidelity for MFNUTS).
    pub logp: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Trajectory tree depth per step; empty for samplers without trees.
    pub tree_depth: Vec<u32>,
    /// Target evaluations spent in the sampling phase up to and including each step.
    pub hf_evals_cumulative: Vec<u64>,
    pub offline_hf_evals: u64,
    pub adapt_hf_evals: u64,
    pub seed: u64,
    /// Integrator step size, or the proposal scale for Metropolis–Hastings.
    pub step_size: f64,
    pub divergences: u64,
    pub depth_saturations: u64,
}

impl ChainRecord {
    fn new(seed: u64, capacity: usize) -> Self {
        Self {
            samples: Vec::with_capacity(capacity),
            logp: Vec::with_capacity(capacity),
            accepted: Vec::with_capacity(capacity),
            tree_depth: Vec::new(),
            hf_evals_cumulative: Vec::with_capacity(capacity),
            offline_hf_evals: 0,
            adapt_hf_evals: 0,
            seed,
            step_size: f64::NAN,
            divergences: 0,
            depth_saturations: 0,
        }
    }

    fn push(&mut self, theta: &[f64], logp: f64, accepted: bool, hf_cumulative: u64) {
        self.samples.push(theta.to_vec());
        self.logp.push(logp);
        self.accepted.push(accepted);
        self.hf_evals_cumulative.push(hf_cumulative);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Offline, adaptation and sampling evaluations together.
    pub fn total_hf_evals(&self) -> u64 {
        self.offline_hf_evals + self.adapt_hf_evals + self.hf_evals_cumulative.last().copied().unwrap_or(0)
    }
}

/// Accepts with probability `min(1, exp(log_alpha))`. No uniform is drawn
/// when acceptance is certain, and NaN rejects.
pub fn accept_log<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    if log_alpha >= 0.0 {
        return true;
    }
    if log_alpha.is_nan() {
        return false;
    }
    accept_with_uniform(log_alpha, rng.random::<f64>())
}

/// Threshold rule with an explicit uniform draw `u ∈ [0, 1)`.
pub fn accept_with_uniform(log_alpha: f64, u: f64) -> bool {
    log_alpha >= 0.0 || u.ln() < log_alpha
}

/// Per-chain evaluation meter around a target.
pub(crate) struct Metered<'a, D: ?Sized> {
    inner: &'a D,
    count: AtomicU64,
}

impl<'a, D: LogDensity + ?Sized> Metered<'a, D> {
    pub(crate) fn new(inner: &'a D) -> Self {
        Self { inner, count: AtomicU64::new(0) }
    }

    pub(crate) fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<D: LogDensity + ?Sized> LogDensity for Metered<'_, D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.log_density(theta)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.count.fetch_add(self.inner.grad_cost(), Ordering::Relaxed);
        self.inner.log_density_grad(theta, grad)
    }

    fn grad_cost(&self) -> u64 {
        self.inner.grad_cost()
    }
}
