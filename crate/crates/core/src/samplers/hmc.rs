use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{accept_log, ChainRecord, Metered};
use crate::density::LogDensity;
use crate::dynamics::{find_reasonable_epsilon, leapfrog, sample_momentum, DualAveraging, PhaseState};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct HmcOptions {
    /// Leapfrog steps per proposal.
    pub n_leapfrog: usize,
    pub delta: f64,
    pub m_adapt: usize,
    pub m_samples: usize,
}

impl Default for HmcOptions {
    fn default() -> Self {
        Self { n_leapfrog: 10, delta: 0.65, m_adapt: 2000, m_samples: 10_000 }
    }
}

#[derive(Clone, Debug)]
pub struct HmcStep {
    /// Next state; its momentum is the proposal's on acceptance.
    pub state: PhaseState,
    pub accepted: bool,
    /// `min(1, exp(H0 - H'))`, zero on divergence.
    pub alpha: f64,
    pub divergent: bool,
}

/// Resample momentum, integrate `n_leapfrog` steps and accept with
/// `min(1, exp(H(θ, r) - H(θ̃, r̃)))`.
pub fn hmc_step<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &D,
    current: &PhaseState,
    eps: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> HmcStep {
    let mut start = current.clone();
    start.r = sample_momentum(current.theta.len(), rng);
    let h0 = start.hamiltonian();
    let mut s = start.clone();
    for _ in 0..n_leapfrog {
        match leapfrog(target, &s, eps) {
            Ok(next) => s = next,
            Err(_) => return HmcStep { state: start, accepted: false, alpha: 0.0, divergent: true },
        }
    }
    let log_alpha = (h0 - s.hamiltonian()).min(0.0);
    let alpha = if log_alpha.is_nan() { 0.0 } else { log_alpha.exp() };
    if accept_log(log_alpha, rng) {
        HmcStep { state: s, accepted: true, alpha, divergent: false }
    } else {
        HmcStep { state: start, accepted: false, alpha, divergent: false }
    }
}

/// Dual-averaging adaptation for `m_adapt` steps, then sampling with the
/// frozen step size.
pub fn run_hmc<D: LogDensity + ?Sized>(
    target: &D,
    theta0: &[f64],
    opts: &HmcOptions,
    seed: u64,
) -> Result<ChainRecord> {
    check_dim(target.dim(), theta0.len())?;
    if opts.n_leapfrog == 0 {
        return Err(Error::InvalidArgument("HMC needs at least one leapfrog step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = Metered::new(target);
    let mut state = PhaseState::new(&target, theta0.to_vec(), vec![0.0; theta0.len()])?;
    let eps0 = find_reasonable_epsilon(&target, theta0, &mut rng)?;
    let mut da = DualAveraging::new(eps0, opts.delta)?;
    for _ in 0..opts.m_adapt {
        let step = hmc_step(&target, &state, da.step_size(), opts.n_leapfrog, &mut rng);
        da.update(step.alpha);
        state = step.state;
    }
    let eps = if opts.m_adapt > 0 { da.final_step_size() } else { eps0 };

    let mut rec = ChainRecord::new(seed, opts.m_samples);
    rec.adapt_hf_evals = target.count();
    rec.step_size = eps;
    for _ in 0..opts.m_samples {
        let step = hmc_step(&target, &state, eps, opts.n_leapfrog, &mut rng);
        rec.divergences += step.divergent as u64;
        state = step.state;
        rec.push(&state.theta, state.logp, step.accepted, target.count() - rec.adapt_hf_evals);
    }
    Ok(rec)
}
