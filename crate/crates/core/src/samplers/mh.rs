use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{accept_log, ChainRecord, Metered};
use crate::density::LogDensity;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MhOptions {
    pub proposal_scale: f64,
    /// Burn-in steps, discarded but charged to the adaptation budget.
    pub m_burn: usize,
    pub m_samples: usize,
}

impl MhOptions {
    /// Scale `2.4 / √d`.
    pub fn new(dim: usize, m_burn: usize, m_samples: usize) -> Self {
        Self { proposal_scale: 2.4 / (dim as f64).sqrt(), m_burn, m_samples }
    }
}

/// One isotropic Gaussian random-walk step from `theta` with cached
/// `logp`. Returns the next state, its log density and the acceptance flag.
pub fn mh_step<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &D,
    theta: &[f64],
    logp: f64,
    proposal_scale: f64,
    rng: &mut R,
) -> (Vec<f64>, f64, bool) {
    let proposal: Vec<f64> = theta.iter().map(|t| t + proposal_scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let lp = target.log_density(&proposal);
    if !lp.is_finite() {
        return (theta.to_vec(), logp, false);
    }
    if accept_log((lp - logp).min(0.0), rng) {
        (proposal, lp, true)
    } else {
        (theta.to_vec(), logp, false)
    }
}

pub fn run_mh<D: LogDensity + ?Sized>(target: &D, theta0: &[f64], opts: &MhOptions, seed: u64) -> Result<ChainRecord> {
    check_dim(target.dim(), theta0.len())?;
    if !(opts.proposal_scale > 0.0 && opts.proposal_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("proposal scale must be positive, got {}", opts.proposal_scale)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = Metered::new(target);
    let mut theta = theta0.to_vec();
    let mut logp = target.log_density(&theta);
    if !logp.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    for _ in 0..opts.m_burn {
        (theta, logp, _) = mh_step(&target, &theta, logp, opts.proposal_scale, &mut rng);
    }
    let mut rec = ChainRecord::new(seed, opts.m_samples);
    rec.adapt_hf_evals = target.count();
    rec.step_size = opts.proposal_scale;
    for _ in 0..opts.m_samples {
        let accepted;
        (theta, logp, accepted) = mh_step(&target, &theta, logp, opts.proposal_scale, &mut rng);
        rec.push(&theta, logp, accepted, target.count() - rec.adapt_hf_evals);
    }
    Ok(rec)
}
