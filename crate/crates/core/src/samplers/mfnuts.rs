use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nuts::{adapt, Adaptation};
use super::{accept_log, nuts_step, ChainRecord, Metered, NutsOptions};
use crate::density::LogDensity;
use crate::error::{check_dim, Result};

/// Log acceptance of a surrogate-NUTS proposal against the expensive model.
///
/// `ps_*` are surrogate canonical log densities and `pl_*` the matching
/// expensive ones at the current and proposed phase states. This is
/// `min(0, [min(0, ps_cur - ps_prop) + pl_prop] - [min(0, ps_prop - ps_cur) + pl_cur])`;
/// the two inner minima always differ by `ps_cur - ps_prop`, so it is
/// evaluated in that form, which is exactly zero when the models agree.
pub fn mfnuts_log_acceptance(ps_cur: f64, ps_prop: f64, pl_cur: f64, pl_prop: f64) -> f64 {
    let v = (pl_prop - pl_cur) + (ps_cur - ps_prop);
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v.min(0.0)
    }
}

/// NUTS on `surrogate` corrected by delayed acceptance against `high`.
///
/// Adaptation touches only the surrogate. Sampling starts where adaptation
/// ended; the one `high` evaluation there is charged to `adapt_hf_evals`.
/// Each step whose trajectory moves costs exactly one `high` evaluation.
pub fn mfnuts_run<S, H>(surrogate: &S, high: &H, theta0: &[f64], opts: &NutsOptions, seed: u64) -> Result<ChainRecord>
where
    S: LogDensity + ?Sized,
    H: LogDensity + ?Sized,
{
    check_dim(surrogate.dim(), theta0.len())?;
    check_dim(high.dim(), theta0.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let high = Metered::new(high);
    let Adaptation { mut state, step_size: eps, .. } = adapt(surrogate, theta0, opts, &mut rng)?;

    let mut pl = high.log_density(&state.theta);
    if !pl.is_finite() {
        return Err(crate::Error::NonFiniteStart);
    }
    let mut rec = ChainRecord::new(seed, opts.m_samples);
    rec.adapt_hf_evals = high.count();
    rec.step_size = eps;
    rec.tree_depth.reserve(opts.m_samples);
    let kinetic = |r: &[f64]| 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..opts.m_samples {
        let step = nuts_step(surrogate, &state, eps, opts.max_tree_depth, &mut rng);
        rec.divergences += step.divergent as u64;
        rec.depth_saturations += step.saturated as u64;
        rec.tree_depth.push(step.depth);
        let mut accepted = false;
        if step.moved {
            let k0 = kinetic(&step.initial_r);
            let k1 = kinetic(&step.state.r);
            let pl_prop = high.log_density(&step.state.theta);
            if pl_prop.is_finite() {
                let log_alpha = mfnuts_log_acceptance(state.logp - k0, step.state.logp - k1, pl - k0, pl_prop - k1);
                if accept_log(log_alpha, &mut rng) {
                    state = step.state;
                    pl = pl_prop;
                    accepted = true;
                }
            }
        }
        rec.push(&state.theta, pl, accepted, high.count() - rec.adapt_hf_evals);
    }
    Ok(rec)
}
