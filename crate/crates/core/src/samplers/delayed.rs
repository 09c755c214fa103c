//! Two-stage delayed acceptance. Stage one screens a proposal with a cheap
//! approximation `π*`; only survivors are scored with the expensive `π`.
//!
//! All ratios are logs of (proposed / current); `q_ratio_log` is
//! `log q(θ | θ̃) - log q(θ̃ | θ)`.

use rand::Rng;

use super::accept_log;

/// `log α* = min(0, log π*(θ̃)/π*(θ) + log q(θ|θ̃)/q(θ̃|θ))`.
pub fn da_stage_one_log(pi_star_ratio_log: f64, q_ratio_log: f64) -> f64 {
    (pi_star_ratio_log + q_ratio_log).min(0.0)
}

/// Second-stage log acceptance, using the stage-one kernel `q* = α* q` in
/// both directions.
///
/// Written out, this is `min(0, log α*(θ̃→θ) - log α*(θ→θ̃) + q_ratio_log + pi_ratio_log)`.
/// Since `min(0, -x) - min(0, x) = -x`, the proposal ratio cancels and the
/// result is evaluated as `min(0, pi_ratio_log - pi_star_ratio_log)`, which
/// is exactly zero when the approximation is exact.
pub fn da_stage_two_log(pi_star_ratio_log: f64, q_ratio_log: f64, pi_ratio_log: f64) -> f64 {
    debug_assert!(!q_ratio_log.is_nan());
    (pi_ratio_log - pi_star_ratio_log).min(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DaOutcome {
    pub accepted: bool,
    /// Whether stage one passed and the expensive ratio was evaluated.
    pub consulted: bool,
}

/// Runs both stages; `pi_ratio_log` is only called when stage one accepts.
pub fn da_accept<R: Rng + ?Sized>(
    pi_star_ratio_log: f64,
    q_ratio_log: f64,
    pi_ratio_log: impl FnOnce() -> f64,
    rng: &mut R,
) -> DaOutcome {
    if !accept_log(da_stage_one_log(pi_star_ratio_log, q_ratio_log), rng) {
        return DaOutcome { accepted: false, consulted: false };
    }
    let log_alpha = da_stage_two_log(pi_star_ratio_log, q_ratio_log, pi_ratio_log());
    DaOutcome { accepted: accept_log(log_alpha, rng), consulted: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::mh_step;
    use crate::FnDensity;
    use crate::LogDensity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_approximation_passes_stage_two() {
        for r in [-30.0, -1.0, -1e-9, 0.0, 2.5] {
            for q in [-0.7, 0.0, 1e-3, 4.0] {
                assert_eq!(da_stage_two_log(r, q, r), 0.0);
            }
        }
    }

    #[test]
    fn zero_screen_never_consults() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let out = da_accept(f64::NEG_INFINITY, 0.0, || panic!("expensive model consulted"), &mut rng);
            assert_eq!(out, DaOutcome { accepted: false, consulted: false });
        }
    }

    #[test]
    fn flux_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let mut pos = || (rng.random::<f64>() * 6.0 - 3.0).exp();
            let (pi, pi_t, ps, ps_t, q_f, q_b) = (pos(), pos(), pos(), pos(), pos(), pos());
            let flux = |pi: f64, pi_t: f64, ps: f64, ps_t: f64, q_f: f64, q_b: f64| {
                let (s, q, p) = ((ps_t / ps).ln(), (q_b / q_f).ln(), (pi_t / pi).ln());
                q_f * da_stage_one_log(s, q).exp() * da_stage_two_log(s, q, p).exp() * pi
            };
            let fwd = flux(pi, pi_t, ps, ps_t, q_f, q_b);
            let rev = flux(pi_t, pi, ps_t, ps, q_b, q_f);
            let closed = (ps * q_f).min(ps_t * q_b) * (pi / ps).min(pi_t / ps_t);
            assert!(((fwd - rev) / fwd).abs() < 1e-12, "{fwd} vs {rev}");
            assert!(((fwd - closed) / closed).abs() < 1e-12);
        }
    }

    #[test]
    fn collapse_matches_metropolis_stream() {
        let target = FnDensity::std_normal(2);
        let scale = 1.7;
        let mut rng_mh = ChaCha8Rng::seed_from_u64(21);
        let mut rng_da = rng_mh.clone();
        let (mut x_mh, mut lp_mh) = (vec![0.3, -0.2], target.log_density(&[0.3, -0.2]));
        let (mut x_da, mut lp_da) = (x_mh.clone(), lp_mh);
        let (mut acc_mh, mut acc_da) = (0, 0);
        for _ in 0..10_000 {
            let a;
            (x_mh, lp_mh, a) = mh_step(&target, &x_mh, lp_mh, scale, &mut rng_mh);
            acc_mh += a as usize;

            let prop: Vec<f64> = x_da.iter().map(|t| t + scale * rng_da.sample::<f64, _>(StandardNormal)).collect();
            let lp = target.log_density(&prop);
            let out = da_accept(lp - lp_da, 0.0, || lp - lp_da, &mut rng_da);
            if out.accepted {
                (x_da, lp_da) = (prop, lp);
                acc_da += 1;
            }
            assert_eq!(x_mh, x_da);
        }
        assert_eq!(acc_mh, acc_da);
    }

    #[test]
    fn finite_for_extreme_ratios() {
        for r in [-700.0, 700.0] {
            assert!(da_stage_one_log(r, 0.0).is_finite());
            assert!(da_stage_two_log(r, 0.0, -r).is_finite());
        }
    }
}
