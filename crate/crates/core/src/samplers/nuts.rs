use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChainRecord, Metered};
use crate::density::LogDensity;
use crate::dynamics::{find_reasonable_epsilon, leapfrog, sample_momentum, DualAveraging, PhaseState};
use crate::error::{check_dim, Result};

/// Energy increase over the slice level that marks a divergent trajectory.
const DELTA_MAX: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct NutsOptions {
    pub max_tree_depth: u32,
    pub delta: f64,
    pub m_adapt: usize,
    pub m_samples: usize,
}

impl Default for NutsOptions {
    fn default() -> Self {
        Self { max_tree_depth: 10, delta: 0.65, m_adapt: 2000, m_samples: 10_000 }
    }
}

#[derive(Clone, Debug)]
pub struct NutsStep {
    /// Freshly drawn momentum at the starting position.
    pub initial_r: Vec<f64>,
    /// Selected state, carrying the momentum of its leaf.
    pub state: PhaseState,
    /// Whether the selected state differs from the starting one.
    pub moved: bool,
    pub depth: u32,
    /// Mean of `min(1, exp(H0 - H))` over the leaves of the last subtree.
    pub alpha: f64,
    pub divergent: bool,
    pub saturated: bool,
    /// Log slice level drawn for this step.
    pub log_u: f64,
}

/// Stop when either end momentum points back across the span.
pub fn u_turn(theta_minus: &[f64], theta_plus: &[f64], r_minus: &[f64], r_plus: &[f64]) -> bool {
    let mut dm = 0.0;
    let mut dp = 0.0;
    for i in 0..theta_minus.len() {
        let span = theta_plus[i] - theta_minus[i];
        dm += span * r_minus[i];
        dp += span * r_plus[i];
    }
    dm < 0.0 || dp < 0.0
}

struct Tree {
    minus: PhaseState,
    plus: PhaseState,
    members: Vec<PhaseState>,
    stop: bool,
    divergent: bool,
    alpha_sum: f64,
    n_alpha: usize,
}

struct Ctx<'a, D: ?Sized> {
    target: &'a D,
    log_u: f64,
    joint0: f64,
    eps: f64,
}

fn build_tree<D: LogDensity + ?Sized>(ctx: &Ctx<'_, D>, from: &PhaseState, dir: f64, depth: u32) -> Tree {
    if depth == 0 {
        return match leapfrog(ctx.target, from, dir * ctx.eps) {
            Ok(s) => {
                let joint = s.log_joint();
                let members = if ctx.log_u <= joint { vec![s.clone()] } else { Vec::new() };
                let divergent = !(joint > ctx.log_u - DELTA_MAX);
                let alpha = if joint.is_nan() { 0.0 } else { (joint - ctx.joint0).min(0.0).exp() };
                Tree { minus: s.clone(), plus: s, members, stop: divergent, divergent, alpha_sum: alpha, n_alpha: 1 }
            }
            Err(_) => Tree {
                minus: from.clone(),
                plus: from.clone(),
                members: Vec::new(),
                stop: true,
                divergent: true,
                alpha_sum: 0.0,
                n_alpha: 1,
            },
        };
    }
    let mut tree = build_tree(ctx, from, dir, depth - 1);
    if tree.stop {
        return tree;
    }
    let edge = if dir < 0.0 { &tree.minus } else { &tree.plus };
    let other = build_tree(ctx, edge, dir, depth - 1);
    if dir < 0.0 {
        tree.minus = other.minus;
    } else {
        tree.plus = other.plus;
    }
    tree.members.extend(other.members);
    tree.alpha_sum += other.alpha_sum;
    tree.n_alpha += other.n_alpha;
    tree.divergent |= other.divergent;
    tree.stop = other.stop || u_turn(&tree.minus.theta, &tree.plus.theta, &tree.minus.r, &tree.plus.r);
    tree
}

/// One NUTS transition with uniform selection over the slice members.
pub fn nuts_step<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &D,
    current: &PhaseState,
    eps: f64,
    max_depth: u32,
    rng: &mut R,
) -> NutsStep {
    let mut start = current.clone();
    start.r = sample_momentum(current.theta.len(), rng);
    let joint0 = start.log_joint();
    // u ~ U(0, p]; 1 - U[0,1) keeps the log finite
    let log_u = joint0 + (1.0 - rng.random::<f64>()).ln();
    let ctx = Ctx { target, log_u, joint0, eps };

    let mut minus = start.clone();
    let mut plus = start.clone();
    let mut members = vec![start.clone()];
    let mut depth = 0;
    let mut stop = false;
    let mut alpha = 0.0;
    let mut divergent = false;
    while !stop && depth < max_depth {
        let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let sub = if dir < 0.0 { build_tree(&ctx, &minus, dir, depth) } else { build_tree(&ctx, &plus, dir, depth) };
        if dir < 0.0 {
            minus = sub.minus;
        } else {
            plus = sub.plus;
        }
        if !sub.stop {
            members.extend(sub.members);
        }
        alpha = sub.alpha_sum / sub.n_alpha as f64;
        divergent |= sub.divergent;
        stop = sub.stop || u_turn(&minus.theta, &plus.theta, &minus.r, &plus.r);
        depth += 1;
    }
    let pick = rng.random_range(0..members.len());
    let state = members.swap_remove(pick);
    debug_assert!(state.log_joint() >= log_u, "selected state outside the slice");
    NutsStep { initial_r: start.r, state, moved: pick != 0, depth, alpha, divergent, saturated: !stop, log_u }
}

/// Dual-averaging adaptation for `m_adapt` steps, then sampling with the
/// frozen step size.
pub fn run_nuts<D: LogDensity + ?Sized>(
    target: &D,
    theta0: &[f64],
    opts: &NutsOptions,
    seed: u64,
) -> Result<ChainRecord> {
    check_dim(target.dim(), theta0.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = Metered::new(target);
    let Adaptation { mut state, step_size: eps, .. } = adapt(&target, theta0, opts, &mut rng)?;

    let mut rec = ChainRecord::new(seed, opts.m_samples);
    rec.adapt_hf_evals = target.count();
    rec.step_size = eps;
    rec.tree_depth.reserve(opts.m_samples);
    for _ in 0..opts.m_samples {
        let step = nuts_step(&target, &state, eps, opts.max_tree_depth, &mut rng);
        rec.divergences += step.divergent as u64;
        rec.depth_saturations += step.saturated as u64;
        rec.tree_depth.push(step.depth);
        if step.moved {
            state = step.state;
        }
        rec.push(&state.theta, state.logp, step.moved, target.count() - rec.adapt_hf_evals);
    }
    Ok(rec)
}

/// Result of the dual-averaging warm-up.
#[derive(Clone, Debug)]
pub struct Adaptation {
    pub state: PhaseState,
    /// Frozen step size for the sampling phase.
    pub step_size: f64,
    /// Acceptance statistic of every adaptation step, in order.
    pub alpha: Vec<f64>,
}

/// Runs only the adaptation phase of [`run_nuts`] with the same seed stream.
pub fn adapt_nuts<D: LogDensity + ?Sized>(
    target: &D,
    theta0: &[f64],
    opts: &NutsOptions,
    seed: u64,
) -> Result<Adaptation> {
    check_dim(target.dim(), theta0.len())?;
    adapt(target, theta0, opts, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Step-size search and dual averaging; returns the final state and frozen step.
pub(crate) fn adapt<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &D,
    theta0: &[f64],
    opts: &NutsOptions,
    rng: &mut R,
) -> Result<Adaptation> {
    let mut state = PhaseState::new(target, theta0.to_vec(), vec![0.0; theta0.len()])?;
    let eps0 = find_reasonable_epsilon(target, theta0, rng)?;
    let mut da = DualAveraging::new(eps0, opts.delta)?;
    let mut alpha = Vec::with_capacity(opts.m_adapt);
    for _ in 0..opts.m_adapt {
        let step = nuts_step(target, &state, da.step_size(), opts.max_tree_depth, rng);
        da.update(step.alpha);
        alpha.push(step.alpha);
        if step.moved {
            state = step.state;
        }
    }
    let step_size = if opts.m_adapt > 0 { da.final_step_size() } else { eps0 };
    Ok(Adaptation { state, step_size, alpha })
}
