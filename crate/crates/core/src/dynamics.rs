//! Hamiltonian dynamics with identity mass: energy, leapfrog integration,
//! initial step-size search and dual-averaging step-size adaptation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::density::LogDensity;
use crate::error::{check_dim, Error, Result};

/// Position, momentum and the log density and gradient at the position.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
}

impl PhaseState {
    /// Evaluates the density and gradient at `theta`.
    pub fn new<D: LogDensity + ?Sized>(density: &D, theta: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        check_dim(density.dim(), theta.len())?;
        check_dim(theta.len(), r.len())?;
        let mut grad = vec![0.0; theta.len()];
        let logp = density.log_density_grad(&theta, &mut grad);
        if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteStart);
        }
        Ok(Self { theta, r, logp, grad })
    }

    pub fn hamiltonian(&self) -> f64 {
        hamiltonian(self.logp, &self.r)
    }

    /// Log of the canonical density, `-H`.
    pub fn log_joint(&self) -> f64 {
        -self.hamiltonian()
    }
}

/// `H = -logp + ½ r·r`.
pub fn hamiltonian(logp: f64, r: &[f64]) -> f64 {
    -logp + 0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

pub fn sample_momentum<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// One leapfrog step: half kick, drift, half kick.
///
/// A negative `eps` integrates backwards in time. A non-finite density or
/// gradient at the new position is reported as
/// [`Error::DivergentTrajectory`].
pub fn leapfrog<D: LogDensity + ?Sized>(density: &D, state: &PhaseState, eps: f64) -> Result<PhaseState> {
    if !eps.is_finite() || eps == 0.0 {
        return Err(Error::InvalidArgument(format!("leapfrog step must be finite and nonzero, got {eps}")));
    }
    let d = state.theta.len();
    let mut r: Vec<f64> = state.r.iter().zip(&state.grad).map(|(r, g)| r + 0.5 * eps * g).collect();
    let theta: Vec<f64> = state.theta.iter().zip(&r).map(|(t, r)| t + eps * r).collect();
    let mut grad = vec![0.0; d];
    let logp = density.log_density_grad(&theta, &mut grad);
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::DivergentTrajectory);
    }
    for (r, g) in r.iter_mut().zip(&grad) {
        *r += 0.5 * eps * g;
    }
    Ok(PhaseState { theta, r, logp, grad })
}

/// Initial step size: draw `r ~ N(0, I)`, then halve `ε` from 1 until one
/// leapfrog step has acceptance probability above ½.
pub fn find_reasonable_epsilon<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    density: &D,
    theta0: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let r0 = sample_momentum(theta0.len(), rng);
    find_reasonable_epsilon_with_momentum(density, theta0, &r0)
}

pub fn find_reasonable_epsilon_with_momentum<D: LogDensity + ?Sized>(
    density: &D,
    theta0: &[f64],
    r0: &[f64],
) -> Result<f64> {
    const MIN_EPS: f64 = 1e-10;
    let start = PhaseState::new(density, theta0.to_vec(), r0.to_vec())?;
    let h0 = start.hamiltonian();
    let mut eps = 1.0;
    loop {
        if let Ok(next) = leapfrog(density, &start, eps) {
            if h0 - next.hamiltonian() > 0.5f64.ln() {
                return Ok(eps);
            }
        }
        eps *= 0.5;
        if eps < MIN_EPS {
            return Err(Error::DegenerateGeometry { min: MIN_EPS });
        }
    }
}

/// Nesterov dual averaging of `log ε` toward mean acceptance `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualAveraging {
    pub log_eps: f64,
    pub log_eps_bar: f64,
    pub h_bar: f64,
    pub mu: f64,
    pub iteration: u64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    pub delta: f64,
}

impl DualAveraging {
    /// Standard constants (γ = 0.05, t0 = 10, κ = 0.75) with `μ = log(10 ε0)`.
    pub fn new(eps0: f64, delta: f64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial step size must be positive, got {eps0}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("target acceptance must lie in (0, 1), got {delta}")));
        }
        Ok(Self {
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            mu: (10.0 * eps0).ln(),
            iteration: 0,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            delta,
        })
    }

    pub fn update(&mut self, alpha_stat: f64) {
        let a = if alpha_stat.is_nan() { 0.0 } else { alpha_stat.clamp(0.0, 1.0) };
        self.iteration += 1;
        let m = self.iteration as f64;
        let w = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.delta - a);
        self.log_eps = self.mu - m.sqrt() / self.gamma * self.h_bar;
        let eta = m.powf(-self.kappa);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    /// Step size to use during adaptation.
    pub fn step_size(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Frozen step size once adaptation ends.
    pub fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}
