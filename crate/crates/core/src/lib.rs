//! Multi-fidelity No-U-Turn sampling.
//!
//! A multi-fidelity Gaussian-process surrogate of an expensive log density
//! drives NUTS trajectories, and a delayed-acceptance correction against the
//! highest-fidelity density keeps the chain exact with respect to that model.
//!
//! Module map:
//! - [`gp`]: exact GP regression, kernels, hyperparameter training.
//! - [`surrogate`]: NARGP / GPDF fidelity fusion with active learning.
//! - [`dynamics`]: Hamiltonian, leapfrog, step-size search and dual averaging.
//! - [`samplers`]: Metropolis–Hastings, HMC, NUTS, delayed acceptance, MFNUTS.
//! - [`diagnostics`]: multivariate ESS and chain summaries.
//! - [`pde`]: finite-difference Poisson forward model.
//! - [`problems`]: the benchmark fidelity stacks.

pub mod density;
pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod gp;
pub mod optim;
pub mod pde;
pub mod problems;
pub mod samplers;
pub mod surrogate;
mod twofold;

pub use density::{BoxGuard, Counted, FnDensity, LogDensity};
pub use error::{Error, Result};
