//! Batch experiment runner for the samplers in `mfnuts-core`.

pub mod config;
pub mod output;
pub mod runner;

use std::path::Path;

pub use config::{ConfigError, ExperimentConfig, SamplerKind};
pub use runner::{run_chains, run_experiment, RunMetrics, RunOutcome};

/// `(high-fidelity evaluations, mESS)` points.
pub type Curve = Vec<(u64, f64)>;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] mfnuts_core::Error),
    #[error("sampler failed: {0}")]
    Sampler(mfnuts_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 2 for configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Mismatch(_) => 2,
            _ => 1,
        }
    }
}

/// Load a config file and apply the `MFNUTS_SEED` override.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_seed_override()?;
    Ok(cfg)
}

/// Run every config and concatenate their chain-0 mESS curves.
///
/// All configs must target the same problem.
pub fn compare(configs: &[ExperimentConfig], out: &Path) -> Result<Vec<(String, Curve)>, RunError> {
    let Some(first) = configs.first() else {
        return Err(RunError::Mismatch("compare needs at least one config".into()));
    };
    if let Some(c) = configs.iter().find(|c| c.problem != first.problem) {
        return Err(RunError::Mismatch(format!(
            "configs target different problems: {} and {}",
            first.problem, c.problem
        )));
    }
    let mut curves = Vec::with_capacity(configs.len());
    for cfg in configs {
        let outcome = run_experiment(cfg)?;
        let curve = outcome.metrics.chains.first().map(|r| r.curve.clone()).unwrap_or_default();
        curves.push((cfg.sampler.name().to_string(), curve));
    }
    output::write_compare_csv(out, &curves)?;
    Ok(curves)
}
