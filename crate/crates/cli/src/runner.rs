use std::path::{Path, PathBuf};

use log::{info, warn};
use mfnuts_core::diagnostics::{summary, MetricsReport};
use mfnuts_core::problems::{by_name, Problem};
use mfnuts_core::samplers::{mfnuts_run, run_hmc, run_mh, run_nuts, ChainRecord, HmcOptions, MhOptions, NutsOptions};
use mfnuts_core::surrogate::{build_mfgp, BuildOptions, FidelityStack, MfSurrogate};
use mfnuts_core::BoxGuard;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, SamplerKind};
use crate::output::{write_curve_csv, write_manifest, write_samples_csv};
use crate::RunError;

/// Points on each stored mESS-vs-cost curve.
pub const CURVE_POINTS: usize = 50;

/// Surrogate used by an MFNUTS run and whether it came from disk.
pub struct PreparedSurrogate {
    pub surrogate: MfSurrogate,
    pub loaded: bool,
}

/// Build the surrogate for `cfg`, or load it from `surrogate.path` when that
/// file exists. A freshly built surrogate is saved there.
pub fn prepare_surrogate(cfg: &ExperimentConfig, problem: &Problem) -> Result<PreparedSurrogate, RunError> {
    if let Some(path) = cfg.surrogate.path.as_deref().filter(|p| p.exists()) {
        let surrogate = MfSurrogate::load(path)?;
        if surrogate.bounds() != &problem.bounds {
            return Err(RunError::Mismatch(format!("surrogate at {} was built for different bounds", path.display())));
        }
        info!("loaded surrogate from {}", path.display());
        return Ok(PreparedSurrogate { surrogate, loaded: true });
    }
    let surrogate = build_surrogate(cfg, problem)?;
    if let Some(path) = &cfg.surrogate.path {
        surrogate.save(path)?;
    }
    Ok(PreparedSurrogate { surrogate, loaded: false })
}

pub fn build_surrogate(cfg: &ExperimentConfig, problem: &Problem) -> Result<MfSurrogate, RunError> {
    let (def_high, def_low) = problem.default_budget;
    let s = &cfg.surrogate;
    let opts = BuildOptions {
        n_test: s.n_test,
        mse_threshold: s.mse_threshold,
        variant: s.variant,
        seed: cfg.seed,
        ..BuildOptions::new(s.n_low.unwrap_or(def_low), s.n_high.unwrap_or(def_high))
    };
    let stack = FidelityStack::new(problem.low.clone(), problem.high.clone(), problem.bounds.clone())?;
    Ok(build_mfgp(&stack, &opts)?)
}

fn chain_theta0(cfg: &ExperimentConfig, problem: &Problem, chain_seed: u64) -> Vec<f64> {
    match &cfg.theta0 {
        Some(t) => t.clone(),
        None => problem.bounds.sample_uniform(&mut ChaCha8Rng::seed_from_u64(chain_seed ^ 0x7e7a_0000)),
    }
}

fn run_one(
    cfg: &ExperimentConfig,
    problem: &Problem,
    surrogate: Option<&PreparedSurrogate>,
    chain_seed: u64,
) -> Result<ChainRecord, mfnuts_core::Error> {
    let theta0 = chain_theta0(cfg, problem, chain_seed);
    let p = &cfg.sampler_params;
    let high = problem.high.as_ref();
    let nuts = NutsOptions {
        max_tree_depth: p.max_tree_depth,
        delta: p.delta,
        m_adapt: cfg.m_adapt,
        m_samples: cfg.m_samples,
    };
    match cfg.sampler {
        SamplerKind::Mh => {
            let mut opts = MhOptions::new(problem.dim(), cfg.m_adapt, cfg.m_samples);
            if let Some(s) = p.proposal_scale {
                opts.proposal_scale = s;
            }
            run_mh(high, &theta0, &opts, chain_seed)
        }
        SamplerKind::Hmc => {
            let opts =
                HmcOptions { n_leapfrog: p.hmc_t, delta: p.delta, m_adapt: cfg.m_adapt, m_samples: cfg.m_samples };
            run_hmc(high, &theta0, &opts, chain_seed)
        }
        SamplerKind::Nuts => run_nuts(high, &theta0, &nuts, chain_seed),
        SamplerKind::Mfnuts => {
            let s = surrogate.expect("MFNUTS runs are given a surrogate");
            // The surrogate is only trusted on the box it was trained on.
            let guide = BoxGuard::new(&s.surrogate, problem.bounds.clone());
            let mut rec = mfnuts_run(&guide, high, &theta0, &nuts, chain_seed)?;
            rec.offline_hf_evals = s.surrogate.eval_counts.high;
            Ok(rec)
        }
    }
}

/// Run `cfg.n_chains` chains concurrently; chain `k` uses seed `cfg.seed + k`.
pub fn run_chains(
    cfg: &ExperimentConfig,
    problem: &Problem,
    surrogate: Option<&PreparedSurrogate>,
) -> Vec<Result<ChainRecord, mfnuts_core::Error>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|k| {
                let seed = cfg.seed.wrapping_add(k as u64);
                scope.spawn(move || run_one(cfg, problem, surrogate, seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SurrogateInfo {
    pub variant: String,
    pub validation_mse: f64,
    pub converged: bool,
    pub loaded: bool,
    pub low_evals: u64,
    pub high_evals: u64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub problem: String,
    pub sampler: String,
    pub seed: u64,
    /// High-fidelity evaluations made in this process, read from the
    /// problem's counter at the end of the run.
    pub hf_evals_counter: u64,
    pub surrogate: Option<SurrogateInfo>,
    pub chains: Vec<MetricsReport>,
}

/// Everything a finished run produced, already written to disk.
pub struct RunOutcome {
    pub records: Vec<ChainRecord>,
    pub metrics: RunMetrics,
    pub files: Vec<PathBuf>,
}

fn rel(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).display().to_string()
}

/// Execute a full experiment and write its artifacts into `output_dir`.
///
/// On a sampler failure the completed chains are still written and the
/// MANIFEST is marked incomplete.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let problem = by_name(&cfg.problem)?;
    problem.high.reset();
    problem.low.reset();
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;

    let surrogate = match cfg.sampler {
        SamplerKind::Mfnuts => Some(prepare_surrogate(cfg, &problem)?),
        _ => None,
    };
    if let Some(s) = surrogate.as_ref().filter(|s| !s.surrogate.converged) {
        warn!("surrogate did not reach the MSE threshold (test MSE {:.3e})", s.surrogate.validation_mse);
    }
    let results = run_chains(cfg, &problem, surrogate.as_ref());

    let mut files = Vec::new();
    let mut records = Vec::new();
    let mut reports = Vec::new();
    let mut first_error = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => {
                let samples = dir.join(format!("samples_chain{k}.csv"));
                write_samples_csv(&samples, &rec)?;
                files.push(samples);
                match summary(&rec, CURVE_POINTS) {
                    Ok(report) => {
                        let curve = dir.join(format!("curve_chain{k}.csv"));
                        write_curve_csv(&curve, &report.curve)?;
                        files.push(curve);
                        reports.push(report);
                    }
                    Err(e) => warn!("chain {k}: no metrics ({e})"),
                }
                records.push(rec);
            }
            Err(e) => {
                warn!("chain {k} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }

    let metrics = RunMetrics {
        problem: cfg.problem.clone(),
        sampler: cfg.sampler.name().to_string(),
        seed: cfg.seed,
        hf_evals_counter: problem.high.count(),
        surrogate: surrogate.as_ref().map(|s| SurrogateInfo {
            variant: format!("{:?}", s.surrogate.variant()).to_lowercase(),
            validation_mse: s.surrogate.validation_mse,
            converged: s.surrogate.converged,
            loaded: s.loaded,
            low_evals: s.surrogate.eval_counts.low,
            high_evals: s.surrogate.eval_counts.high,
        }),
        chains: reports,
    };
    let metrics_path = dir.join("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&metrics).map_err(mfnuts_core::Error::from)?)?;
    files.push(metrics_path);

    let names: Vec<String> = files.iter().map(|f| rel(&dir, f)).collect();
    let error_text = first_error.as_ref().map(ToString::to_string);
    write_manifest(&dir.join("MANIFEST"), first_error.is_none(), &names, error_text.as_deref())?;
    if let Some(e) = first_error {
        return Err(RunError::Sampler(e));
    }
    info!(
        "{} on {}: {} chain(s), {} high-fidelity evaluations",
        metrics.sampler,
        metrics.problem,
        records.len(),
        metrics.hf_evals_counter
    );
    Ok(RunOutcome { records, metrics, files })
}
