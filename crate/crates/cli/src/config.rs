use std::fmt;
use std::path::{Path, PathBuf};

use mfnuts_core::problems::{by_name, PROBLEM_NAMES};
use mfnuts_core::surrogate::VariantChoice;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Mh,
    Hmc,
    Nuts,
    Mfnuts,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Mh => "mh",
            SamplerKind::Hmc => "hmc",
            SamplerKind::Nuts => "nuts",
            SamplerKind::Mfnuts => "mfnuts",
        }
    }
}

/// Surrogate construction settings. Budgets default to the problem's own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    #[serde(default)]
    pub n_low: Option<usize>,
    #[serde(default)]
    pub n_high: Option<usize>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_mse_threshold")]
    pub mse_threshold: f64,
    #[serde(default = "default_variant")]
    pub variant: VariantChoice,
    /// Load from here if the file exists, otherwise build and save here.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n_low: None,
            n_high: None,
            n_test: default_n_test(),
            mse_threshold: default_mse_threshold(),
            variant: default_variant(),
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerParams {
    /// Random-walk scale; `2.4 / sqrt(d)` when unset.
    #[serde(default)]
    pub proposal_scale: Option<f64>,
    #[serde(rename = "hmc_T", default = "default_hmc_t")]
    pub hmc_t: usize,
    #[serde(default = "default_max_tree_depth")]
    pub max_tree_depth: u32,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            proposal_scale: None,
            hmc_t: default_hmc_t(),
            max_tree_depth: default_max_tree_depth(),
            delta: default_delta(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    pub sampler: SamplerKind,
    #[serde(default = "default_m_adapt")]
    pub m_adapt: usize,
    #[serde(default = "default_m_samples")]
    pub m_samples: usize,
    #[serde(default = "default_n_chains")]
    pub n_chains: usize,
    #[serde(default)]
    pub seed: u64,
    /// Initial state; drawn uniformly in the problem bounds when unset.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub sampler_params: SamplerParams,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_n_test() -> usize {
    200
}
fn default_mse_threshold() -> f64 {
    1e-3
}
fn default_variant() -> VariantChoice {
    VariantChoice::Auto
}
fn default_hmc_t() -> usize {
    10
}
fn default_max_tree_depth() -> u32 {
    10
}
fn default_delta() -> f64 {
    0.65
}
fn default_m_adapt() -> usize {
    2000
}
fn default_m_samples() -> usize {
    10_000
}
fn default_n_chains() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A rejected configuration, with the source position when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: Option<String>,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ConfigError {
    fn semantic(message: impl Into<String>) -> Self {
        Self { source: None, line: 0, column: 0, message: message.into() }
    }

    fn with_source(mut self, source: &Path) -> Self {
        self.source = Some(source.display().to_string());
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let src = self.source.as_deref().unwrap_or("<config>");
        if self.line > 0 {
            write!(f, "{src}:{}:{}: {}", self.line, self.column, self.message)
        } else {
            write!(f, "{src}: {}", self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Line and column of the first occurrence of `"key"` in `text`.
fn locate_key(text: &str, key: &str) -> Option<(usize, usize)> {
    let needle = format!("\"{key}\"");
    text.lines().enumerate().find_map(|(i, l)| l.find(&needle).map(|c| (i + 1, c + 1)))
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            source: None,
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|(key, msg)| {
            let (line, column) = key.and_then(|k| locate_key(text, k)).unwrap_or((0, 0));
            ConfigError { line, column, ..ConfigError::semantic(msg) }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::semantic(format!("cannot read: {e}")).with_source(path))?;
        Self::from_json_str(&text).map_err(|e| e.with_source(path))
    }

    /// Replace the seed with `MFNUTS_SEED` when that variable is set.
    pub fn apply_seed_override(&mut self) -> Result<(), ConfigError> {
        match std::env::var("MFNUTS_SEED") {
            Ok(v) => {
                self.seed = v.trim().parse().map_err(|_| {
                    ConfigError::semantic(format!("MFNUTS_SEED must be an unsigned integer, got {v:?}"))
                })?;
                Ok(())
            }
            Err(_) => Ok(()),
        }
    }

    /// Checks that serde cannot express. Errors name the offending key.
    fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        if !PROBLEM_NAMES.contains(&self.problem.as_str()) {
            return Err((
                Some("problem"),
                format!("unknown problem {:?}; expected one of {PROBLEM_NAMES:?}", self.problem),
            ));
        }
        if self.m_samples < 1 {
            return Err((Some("m_samples"), "m_samples must be at least 1".into()));
        }
        if self.n_chains < 1 {
            return Err((Some("n_chains"), "n_chains must be at least 1".into()));
        }
        if let Some(t) = &self.theta0 {
            let d = by_name(&self.problem).map_err(|e| (Some("problem"), e.to_string()))?.dim();
            if t.len() != d {
                return Err((
                    Some("theta0"),
                    format!("theta0 has length {}, problem {} has dimension {d}", t.len(), self.problem),
                ));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err((Some("theta0"), "theta0 must be finite".into()));
            }
        }
        let p = &self.sampler_params;
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err((Some("delta"), format!("delta must lie in (0, 1), got {}", p.delta)));
        }
        if p.hmc_t == 0 {
            return Err((Some("hmc_T"), "hmc_T must be at least 1".into()));
        }
        if p.max_tree_depth == 0 {
            return Err((Some("max_tree_depth"), "max_tree_depth must be at least 1".into()));
        }
        if p.proposal_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err((Some("proposal_scale"), "proposal_scale must be positive".into()));
        }
        let s = &self.surrogate;
        if s.n_test == 0 {
            return Err((Some("n_test"), "n_test must be at least 1".into()));
        }
        if !(s.mse_threshold > 0.0) {
            return Err((Some("mse_threshold"), "mse_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json_str(r#"{"problem": "rosenbrock", "sampler": "mfnuts"}"#).unwrap();
        assert_eq!(c.m_adapt, 2000);
        assert_eq!(c.m_samples, 10_000);
        assert_eq!(c.n_chains, 1);
        assert_eq!(c.surrogate.n_test, 200);
        assert_eq!(c.surrogate.variant, VariantChoice::Auto);
        assert_eq!(c.sampler_params.hmc_t, 10);
        assert_eq!(c.sampler_params.max_tree_depth, 10);
        assert_eq!(c.sampler_params.delta, 0.65);
    }

    #[test]
    fn unknown_field_reports_its_line() {
        let text = "{\n  \"problem\": \"rosenbrock\",\n  \"sampler\": \"mh\",\n  \"m_samplez\": 5\n}";
        let e = ExperimentConfig::from_json_str(text).unwrap_err();
        assert_eq!(e.line, 4, "{e}");
        assert!(e.message.contains("m_samplez"));
    }

    #[test]
    fn nested_unknown_field_rejected() {
        let text = r#"{"problem": "rosenbrock", "sampler": "mh", "sampler_params": {"hmc_t": 3}}"#;
        assert!(ExperimentConfig::from_json_str(text).is_err());
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let text = "{\n  \"problem\": \"rosenbrock\",\n  \"sampler\": \"mh\",\n  \"m_samples\": 0\n}";
        let e = ExperimentConfig::from_json_str(text).unwrap_err();
        assert_eq!(e.line, 4);
        let text = "{\"problem\": \"banana\", \"sampler\": \"mh\"}";
        assert!(ExperimentConfig::from_json_str(text).unwrap_err().message.contains("unknown problem"));
    }

    #[test]
    fn theta0_dimension_checked() {
        let text = r#"{"problem": "gaussian8d", "sampler": "nuts", "theta0": [0.0, 1.0]}"#;
        let e = ExperimentConfig::from_json_str(text).unwrap_err();
        assert!(e.message.contains("dimension 8"), "{e}");
    }

    #[test]
    fn bad_sampler_rejected() {
        let text = r#"{"problem": "rosenbrock", "sampler": "gibbs"}"#;
        assert!(ExperimentConfig::from_json_str(text).is_err());
    }
}
