//! Two-fidelity Gaussian-process surrogates of a log density.
//!
//! A GP on the cheap model feeds a second GP that learns the map from cheap
//! predictions (and `θ`) to the expensive model:
//!
//! - NARGP features: `[μ_low(θ), θ]`.
//! - GPDF features: `[μ_low(θ), μ_low(θ + τ e_i)…, μ_low(θ − τ e_i)…, θ]`,
//!   with `τ` one percent of the box width per axis.
//!
//! The cheap GP's posterior mean is plugged into the expensive GP, so the
//! surrogate and its chain-rule gradient are deterministic.

use std::sync::Arc;

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::error::{check_dim, Error, Result};
use crate::gp::{gp_fit, FitOptions, GpModel, Kernel};
use crate::optim::{latin_hypercube, Bounds, NelderMead};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Nargp,
    Gpdf,
}

impl Variant {
    pub fn other(self) -> Self {
        match self {
            Variant::Nargp => Variant::Gpdf,
            Variant::Gpdf => Variant::Nargp,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantChoice {
    #[default]
    Auto,
    Nargp,
    Gpdf,
}

/// Cheap and expensive log densities over a shared box.
#[derive(Clone)]
pub struct FidelityStack {
    pub low: Arc<dyn LogDensity>,
    pub high: Arc<dyn LogDensity>,
    pub bounds: Bounds,
}

impl FidelityStack {
    pub fn new(low: Arc<dyn LogDensity>, high: Arc<dyn LogDensity>, bounds: Bounds) -> Result<Self> {
        check_dim(bounds.dim(), low.dim())?;
        check_dim(bounds.dim(), high.dim())?;
        if !bounds.is_proper() {
            return Err(Error::InvalidArgument("fidelity stack needs lower < upper on every axis".into()));
        }
        Ok(Self { low, high, bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub low: u64,
    pub high: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub n_low: usize,
    pub n_high: usize,
    pub n_test: usize,
    pub mse_threshold: f64,
    pub variant: VariantChoice,
    pub seed: u64,
    /// Active-learning steps between hyperparameter refits of the fusion
    /// GP; in between it is only reconditioned.
    pub refit_every: usize,
}

impl BuildOptions {
    pub fn new(n_low: usize, n_high: usize) -> Self {
        Self { n_low, n_high, n_test: 200, mse_threshold: 1e-3, variant: VariantChoice::Auto, seed: 0, refit_every: 5 }
    }
}

/// A fitted two-level surrogate. Immutable after construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MfSurrogate {
    variant: Variant,
    low_gp: GpModel,
    high_gp: GpModel,
    /// Per-axis lag (GPDF); empty for NARGP.
    lag: Vec<f64>,
    bounds: Bounds,
    /// Test-set MSE; NaN when the model was fitted without a test set.
    #[serde(with = "nan_as_null")]
    pub validation_mse: f64,
    /// Test MSE of the losing candidate, when both were trained.
    pub rejected_mse: Option<f64>,
    /// Whether the MSE threshold was met before the budget ran out.
    pub converged: bool,
    /// Model evaluations spent building, including the test set.
    pub eval_counts: EvalCounts,
    pub warnings: Vec<String>,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn lag_for(variant: Variant, bounds: &Bounds) -> Vec<f64> {
    match variant {
        Variant::Nargp => Vec::new(),
        Variant::Gpdf => (0..bounds.dim()).map(|i| 0.01 * bounds.width(i)).collect(),
    }
}

fn n_fused(variant: Variant, dim: usize) -> usize {
    match variant {
        Variant::Nargp => 1,
        Variant::Gpdf => 1 + 2 * dim,
    }
}

/// Fusion-GP input for `theta`.
fn features(low_gp: &GpModel, lag: &[f64], theta: &[f64]) -> Vec<f64> {
    features_with(|x| low_gp.predict_mean(x), lag, theta)
}

/// Double-precision variant for training inputs and bulk validation.
fn features_fast(low_gp: &GpModel, lag: &[f64], theta: &[f64]) -> Vec<f64> {
    features_with(|x| low_gp.predict_mean_fast(x), lag, theta)
}

fn features_with(low_mean: impl Fn(&[f64]) -> f64, lag: &[f64], theta: &[f64]) -> Vec<f64> {
    let d = theta.len();
    let mut out = Vec::with_capacity(1 + 2 * lag.len() + d);
    out.push(low_mean(theta));
    for sign in [1.0, -1.0] {
        for (i, tau) in lag.iter().enumerate() {
            let mut shifted = theta.to_vec();
            shifted[i] += sign * tau;
            out.push(low_mean(&shifted));
        }
    }
    out.extend_from_slice(theta);
    out
}

impl MfSurrogate {
    /// Train both GPs of `variant` on the given data without active learning.
    pub fn fit(
        variant: Variant,
        bounds: Bounds,
        low: (Vec<Vec<f64>>, Vec<f64>),
        high: (Vec<Vec<f64>>, Vec<f64>),
        seed: u64,
    ) -> Result<Self> {
        let low_gp = gp_fit(low.0, low.1, &Kernel::se_template(bounds.dim()), &low_fit_options(seed))?;
        Self::fit_fusion(variant, bounds, low_gp, high.0, high.1, &fusion_fit_options(seed, None))
    }

    fn fit_fusion(
        variant: Variant,
        bounds: Bounds,
        low_gp: GpModel,
        high_x: Vec<Vec<f64>>,
        high_y: Vec<f64>,
        opts: &FitOptions,
    ) -> Result<Self> {
        let d = bounds.dim();
        check_dim(d, low_gp.input_dim())?;
        let lag = lag_for(variant, &bounds);
        let inputs: Vec<Vec<f64>> = high_x.iter().map(|x| features_fast(&low_gp, &lag, x)).collect();
        let template = Kernel::nargp_template(n_fused(variant, d), d);
        let high_gp = gp_fit(inputs, high_y, &template, opts)?;
        let mut warnings = Vec::new();
        for (name, gp) in [("low", &low_gp), ("fusion", &high_gp)] {
            if gp.fit_summary().is_some_and(|s| s.degenerate_targets) {
                warnings.push(format!("{name} GP trained on constant targets"));
            }
        }
        Ok(Self {
            variant,
            low_gp,
            high_gp,
            lag,
            bounds,
            validation_mse: f64::NAN,
            rejected_mse: None,
            converged: false,
            eval_counts: EvalCounts::default(),
            warnings,
        })
    }

    /// Same hyperparameters, new data for both levels.
    fn recondition(&self, low_gp: GpModel, high_x: &[Vec<f64>], high_y: Vec<f64>) -> Result<Self> {
        let inputs: Vec<Vec<f64>> = high_x.iter().map(|x| features_fast(&low_gp, &self.lag, x)).collect();
        let high_gp = self.high_gp.recondition(inputs, high_y)?;
        Ok(Self { low_gp, high_gp, ..self.clone() })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn lag(&self) -> &[f64] {
        &self.lag
    }

    pub fn low_gp(&self) -> &GpModel {
        &self.low_gp
    }

    pub fn high_gp(&self) -> &GpModel {
        &self.high_gp
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn features(&self, theta: &[f64]) -> Vec<f64> {
        features(&self.low_gp, &self.lag, theta)
    }

    pub fn logpdf(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.high_gp.predict_mean(&self.features(theta)))
    }

    /// Fusion-GP posterior variance at `theta`, with the cheap level
    /// entering through its mean.
    pub fn variance(&self, theta: &[f64]) -> f64 {
        self.high_gp.predict_variance(&features_fast(&self.low_gp, &self.lag, theta))
    }

    /// Surrogate value and chain-rule gradient.
    pub fn logpdf_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.value_grad(theta))
    }

    fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let d = theta.len();
        let mut feats = Vec::with_capacity(1 + 2 * self.lag.len() + d);
        let mut low_grads = Vec::with_capacity(1 + 2 * self.lag.len());
        let (m, g) = self.low_gp.predict_mean_grad(theta);
        feats.push(m);
        low_grads.push(g);
        for sign in [1.0, -1.0] {
            for (i, tau) in self.lag.iter().enumerate() {
                let mut shifted = theta.to_vec();
                shifted[i] += sign * tau;
                let (m, g) = self.low_gp.predict_mean_grad(&shifted);
                feats.push(m);
                low_grads.push(g);
            }
        }
        let k = feats.len();
        feats.extend_from_slice(theta);
        let (value, g_feat) = self.high_gp.predict_mean_grad(&feats);
        let mut grad = g_feat[k..].to_vec();
        for (dg_du, low_grad) in g_feat[..k].iter().zip(&low_grads) {
            for (out, dl) in grad.iter_mut().zip(low_grad) {
                *out += dg_du * dl;
            }
        }
        (value, grad)
    }

    pub fn mse(&self, test_x: &[Vec<f64>], test_y: &[f64]) -> f64 {
        let sq: f64 = test_x
            .iter()
            .zip(test_y)
            .map(|(x, y)| (self.high_gp.predict_mean_fast(&features_fast(&self.low_gp, &self.lag, x)) - y).powi(2))
            .sum();
        sq / test_x.len().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl LogDensity for MfSurrogate {
    fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.high_gp.predict_mean(&self.features(theta))
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (v, g) = self.value_grad(theta);
        grad.copy_from_slice(&g);
        v
    }

    fn grad_cost(&self) -> u64 {
        1
    }
}

/// Argmax of `variance` over `bounds` by Nelder–Mead from 32 Latin-hypercube
/// seeds. Iterates are clamped into the box.
pub fn maximize_variance(variance: impl Fn(&[f64]) -> f64, bounds: &Bounds, seed: u64) -> Vec<f64> {
    const STARTS: usize = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = latin_hypercube(STARTS, bounds, &mut rng);
    let step: Vec<f64> = (0..bounds.dim()).map(|i| 0.1 * bounds.width(i)).collect();
    let nm = NelderMead {
        max_evals: 40 * (bounds.dim() + 1),
        ftol: 1e-8,
        xtol: 1e-6 * step.iter().fold(0.0, |a: f64, b| a.max(*b)),
    };
    let objective = |x: &[f64]| {
        let mut c = x.to_vec();
        bounds.clamp(&mut c);
        -variance(&c)
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let m = nm.minimize(objective, s, &step);
        if best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
    }
    let (mut x, _) = best.expect("at least one start");
    bounds.clamp(&mut x);
    x
}

/// Next high-fidelity design point: highest fusion-GP variance in the box.
pub fn acquire_next_point(s: &MfSurrogate, bounds: &Bounds, seed: u64) -> Vec<f64> {
    maximize_variance(|x| s.variance(x), bounds, seed)
}

fn low_fit_options(seed: u64) -> FitOptions {
    FitOptions { seed, max_hyperopt_points: 150, ..Default::default() }
}

fn fusion_fit_options(seed: u64, warm: Option<&GpModel>) -> FitOptions {
    match warm {
        None => FitOptions { seed: seed ^ 0x5eed, ..Default::default() },
        Some(gp) => FitOptions {
            seed: seed ^ 0x5eed,
            n_starts: 1,
            warm_start: Some((gp.kernel().clone(), gp.noise_variance())),
            ..Default::default()
        },
    }
}

struct Counter<'a> {
    f: &'a dyn LogDensity,
    calls: u64,
}

impl Counter<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.calls += 1;
        let v = self.f.log_density(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidArgument(format!("non-finite model value at {x:?}")))
        }
    }
}

/// Builds a surrogate of `stack.high` within the given evaluation budgets.
///
/// Half of the expensive budget (at least `d + 2`) seeds a design nested in
/// a Latin-hypercube cheap design. Both variants are trained (unless one is
/// forced) and the one with lower test MSE is refined by variance-driven
/// active learning; each new point is evaluated by both models. The other
/// variant is then retrained on the final data and the better of the two is
/// returned. `n_test` uniform test points are evaluated by the expensive
/// model and counted in `eval_counts`.
pub fn build_mfgp(stack: &FidelityStack, opts: &BuildOptions) -> Result<MfSurrogate> {
    let d = stack.dim();
    if opts.n_high < d + 2 || opts.n_low < opts.n_high {
        return Err(Error::InvalidArgument(format!(
            "budgets need n_high >= {} and n_low >= n_high, got n_high={} n_low={}",
            d + 2,
            opts.n_high,
            opts.n_low
        )));
    }
    if !(opts.mse_threshold > 0.0) || opts.n_test == 0 {
        return Err(Error::InvalidArgument("mse_threshold must be positive and n_test nonzero".into()));
    }
    let bounds = &stack.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut low = Counter { f: stack.low.as_ref(), calls: 0 };
    let mut high = Counter { f: stack.high.as_ref(), calls: 0 };

    let n_high_init = (d + 2).max(opts.n_high / 2);
    let n_low_init = opts.n_low - (opts.n_high - n_high_init);
    let mut low_x = latin_hypercube(n_low_init, bounds, &mut rng);
    let mut low_y = low_x.iter().map(|x| low.eval(x)).collect::<Result<Vec<_>>>()?;
    let mut pick = sample(&mut rng, n_low_init, n_high_init).into_vec();
    pick.sort_unstable();
    let mut high_x: Vec<Vec<f64>> = pick.iter().map(|&i| low_x[i].clone()).collect();
    let mut high_y = high_x.iter().map(|x| high.eval(x)).collect::<Result<Vec<_>>>()?;
    let test_x: Vec<Vec<f64>> = (0..opts.n_test).map(|_| bounds.sample_uniform(&mut rng)).collect();
    let test_y = test_x.iter().map(|x| high.eval(x)).collect::<Result<Vec<_>>>()?;

    let mut low_gp = gp_fit(low_x.clone(), low_y.clone(), &Kernel::se_template(d), &low_fit_options(opts.seed))?;
    let variants: Vec<Variant> = match opts.variant {
        VariantChoice::Auto => vec![Variant::Nargp, Variant::Gpdf],
        VariantChoice::Nargp => vec![Variant::Nargp],
        VariantChoice::Gpdf => vec![Variant::Gpdf],
    };
    let fusion_opts = fusion_fit_options(opts.seed, None);
    let mut candidates = Vec::new();
    for &v in &variants {
        let mut s =
            MfSurrogate::fit_fusion(v, bounds.clone(), low_gp.clone(), high_x.clone(), high_y.clone(), &fusion_opts)?;
        s.validation_mse = s.mse(&test_x, &test_y);
        info!("initial {v:?} surrogate: test MSE {:.3e}", s.validation_mse);
        candidates.push(s);
    }
    candidates.sort_by(|a, b| a.validation_mse.total_cmp(&b.validation_mse));
    let mut current = candidates.swap_remove(0);

    let mut step = 0;
    while current.validation_mse > opts.mse_threshold && high_y.len() < opts.n_high {
        step += 1;
        let x = acquire_next_point(&current, bounds, opts.seed.wrapping_add(step as u64));
        high_y.push(high.eval(&x)?);
        low_y.push(low.eval(&x)?);
        high_x.push(x.clone());
        low_x.push(x);
        low_gp = low_gp.recondition(low_x.clone(), low_y.clone())?;
        let refit = step % opts.refit_every.max(1) == 0 || high_y.len() == opts.n_high;
        let mut next = if refit {
            let warm = fusion_fit_options(opts.seed.wrapping_add(step as u64), Some(current.high_gp()));
            MfSurrogate::fit_fusion(
                current.variant,
                bounds.clone(),
                low_gp.clone(),
                high_x.clone(),
                high_y.clone(),
                &warm,
            )?
        } else {
            current.recondition(low_gp.clone(), &high_x, high_y.clone())?
        };
        next.validation_mse = next.mse(&test_x, &test_y);
        current = next;
    }

    if opts.variant == VariantChoice::Auto {
        let other = current.variant.other();
        let mut alt = MfSurrogate::fit_fusion(
            other,
            bounds.clone(),
            low_gp.clone(),
            high_x.clone(),
            high_y.clone(),
            &fusion_opts,
        )?;
        alt.validation_mse = alt.mse(&test_x, &test_y);
        if alt.validation_mse < current.validation_mse {
            alt.rejected_mse = Some(current.validation_mse);
            current = alt;
        } else {
            current.rejected_mse = Some(alt.validation_mse);
        }
    }
    current.converged = current.validation_mse <= opts.mse_threshold;
    if !current.converged {
        let msg = format!(
            "evaluation budget exhausted with test MSE {:.3e} above threshold {:.1e}",
            current.validation_mse, opts.mse_threshold
        );
        warn!("{msg}");
        current.warnings.push(msg);
    }
    current.eval_counts = EvalCounts { low: low.calls, high: high.calls };
    info!(
        "selected {:?} surrogate: test MSE {:.3e}, {} low / {} high evaluations",
        current.variant, current.validation_mse, low.calls, high.calls
    );
    Ok(current)
}
