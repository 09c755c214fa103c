//! Exact Gaussian-process regression with squared-exponential and
//! NARGP-composite kernels.
//!
//! Targets are centered by their sample mean before conditioning (zero prior
//! mean on the residuals) and the mean is re-added at prediction.
//! Hyperparameters are trained by maximizing the log marginal likelihood in
//! log space with multi-start Nelder–Mead.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::optim::NelderMead;
use crate::twofold::Dd;

/// `k(x, y) = s² exp(-½ Σ_k (x_k - y_k)² / ℓ_k²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquaredExponential {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl SquaredExponential {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(signal_variance) || lengthscales.is_empty() || !lengthscales.iter().all(|&l| positive(l)) {
            return Err(Error::InvalidArgument(
                "squared-exponential kernel needs positive signal variance and lengthscales".into(),
            ));
        }
        Ok(Self { signal_variance, lengthscales })
    }

    pub fn isotropic(signal_variance: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(signal_variance, vec![lengthscale; dim])
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((a, b), l) in x.iter().zip(y).zip(&self.lengthscales) {
            let d = (a - b) / l;
            s += d * d;
        }
        self.signal_variance * (-0.5 * s).exp()
    }

    fn eval_dd(&self, x: &[f64], y: &[f64]) -> Dd {
        let mut s = Dd::ZERO;
        for ((a, b), l) in x.iter().zip(y).zip(&self.lengthscales) {
            s = s + Dd::diff(*a, *b).square().mul_f64(1.0 / (l * l));
        }
        s.mul_f64(-0.5).exp().mul_f64(self.signal_variance)
    }

    #[inline]
    fn eval_sq(&self, sq: &[f64]) -> f64 {
        let s: f64 = sq.iter().zip(&self.lengthscales).map(|(d2, l)| d2 / (l * l)).sum();
        self.signal_variance * (-0.5 * s).exp()
    }

    /// `out += scale * ∂k/∂x` given `k = k(x, y)`.
    #[inline]
    fn add_grad_x(&self, x: &[f64], y: &[f64], k: f64, scale: f64, out: &mut [f64]) {
        for (((o, a), b), l) in out.iter_mut().zip(x).zip(y).zip(&self.lengthscales) {
            *o -= scale * k * (a - b) / (l * l);
        }
    }
}

/// Covariance function over GP inputs.
///
/// `NargpComposite` splits its input as `[features | θ]` at `split` and
/// evaluates `k_f(f, f')·k_ρ(θ, θ') + k_δ(θ, θ')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    SquaredExponential(SquaredExponential),
    NargpComposite { split: usize, k_f: SquaredExponential, k_rho: SquaredExponential, k_delta: SquaredExponential },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParamKind {
    Signal,
    Lengthscale(usize),
}

impl Kernel {
    pub fn se(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Ok(Kernel::SquaredExponential(SquaredExponential::new(signal_variance, lengthscales)?))
    }

    pub fn nargp(k_f: SquaredExponential, k_rho: SquaredExponential, k_delta: SquaredExponential) -> Result<Self> {
        if k_rho.dim() != k_delta.dim() {
            return Err(Error::InvalidArgument("k_rho and k_delta must share the θ dimension".into()));
        }
        Ok(Kernel::NargpComposite { split: k_f.dim(), k_f, k_rho, k_delta })
    }

    /// Unit-hyperparameter template for a composite kernel over
    /// `n_features` fused outputs followed by `dim` parameters.
    pub fn nargp_template(n_features: usize, dim: usize) -> Self {
        let unit = |n| SquaredExponential { signal_variance: 1.0, lengthscales: vec![1.0; n] };
        Kernel::NargpComposite { split: n_features, k_f: unit(n_features), k_rho: unit(dim), k_delta: unit(dim) }
    }

    pub fn se_template(dim: usize) -> Self {
        Kernel::SquaredExponential(SquaredExponential { signal_variance: 1.0, lengthscales: vec![1.0; dim] })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Kernel::SquaredExponential(k) => k.dim(),
            Kernel::NargpComposite { split, k_rho, .. } => split + k_rho.dim(),
        }
    }

    pub fn kernel_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.input_dim(), y.len())?;
        Ok(self.eval(x, y))
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::SquaredExponential(k) => k.eval(x, y),
            Kernel::NargpComposite { split, k_f, k_rho, k_delta } => {
                let (xf, xt) = x.split_at(*split);
                let (yf, yt) = y.split_at(*split);
                k_f.eval(xf, yf) * k_rho.eval(xt, yt) + k_delta.eval(xt, yt)
            }
        }
    }

    fn eval_dd(&self, x: &[f64], y: &[f64]) -> Dd {
        match self {
            Kernel::SquaredExponential(k) => k.eval_dd(x, y),
            Kernel::NargpComposite { split, k_f, k_rho, k_delta } => {
                let (xf, xt) = x.split_at(*split);
                let (yf, yt) = y.split_at(*split);
                k_f.eval_dd(xf, yf) * k_rho.eval_dd(xt, yt) + k_delta.eval_dd(xt, yt)
            }
        }
    }

    #[inline]
    fn eval_sq(&self, sq: &[f64]) -> f64 {
        match self {
            Kernel::SquaredExponential(k) => k.eval_sq(sq),
            Kernel::NargpComposite { split, k_f, k_rho, k_delta } => {
                let (sf, st) = sq.split_at(*split);
                k_f.eval_sq(sf) * k_rho.eval_sq(st) + k_delta.eval_sq(st)
            }
        }
    }

    /// Returns `k(x, y)` and accumulates `scale * ∂k(x, y)/∂x` into `out`.
    #[inline]
    fn eval_add_grad(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) -> f64 {
        match self {
            Kernel::SquaredExponential(k) => {
                let v = k.eval(x, y);
                k.add_grad_x(x, y, v, scale, out);
                v
            }
            Kernel::NargpComposite { split, k_f, k_rho, k_delta } => {
                let (xf, xt) = x.split_at(*split);
                let (yf, yt) = y.split_at(*split);
                let (of, ot) = out.split_at_mut(*split);
                let kf = k_f.eval(xf, yf);
                let kr = k_rho.eval(xt, yt);
                let kd = k_delta.eval(xt, yt);
                k_f.add_grad_x(xf, yf, kf, scale * kr, of);
                k_rho.add_grad_x(xt, yt, kr, scale * kf, ot);
                k_delta.add_grad_x(xt, yt, kd, scale, ot);
                kf * kr + kd
            }
        }
    }

    /// `k(x, x)`, independent of `x` for stationary kernels.
    pub fn prior_variance(&self) -> f64 {
        match self {
            Kernel::SquaredExponential(k) => k.signal_variance,
            Kernel::NargpComposite { k_f, k_rho, k_delta, .. } => {
                k_f.signal_variance * k_rho.signal_variance + k_delta.signal_variance
            }
        }
    }

    // k_rho's signal variance is not trained: it is redundant with k_f's.
    fn param_kinds(&self) -> Vec<ParamKind> {
        let ls = |offset: usize, n: usize| (0..n).map(move |j| ParamKind::Lengthscale(offset + j));
        match self {
            Kernel::SquaredExponential(k) => std::iter::once(ParamKind::Signal).chain(ls(0, k.dim())).collect(),
            Kernel::NargpComposite { split, k_f, k_rho, k_delta } => std::iter::once(ParamKind::Signal)
                .chain(ls(0, k_f.dim()))
                .chain(ls(*split, k_rho.dim()))
                .chain(std::iter::once(ParamKind::Signal))
                .chain(ls(*split, k_delta.dim()))
                .collect(),
        }
    }

    fn log_params(&self) -> Vec<f64> {
        let se = |k: &SquaredExponential, with_signal: bool, out: &mut Vec<f64>| {
            if with_signal {
                out.push(k.signal_variance.ln());
            }
            out.extend(k.lengthscales.iter().map(|l| l.ln()));
        };
        let mut out = Vec::new();
        match self {
            Kernel::SquaredExponential(k) => se(k, true, &mut out),
            Kernel::NargpComposite { k_f, k_rho, k_delta, .. } => {
                se(k_f, true, &mut out);
                se(k_rho, false, &mut out);
                se(k_delta, true, &mut out);
            }
        }
        out
    }

    fn with_log_params(&self, p: &[f64]) -> Kernel {
        let mut it = p.iter().map(|v| v.exp());
        let mut se = |k: &SquaredExponential, with_signal: bool| SquaredExponential {
            signal_variance: if with_signal { it.next().unwrap() } else { k.signal_variance },
            lengthscales: k.lengthscales.iter().map(|_| it.next().unwrap()).collect(),
        };
        match self {
            Kernel::SquaredExponential(k) => Kernel::SquaredExponential(se(k, true)),
            Kernel::NargpComposite { split, k_f, k_rho, k_delta } => {
                let k_f = se(k_f, true);
                let k_rho = se(k_rho, false);
                let k_delta = se(k_delta, true);
                Kernel::NargpComposite { split: *split, k_f, k_rho, k_delta }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    Fixed(f64),
    /// Trained jointly with the kernel, never below `floor`.
    Learned {
        floor: f64,
    },
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub n_starts: usize,
    /// Objective evaluations per start; `None` means `100 * (n_params + 1)`.
    pub max_evals: Option<usize>,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Extra start at these hyperparameters (kernel, noise variance).
    pub warm_start: Option<(Kernel, f64)>,
    /// Hyperparameters are trained on a random subset of at most this many
    /// points; the final model is conditioned on all data.
    pub max_hyperopt_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_evals: None,
            noise: NoiseModel::Learned { floor: 1e-10 },
            seed: 0,
            warm_start: None,
            max_hyperopt_points: 200,
        }
    }
}

/// Record of a hyperparameter search, in log-marginal-likelihood units on
/// the points used for training.
#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub start_values: Vec<f64>,
    pub best_value: f64,
    pub evals: usize,
    pub degenerate_targets: bool,
}

/// A conditioned Gaussian process. Immutable once built.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GpModelData", into = "GpModelData")]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    target_mean: f64,
    kernel: Kernel,
    noise_variance: f64,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    fit: Option<FitSummary>,
}

#[derive(Clone, Serialize, Deserialize)]
struct GpModelData {
    kernel: Kernel,
    noise_variance: f64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl From<GpModel> for GpModelData {
    fn from(m: GpModel) -> Self {
        Self { kernel: m.kernel, noise_variance: m.noise_variance, inputs: m.inputs, targets: m.targets }
    }
}

impl TryFrom<GpModelData> for GpModel {
    type Error = Error;
    fn try_from(d: GpModelData) -> Result<Self> {
        GpModel::condition(d.inputs, d.targets, d.kernel, d.noise_variance)
    }
}

fn gram(kernel: &Kernel, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `K + (noise + jitter) I`, escalating jitter ×10 from
/// `1e-10` to `1e-4` times the mean diagonal.
fn factor(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let scale = {
        let s = k.trace() / n as f64;
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    };
    let mut jitter = 1e-10 * scale;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += noise + jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
        if jitter > 1.0001e-4 * scale {
            return Err(Error::SingularKernel { jitter: jitter / 10.0 });
        }
    }
}

fn half_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum()
}

fn lml_from(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    -0.5 * y.dot(alpha) - half_log_det(chol) - 0.5 * n * (2.0 * PI).ln()
}

impl GpModel {
    /// Exact GP posterior for fixed hyperparameters.
    pub fn condition(inputs: Vec<Vec<f64>>, targets: Vec<f64>, kernel: Kernel, noise_variance: f64) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::InvalidArgument("GP needs at least one training point".into()));
        }
        check_dim(n, targets.len())?;
        for x in &inputs {
            check_dim(kernel.input_dim(), x.len())?;
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {noise_variance}")));
        }
        let target_mean = targets.iter().sum::<f64>() / n as f64;
        let y = DVector::from_iterator(n, targets.iter().map(|t| t - target_mean));
        let k = gram(&kernel, &inputs);
        let (chol, jitter) = factor(&k, noise_variance)?;
        let alpha = chol.solve(&y);
        Ok(Self { inputs, targets, target_mean, kernel, noise_variance, jitter, chol, alpha, fit: None })
    }

    /// Same hyperparameters, new data.
    pub fn recondition(&self, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        Self::condition(inputs, targets, self.kernel.clone(), self.noise_variance)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn fit_summary(&self) -> Option<&FitSummary> {
        self.fit.as_ref()
    }

    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    fn kvec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.kernel.eval(x, xi)))
    }

    /// Posterior mean, summed in double-double so that it is smooth in `x`
    /// down to rounding of the final result.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        let mut m = Dd::from_f64(self.target_mean);
        for (xi, a) in self.inputs.iter().zip(self.alpha.iter()) {
            m = m + self.kernel.eval_dd(x, xi).mul_f64(*a);
        }
        m.to_f64()
    }

    /// Plain double-precision posterior mean.
    pub(crate) fn predict_mean_fast(&self, x: &[f64]) -> f64 {
        let mut m = self.target_mean;
        for (xi, a) in self.inputs.iter().zip(self.alpha.iter()) {
            m += a * self.kernel.eval(x, xi);
        }
        m
    }

    /// Posterior mean and latent variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.input_dim(), x.len())?;
        Ok((self.predict_mean(x), self.predict_variance(x)))
    }

    pub(crate) fn predict_variance(&self, x: &[f64]) -> f64 {
        let k = self.kvec(x);
        let prior = self.kernel.prior_variance();
        let v = self.chol.l_dirty().solve_lower_triangular(&k).expect("Cholesky factor has a positive diagonal");
        (prior - v.norm_squared()).clamp(0.0, prior + self.noise_variance)
    }

    /// Gradient of the posterior mean with respect to the input.
    pub fn predict_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.predict_mean_grad(x).1)
    }

    /// Posterior mean and its input gradient in one pass.
    pub fn predict_mean_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; x.len()];
        let mut m = self.target_mean;
        for (xi, a) in self.inputs.iter().zip(self.alpha.iter()) {
            m += a * self.kernel.eval_add_grad(x, xi, *a, &mut grad);
        }
        (m, grad)
    }

    /// `-½ yᵀα - Σ log L_ii - (n/2) log 2π` on the centered targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_iterator(self.targets.len(), self.targets.iter().map(|t| t - self.target_mean));
        lml_from(&self.chol, &y, &self.alpha)
    }
}

/// Pairwise per-dimension squared differences, cached for the hyperparameter search.
struct PairCache {
    n: usize,
    p: usize,
    sq: Vec<f64>,
}

impl PairCache {
    fn new(inputs: &[&Vec<f64>]) -> Self {
        let n = inputs.len();
        let p = inputs[0].len();
        let mut sq = Vec::with_capacity(n * (n + 1) / 2 * p);
        for i in 0..n {
            for j in 0..=i {
                sq.extend(inputs[i].iter().zip(inputs[j].iter()).map(|(a, b)| (a - b) * (a - b)));
            }
        }
        Self { n, p, sq }
    }

    fn gram(&self, kernel: &Kernel) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.n, self.n);
        let mut chunks = self.sq.chunks_exact(self.p);
        for i in 0..self.n {
            for j in 0..=i {
                let v = kernel.eval_sq(chunks.next().unwrap());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Train hyperparameters of `template` on `(inputs, targets)` by multi-start
/// maximization of the log marginal likelihood, then condition on all data.
///
/// Starts are drawn log-uniformly: lengthscales in `[1e-2, 1e1]` times the
/// input range per dimension, signal variances in `[1e-2, 1e2]` times the
/// target variance.
pub fn gp_fit(inputs: Vec<Vec<f64>>, targets: Vec<f64>, template: &Kernel, opts: &FitOptions) -> Result<GpModel> {
    let n = inputs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("GP needs at least one training point".into()));
    }
    check_dim(n, targets.len())?;
    let p = template.input_dim();
    for x in &inputs {
        check_dim(p, x.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let subset: Vec<usize> = if n > opts.max_hyperopt_points {
        let mut idx = sample(&mut rng, n, opts.max_hyperopt_points).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let sub_x: Vec<&Vec<f64>> = subset.iter().map(|&i| &inputs[i]).collect();
    let sub_t: Vec<f64> = subset.iter().map(|&i| targets[i]).collect();
    let mean = sub_t.iter().sum::<f64>() / sub_t.len() as f64;
    let y = DVector::from_iterator(sub_t.len(), sub_t.iter().map(|t| t - mean));
    let raw_var = y.norm_squared() / y.len() as f64;
    let degenerate = !(raw_var > 0.0 && raw_var.is_finite());
    let var = if degenerate { 1.0 } else { raw_var };

    let ranges: Vec<f64> = (0..p)
        .map(|j| {
            let (lo, hi) =
                sub_x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[j]), hi.max(x[j])));
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        })
        .collect();

    let kinds = template.param_kinds();
    let n_kernel = kinds.len();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for k in &kinds {
        let (l, h) = match k {
            ParamKind::Signal => (1e-6 * var, 1e6 * var),
            ParamKind::Lengthscale(j) => (1e-3 * ranges[*j], 1e3 * ranges[*j]),
        };
        lo.push(l.ln());
        hi.push(h.ln());
    }
    let learned_floor = match opts.noise {
        NoiseModel::Learned { floor } => {
            let floor = floor.max(f64::MIN_POSITIVE);
            lo.push(floor.ln());
            hi.push(var.max(floor).ln());
            Some(floor)
        }
        NoiseModel::Fixed(v) if !(v >= 0.0 && v.is_finite()) => {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {v}")));
        }
        NoiseModel::Fixed(_) => None,
    };
    let n_params = lo.len();

    let unpack = |q: &[f64]| -> (Kernel, f64) {
        let kernel = template.with_log_params(&q[..n_kernel]);
        let noise = match (&opts.noise, learned_floor) {
            (NoiseModel::Fixed(v), _) => *v,
            (_, Some(floor)) => q[n_kernel].exp().max(floor),
            _ => unreachable!(),
        };
        (kernel, noise)
    };

    let cache = PairCache::new(&sub_x);
    let objective = |q: &[f64]| -> f64 {
        let mut penalty = 0.0;
        let clamped: Vec<f64> = q
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(v, (l, h))| {
                let c = v.clamp(*l, *h);
                penalty += (v - c) * (v - c);
                c
            })
            .collect();
        let (kernel, noise) = unpack(&clamped);
        let k = cache.gram(&kernel);
        match factor(&k, noise) {
            Ok((chol, _)) => {
                let alpha = chol.solve(&y);
                -lml_from(&chol, &y, &alpha) + 100.0 * penalty
            }
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some((k, noise)) = &opts.warm_start {
        if k.param_kinds() == kinds {
            let mut q = k.log_params();
            if learned_floor.is_some() {
                q.push(noise.max(f64::MIN_POSITIVE).ln());
            }
            for (v, (l, h)) in q.iter_mut().zip(lo.iter().zip(&hi)) {
                *v = v.clamp(*l, *h);
            }
            starts.push(q);
        }
    }
    let log_uniform = |rng: &mut ChaCha8Rng, a: f64, b: f64| a.ln() + (b.ln() - a.ln()) * rng.random::<f64>();
    for _ in 0..opts.n_starts {
        let mut q: Vec<f64> = kinds
            .iter()
            .map(|k| match k {
                ParamKind::Signal => log_uniform(&mut rng, 1e-2 * var, 1e2 * var),
                ParamKind::Lengthscale(j) => log_uniform(&mut rng, 1e-2 * ranges[*j], 1e1 * ranges[*j]),
            })
            .collect();
        if let Some(floor) = learned_floor {
            let a = (1e-8 * var).max(floor);
            let b = (1e-2 * var).max(a);
            q.push(log_uniform(&mut rng, a, b));
        }
        starts.push(q);
    }
    if starts.is_empty() {
        starts.push(vec![0.0; n_params]);
    }

    let nm = NelderMead { max_evals: opts.max_evals.unwrap_or(100 * (n_params + 1)), ftol: 1e-9, xtol: 1e-7 };
    let step = vec![1.0; n_params];
    let mut start_values = Vec::with_capacity(starts.len());
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evals = 0;
    for s in &starts {
        start_values.push(-objective(s));
        let m = nm.minimize(objective, s, &step);
        evals += m.evals;
        if best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
    }
    let (q, value) = best.expect("at least one start");
    let clamped: Vec<f64> = q.iter().zip(lo.iter().zip(&hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
    let (kernel, noise) = unpack(&clamped);
    let mut model = GpModel::condition(inputs, targets, kernel, noise)?;
    model.fit = Some(FitSummary { start_values, best_value: -value, evals, degenerate_targets: degenerate });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn se1() -> Kernel {
        Kernel::se(1.0, vec![1.0]).unwrap()
    }

    /// Direct GP equations via Gaussian elimination, independent of the Cholesky path.
    fn oracle_mean(kernel: &Kernel, noise: f64, xs: &[Vec<f64>], ys: &[f64], x: &[f64]) -> f64 {
        let n = xs.len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| kernel.eval(&xs[i], &xs[j])).collect();
                row[i] += noise;
                row.push(ys[i] - mean);
                row
            })
            .collect();
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    let pivot = a[c].clone();
                    for (x, p) in a[r].iter_mut().zip(&pivot).skip(c) {
                        *x -= f * p;
                    }
                }
            }
        }
        let w: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
        mean + (0..n).map(|i| w[i] * kernel.eval(x, &xs[i])).sum::<f64>()
    }

    #[test]
    fn se_kernel_values() {
        let k = Kernel::se(1.0, vec![1.0, 1.0]).unwrap();
        assert_eq!(k.kernel_eval(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        let v = se1().kernel_eval(&[0.0], &[2f64.sqrt()]).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn nargp_kernel_at_zero_distance() {
        let unit = SquaredExponential::new(1.0, vec![1.0]).unwrap();
        let unit2 = SquaredExponential::new(1.0, vec![1.0, 1.0]).unwrap();
        let k = Kernel::nargp(unit, unit2.clone(), unit2).unwrap();
        assert_eq!(k.input_dim(), 3);
        let x = [0.4, -1.0, 2.0];
        assert_eq!(k.kernel_eval(&x, &x).unwrap(), 2.0);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        assert!(matches!(se1().kernel_eval(&[0.0, 1.0], &[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(Kernel::se(-1.0, vec![1.0]).is_err());
        assert!(Kernel::se(1.0, vec![0.0]).is_err());
    }

    #[test]
    fn log_param_roundtrip() {
        let k = Kernel::nargp(
            SquaredExponential::new(2.0, vec![0.5]).unwrap(),
            SquaredExponential::new(1.0, vec![0.3, 4.0]).unwrap(),
            SquaredExponential::new(0.1, vec![1.5, 2.5]).unwrap(),
        )
        .unwrap();
        let p = k.log_params();
        assert_eq!(p.len(), k.param_kinds().len());
        let back = k.with_log_params(&p);
        assert!(
            (back.kernel_eval(&[1.0, 0.2, 0.3], &[0.0, 0.1, -0.4]).unwrap()
                - k.kernel_eval(&[1.0, 0.2, 0.3], &[0.0, 0.1, -0.4]).unwrap())
            .abs()
                < 1e-12
        );
    }

    #[test]
    fn single_point_interpolation() {
        let m = gp_fit(
            vec![vec![0.0]],
            vec![2.0],
            &Kernel::se_template(1),
            &FitOptions { noise: NoiseModel::Fixed(0.0), ..Default::default() },
        )
        .unwrap();
        let (mean, var) = m.predict(&[0.0]).unwrap();
        assert!((mean - 2.0).abs() <= 1e-8);
        assert!(var <= 1e-8);
        assert!(m.fit_summary().unwrap().degenerate_targets);
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.2]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin()).collect();
        let m = gp_fit(xs, ys, &Kernel::se_template(1), &FitOptions::default()).unwrap();
        let Kernel::SquaredExponential(k) = m.kernel() else { unreachable!() };
        let far = 1000.0 * k.lengthscales[0] + 1.0;
        let (mean, var) = m.predict(&[far]).unwrap();
        assert!((mean - m.target_mean()).abs() < 1e-6);
        assert!((var - k.signal_variance).abs() < 1e-6 * k.signal_variance.max(1.0));
    }

    #[test]
    fn symmetric_data_gives_symmetric_mean() {
        let xs: Vec<Vec<f64>> = [-2.0, -1.0, -0.3, 0.3, 1.0, 2.0].iter().map(|&x| vec![x]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] * x[0]).cos()).collect();
        let m = gp_fit(xs, ys, &Kernel::se_template(1), &FitOptions::default()).unwrap();
        for x in [0.1, 0.5, 1.3, 2.7] {
            let a = m.predict(&[x]).unwrap().0;
            let b = m.predict(&[-x]).unwrap().0;
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        // unique peak of the symmetric mean sits at 0
        assert!(m.predict_grad(&[0.0]).unwrap()[0].abs() < 1e-6);
    }

    #[test]
    fn training_point_has_zero_variance() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.5]];
        let ys = vec![1.0, -1.0, 0.5];
        let m = GpModel::condition(xs.clone(), ys.clone(), se1(), 0.0).unwrap();
        assert!(m.jitter() <= 1e-10);
        for (x, y) in xs.iter().zip(&ys) {
            let (mean, var) = m.predict(x).unwrap();
            assert!((mean - y).abs() <= 1e-6);
            assert!(var < 1e-8);
        }
    }

    #[test]
    fn midpoint_of_equal_targets_is_bounded() {
        let m = GpModel::condition(vec![vec![-1.0], vec![1.0]], vec![3.0, 3.0], se1(), 0.0).unwrap();
        let (mean, _) = m.predict(&[0.0]).unwrap();
        assert!((mean - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sin_holdout_matches_direct_oracle() {
        let xs: Vec<Vec<f64>> = [0.0, PI / 6.0, PI / 3.0, 2.0 * PI / 3.0, PI].iter().map(|&x| vec![x]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].sin()).collect();
        let m = gp_fit(xs.clone(), ys.clone(), &Kernel::se_template(1), &FitOptions::default()).unwrap();
        let (mean, _) = m.predict(&[PI / 2.0]).unwrap();
        let oracle = oracle_mean(m.kernel(), m.noise_variance() + m.jitter(), &xs, &ys, &[PI / 2.0]);
        assert!((mean - oracle).abs() < 1e-8, "{mean} vs oracle {oracle}");
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn cholesky_reconstructs_kernel() {
        let xs: Vec<Vec<f64>> = (0..15).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.61).cos()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[1]).collect();
        let kernel = Kernel::se(1.3, vec![0.7, 0.4]).unwrap();
        let m = GpModel::condition(xs.clone(), ys, kernel.clone(), 1e-6).unwrap();
        let l = m.cholesky_factor();
        let mut k = gram(&kernel, &xs);
        for i in 0..xs.len() {
            k[(i, i)] += 1e-6 + m.jitter();
        }
        let rel = (&l * l.transpose() - &k).norm() / k.norm();
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn lml_closed_forms() {
        let m = GpModel::condition(vec![vec![0.0]], vec![0.0], se1(), 0.0).unwrap();
        assert!((m.log_marginal_likelihood() + 0.5 * (2.0 * PI).ln()).abs() < 1e-9);
        assert!((m.log_marginal_likelihood() + 0.918939).abs() < 1e-6);

        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.5]).collect();
        let zero = GpModel::condition(xs.clone(), vec![0.0; 5], se1(), 1e-3).unwrap();
        let l = zero.cholesky_factor();
        let det_only = -l.diagonal().iter().map(|v| v.ln()).sum::<f64>() - 2.5 * (2.0 * PI).ln();
        assert!((zero.log_marginal_likelihood() - det_only).abs() < 1e-12);
    }

    #[test]
    fn lml_is_permutation_invariant() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64).sqrt(), (i as f64 * 1.3).sin()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] - 2.0 * x[1]).collect();
        let k = Kernel::se(2.0, vec![1.0, 0.5]).unwrap();
        let a = GpModel::condition(xs.clone(), ys.clone(), k.clone(), 1e-4).unwrap();
        let perm = [3, 7, 0, 5, 1, 6, 2, 4];
        let b = GpModel::condition(
            perm.iter().map(|&i| xs[i].clone()).collect(),
            perm.iter().map(|&i| ys[i]).collect(),
            k,
            1e-4,
        )
        .unwrap();
        assert!((a.log_marginal_likelihood() - b.log_marginal_likelihood()).abs() < 1e-10);
    }

    #[test]
    fn fit_never_worse_than_any_start() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0 * 4.0 - 2.0, (i as f64 * 0.9).cos()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0]).sin() + x[1] * x[1]).collect();
        let m = gp_fit(xs, ys, &Kernel::se_template(2), &FitOptions::default()).unwrap();
        let s = m.fit_summary().unwrap();
        assert_eq!(s.start_values.len(), 8);
        let lml = m.log_marginal_likelihood();
        for &v in &s.start_values {
            assert!(s.best_value >= v);
            assert!(lml >= v - 1e-9, "{lml} < start {v}");
        }
    }

    #[test]
    fn linear_data_gradient_matches_slope() {
        let xs: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64 / 24.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x[0] - 1.0).collect();
        let m = gp_fit(xs, ys, &Kernel::se_template(1), &FitOptions::default()).unwrap();
        for x in [0.25, 0.5, 0.75] {
            let g = m.predict_grad(&[x]).unwrap()[0];
            assert!((g - 3.0).abs() < 0.06, "slope {g} at {x}");
        }
    }

    fn assert_grad_matches_fd(m: &GpModel, x: &[f64]) {
        let g = m.predict_grad(x).unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (m.predict_mean(&xp) - m.predict_mean(&xm)) / (2.0 * h);
            if g[i].abs() > 1e-8 {
                assert!(
                    ((g[i] - fd) / g[i]).abs() < 1e-4 || (g[i] - fd).abs() < 1e-7,
                    "component {i}: {} vs fd {}",
                    g[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn composite_gradient_matches_fd() {
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.31;
                vec![t.sin() * 2.0, t.cos(), (t * 1.7).sin()]
            })
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[1].exp() + x[2]).collect();
        let m = gp_fit(xs, ys, &Kernel::nargp_template(1, 2), &FitOptions::default()).unwrap();
        for i in 0..10 {
            let t = i as f64 * 0.53 + 0.1;
            assert_grad_matches_fd(&m, &[t.cos(), (t * 0.7).sin(), t.sin() * 0.8]);
        }
    }

    #[test]
    fn serde_roundtrip_reproduces_predictions() {
        let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.4, (i as f64).sin()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] + x[1]).collect();
        let m = gp_fit(xs, ys, &Kernel::se_template(2), &FitOptions::default()).unwrap();
        let back: GpModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        let x = [0.77, -0.2];
        assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
    }

    proptest! {
        #[test]
        fn kernel_symmetry(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3)) {
            let k = Kernel::nargp(
                SquaredExponential::new(1.5, vec![0.7]).unwrap(),
                SquaredExponential::new(1.0, vec![0.9, 2.0]).unwrap(),
                SquaredExponential::new(0.3, vec![1.1, 0.4]).unwrap(),
            ).unwrap();
            prop_assert_eq!(k.kernel_eval(&a, &b).unwrap(), k.kernel_eval(&b, &a).unwrap());
        }

        #[test]
        fn gram_is_psd(pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 20)) {
            let k = Kernel::se(1.0, vec![0.8, 1.4]).unwrap();
            let mut g = gram(&k, &pts);
            for i in 0..20 { g[(i, i)] += 1e-8; }
            let eig = g.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e > 0.0), "{:?}", eig);
        }

        #[test]
        fn se_gradient_matches_fd(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 * 0.7).sin() * 2.0, (i as f64 * 0.3).cos() * 2.0]).collect();
            let ys: Vec<f64> = xs.iter().map(|p| (p[0] * p[1]).sin()).collect();
            let m = GpModel::condition(xs, ys, Kernel::se(1.0, vec![0.9, 1.2]).unwrap(), 1e-8).unwrap();
            assert_grad_matches_fd(&m, &[x, y]);
        }
    }
}
