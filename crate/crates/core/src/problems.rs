//! Benchmark fidelity stacks: a Rosenbrock pair, a correlated 8-d Gaussian
//! pair and a groundwater source-inversion problem.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::density::{Counted, FnDensity, LogDensity};
use crate::error::{Error, Result};
use crate::optim::Bounds;
use crate::pde::{probe, solve_poisson, source_field, SourceSpec};

/// A named problem with a low- and a high-fidelity log density, each behind
/// its own evaluation counter.
pub struct Problem {
    pub name: String,
    pub bounds: Bounds,
    pub low: Arc<Counted<dyn LogDensity>>,
    pub high: Arc<Counted<dyn LogDensity>>,
    pub true_parameters: Option<Vec<f64>>,
    /// Default `(n_high, n_low)` surrogate budget.
    pub default_budget: (usize, usize),
}

impl Problem {
    fn new(
        name: &str,
        bounds: Bounds,
        low: Arc<dyn LogDensity>,
        high: Arc<dyn LogDensity>,
        default_budget: (usize, usize),
    ) -> Self {
        Self {
            name: name.to_string(),
            bounds,
            low: Arc::new(Counted::new(low)),
            high: Arc::new(Counted::new(high)),
            true_parameters: None,
            default_budget,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }
}

pub const PROBLEM_NAMES: [&str; 3] = ["rosenbrock", "gaussian8d", "groundwater"];

pub fn by_name(name: &str) -> Result<Problem> {
    match name {
        "rosenbrock" => Ok(rosenbrock()),
        "gaussian8d" => Ok(gaussian8d()),
        "groundwater" => groundwater(GroundwaterConfig::default()),
        other => Err(Error::InvalidArgument(format!(
            "unknown problem {other:?}; expected one of {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

pub fn rosenbrock_low(t: &[f64]) -> f64 {
    -12.0 * (t[1] - t[0] * t[0] - 1.0).powi(2) - (t[0] - 1.0).powi(2)
}

pub fn rosenbrock_high(t: &[f64]) -> f64 {
    -50.0 * (t[1] - t[0] * t[0]).powi(2) - (t[0] - 1.0).powi(2)
}

/// Banana-shaped pair; the low fidelity is shifted up by one and less curved.
pub fn rosenbrock() -> Problem {
    let low = FnDensity::new(2, rosenbrock_low).with_grad(|t, g| {
        let u = t[1] - t[0] * t[0] - 1.0;
        g[0] = 48.0 * u * t[0] - 2.0 * (t[0] - 1.0);
        g[1] = -24.0 * u;
        rosenbrock_low(t)
    });
    let high = FnDensity::new(2, rosenbrock_high).with_grad(|t, g| {
        let u = t[1] - t[0] * t[0];
        g[0] = 200.0 * u * t[0] - 2.0 * (t[0] - 1.0);
        g[1] = -100.0 * u;
        rosenbrock_high(t)
    });
    let bounds = Bounds::new(vec![-2.0, -1.0], vec![2.0, 4.0]).expect("static bounds");
    Problem::new("rosenbrock", bounds, Arc::new(low), Arc::new(high), (50, 200))
}

/// Tridiagonal covariance with unit diagonal and 0.5 off the diagonal.
pub fn gaussian8d_covariance() -> DMatrix<f64> {
    DMatrix::from_fn(8, 8, |i, j| match i.abs_diff(j) {
        0 => 1.0,
        1 => 0.5,
        _ => 0.0,
    })
}

/// Zero-mean Gaussians: identity covariance (low) and the tridiagonal one (high).
pub fn gaussian8d() -> Problem {
    let cov = gaussian8d_covariance();
    let precision = cov.cholesky().expect("tridiagonal covariance is SPD").inverse();
    let quad = move |t: &[f64], g: Option<&mut [f64]>| {
        let x = DVector::from_column_slice(t);
        let px = &precision * &x;
        if let Some(g) = g {
            for (gi, v) in g.iter_mut().zip(px.iter()) {
                *gi = -v;
            }
        }
        -0.5 * x.dot(&px)
    };
    let quad = Arc::new(quad);
    let q1 = quad.clone();
    let high = FnDensity::new(8, move |t| q1(t, None)).with_grad(move |t, g| quad(t, Some(g)));
    let bounds = Bounds::cube(8, -4.0, 4.0).expect("static bounds");
    Problem::new("gaussian8d", bounds, Arc::new(FnDensity::std_normal(8)), Arc::new(high), (100, 500))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundwaterConfig {
    pub low_mesh: usize,
    pub high_mesh: usize,
    pub locations: Vec<[f64; 2]>,
    pub source_variance: f64,
    pub probes: Vec<[f64; 2]>,
    pub true_intensities: Vec<f64>,
    pub noise_variance: f64,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub data_seed: u64,
}

impl Default for GroundwaterConfig {
    fn default() -> Self {
        Self {
            low_mesh: 8,
            high_mesh: 64,
            locations: vec![[0.33, 0.33], [0.33, 0.67], [0.67, 0.33], [0.67, 0.67]],
            source_variance: 0.01,
            probes: [0.25, 0.5, 0.75].iter().flat_map(|&y| [0.25, 0.5, 0.75].map(|x| [x, y])).collect(),
            true_intensities: vec![0.75, 1.25, 0.8, 1.2],
            noise_variance: 0.005,
            prior_mean: 1.0,
            prior_variance: 1.0,
            data_seed: 0,
        }
    }
}

impl GroundwaterConfig {
    /// Probe readings of the flow field for source intensities `theta` on an
    /// `n × n` mesh.
    pub fn forward(&self, theta: &[f64], n: usize) -> Result<Vec<f64>> {
        let spec = SourceSpec::new(theta.to_vec(), self.locations.clone(), vec![self.source_variance; theta.len()])?;
        let u = solve_poisson(1.0, &source_field(&spec, n)?)?;
        probe(&u, &self.probes)
    }
}

/// Fine-mesh readings at the true intensities plus iid `N(0, noise_variance)`
/// noise drawn from `seed`.
pub fn generate_observations(cfg: &GroundwaterConfig, seed: u64, noise_variance: f64) -> Result<Vec<f64>> {
    let clean = cfg.forward(&cfg.true_intensities, cfg.high_mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = noise_variance.sqrt();
    Ok(clean.into_iter().map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Gaussian likelihood of the probe data times an isotropic Gaussian prior,
/// at one mesh resolution.
pub struct GroundwaterPosterior {
    cfg: GroundwaterConfig,
    mesh: usize,
    observations: Vec<f64>,
}

impl GroundwaterPosterior {
    pub fn new(cfg: GroundwaterConfig, mesh: usize, observations: Vec<f64>) -> Self {
        Self { cfg, mesh, observations }
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let pred = self.cfg.forward(theta, self.mesh)?;
        let sq: f64 = pred.iter().zip(&self.observations).map(|(p, y)| (y - p).powi(2)).sum();
        Ok(-sq / (2.0 * self.cfg.noise_variance))
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        -theta.iter().map(|t| (t - self.cfg.prior_mean).powi(2)).sum::<f64>() / (2.0 * self.cfg.prior_variance)
    }
}

impl LogDensity for GroundwaterPosterior {
    fn dim(&self) -> usize {
        self.cfg.locations.len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        match self.log_likelihood(theta) {
            Ok(l) => l + self.log_prior(theta),
            Err(e) => {
                log::warn!("forward solve failed at {theta:?}: {e}");
                f64::NAN
            }
        }
    }
}

pub fn groundwater(cfg: GroundwaterConfig) -> Result<Problem> {
    let y = generate_observations(&cfg, cfg.data_seed, cfg.noise_variance)?;
    let low = GroundwaterPosterior::new(cfg.clone(), cfg.low_mesh, y.clone());
    let high = GroundwaterPosterior::new(cfg.clone(), cfg.high_mesh, y);
    let bounds = Bounds::cube(cfg.locations.len(), 0.0, 2.0)?;
    let mut p = Problem::new("groundwater", bounds, Arc::new(low), Arc::new(high), (70, 450));
    p.true_parameters = Some(cfg.true_intensities.clone());
    Ok(p)
}
