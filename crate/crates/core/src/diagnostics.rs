//! Multivariate effective sample size and chain summaries.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::ChainRecord;

const JITTER: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mess {
    pub value: f64,
    /// A covariance needed jitter to factor.
    pub degenerate: bool,
}

fn mean_cov(samples: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let m = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        for (a, b) in mean.iter_mut().zip(s) {
            *a += b;
        }
    }
    mean /= m;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_iterator(d, s.iter().zip(mean.iter()).map(|(x, mu)| x - mu));
        cov.syger(1.0, &c, &c, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    if samples.len() > 1 {
        cov /= m - 1.0;
    }
    (mean, cov)
}

/// Log-determinant via Cholesky, retrying once with `1e-12·I`.
fn log_det(mut m: DMatrix<f64>, degenerate: &mut bool) -> Result<f64> {
    for attempt in 0..2 {
        if let Some(c) = Cholesky::new(m.clone()) {
            return Ok(2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>());
        }
        if attempt == 0 {
            *degenerate = true;
            for i in 0..m.nrows() {
                m[(i, i)] += JITTER;
            }
        }
    }
    Err(Error::DegenerateEstimator)
}

/// `M · (det Λ / det Σ)^{1/d}` with `Λ` the sample covariance and `Σ` the
/// batch-means estimate of the asymptotic covariance, batch size `⌊√M⌋`.
pub fn mess(samples: &[Vec<f64>]) -> Result<Mess> {
    let m = samples.len();
    let b = (m as f64).sqrt().floor() as usize;
    if m == 0 || m < 4 * b || m / b.max(1) < 2 {
        return Err(Error::InvalidArgument(format!("{m} samples are too few for batch means")));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidArgument("samples must share a nonzero dimension".into()));
    }
    let a = m / b;
    let (_, lambda) = mean_cov(samples);
    let batch_means: Vec<Vec<f64>> = (0..a)
        .map(|k| {
            let mut mu = vec![0.0; d];
            for s in &samples[k * b..(k + 1) * b] {
                for (x, v) in mu.iter_mut().zip(s) {
                    *x += v;
                }
            }
            mu.iter_mut().for_each(|x| *x /= b as f64);
            mu
        })
        .collect();
    // the batch covariance normalizes by a - 1, so scaling by b gives Σ
    let (_, sigma) = mean_cov(&batch_means);
    let sigma = sigma * b as f64;
    let mut degenerate = false;
    let ld_lambda = log_det(lambda, &mut degenerate)?;
    let ld_sigma = log_det(sigma, &mut degenerate)?;
    let value = m as f64 * ((ld_lambda - ld_sigma) / d as f64).exp();
    Ok(Mess { value, degenerate })
}

/// Cost of having drawn the first `len` samples of `record`, including
/// offline and adaptation evaluations.
pub fn prefix_cost(record: &ChainRecord, len: usize) -> u64 {
    let spent = if len == 0 { 0 } else { record.hf_evals_cumulative[len - 1] };
    record.offline_hf_evals + record.adapt_hf_evals + spent
}

/// mESS on `n_points` evenly spaced growing prefixes, as `(hf_evals, mess)`.
/// Prefixes too short for batch means are skipped.
pub fn mess_curve(record: &ChainRecord, n_points: usize) -> Vec<(u64, f64)> {
    let m = record.len();
    let n_points = n_points.max(1);
    let mut out = Vec::with_capacity(n_points);
    for k in 1..=n_points {
        let len = (m * k).div_ceil(n_points);
        if let Ok(v) = mess(&record.samples[..len]) {
            out.push((prefix_cost(record, len), v.value));
        }
    }
    out
}

/// mESS of the longest prefix whose total cost does not exceed `budget`.
pub fn mess_at_cost(record: &ChainRecord, budget: u64) -> Option<f64> {
    let affordable = (0..=record.len()).rev().find(|&l| prefix_cost(record, l) <= budget)?;
    mess(&record.samples[..affordable]).ok().map(|v| v.value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub mess: f64,
    pub mess_degenerate: bool,
    pub acceptance_rate: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub hf_evals_total: u64,
    pub offline_hf_evals: u64,
    pub adapt_hf_evals: u64,
    pub step_size: f64,
    pub divergences: u64,
    pub curve: Vec<(u64, f64)>,
}

pub fn summary(record: &ChainRecord, n_curve_points: usize) -> Result<MetricsReport> {
    if record.len() < 2 {
        return Err(Error::InvalidArgument("summary needs at least two samples".into()));
    }
    let (mean, cov) = mean_cov(&record.samples);
    let (mess_value, degenerate) = match mess(&record.samples) {
        Ok(v) => (v.value, v.degenerate),
        Err(_) => (f64::NAN, true),
    };
    Ok(MetricsReport {
        n_samples: record.len(),
        mess: mess_value,
        mess_degenerate: degenerate,
        acceptance_rate: record.acceptance_rate(),
        mean: mean.iter().copied().collect(),
        covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        hf_evals_total: record.total_hf_evals(),
        offline_hf_evals: record.offline_hf_evals,
        adapt_hf_evals: record.adapt_hf_evals,
        step_size: record.step_size,
        divergences: record.divergences,
        curve: mess_curve(record, n_curve_points),
    })
}
