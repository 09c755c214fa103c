//! Log-density abstraction shared by problems, surrogates and samplers.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::optim::Bounds;

/// An unnormalized log density on `R^d`.
///
/// Implementations must be deterministic: the same `theta` always yields the
/// same value bit for bit.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> f64;

    /// Log density plus gradient written into `grad`.
    ///
    /// The default uses central differences, which costs `1 + 2d` density
    /// evaluations (see [`LogDensity::grad_cost`]).
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut x = theta.to_vec();
        for i in 0..theta.len() {
            let h = 1e-6 * theta[i].abs().max(1.0);
            x[i] = theta[i] + h;
            let fp = self.log_density(&x);
            x[i] = theta[i] - h;
            let fm = self.log_density(&x);
            x[i] = theta[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        self.log_density(theta)
    }

    /// Number of model evaluations charged for one call of
    /// [`LogDensity::log_density_grad`].
    fn grad_cost(&self) -> u64 {
        1 + 2 * self.dim() as u64
    }
}

impl<T: LogDensity + ?Sized> LogDensity for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_grad(theta, grad)
    }
    fn grad_cost(&self) -> u64 {
        (**self).grad_cost()
    }
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_grad(theta, grad)
    }
    fn grad_cost(&self) -> u64 {
        (**self).grad_cost()
    }
}

type DensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) -> f64 + Send + Sync;

/// Closure-backed density, handy for tests and ad-hoc targets.
pub struct FnDensity {
    dim: usize,
    f: Box<DensityFn>,
    grad: Option<Box<GradFn>>,
}

impl FnDensity {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { dim, f: Box::new(f), grad: None }
    }

    /// Attach an analytic gradient; `g` returns the log density and fills the gradient.
    pub fn with_grad(mut self, g: impl Fn(&[f64], &mut [f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.grad = Some(Box::new(g));
        self
    }

    /// Standard normal in `dim` dimensions with analytic gradient.
    pub fn std_normal(dim: usize) -> Self {
        Self::new(dim, |x| -0.5 * x.iter().map(|v| v * v).sum::<f64>()).with_grad(|x, g| {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = -xi;
            }
            -0.5 * x.iter().map(|v| v * v).sum::<f64>()
        })
    }
}

impl LogDensity for FnDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        match &self.grad {
            Some(g) => g(theta, grad),
            None => {
                let mut x = theta.to_vec();
                for i in 0..theta.len() {
                    let h = 1e-6 * theta[i].abs().max(1.0);
                    x[i] = theta[i] + h;
                    let fp = (self.f)(&x);
                    x[i] = theta[i] - h;
                    let fm = (self.f)(&x);
                    x[i] = theta[i];
                    grad[i] = (fp - fm) / (2.0 * h);
                }
                (self.f)(theta)
            }
        }
    }

    fn grad_cost(&self) -> u64 {
        if self.grad.is_some() {
            1
        } else {
            1 + 2 * self.dim as u64
        }
    }
}

/// Wraps a density and tallies model evaluations atomically, so that several
/// chains can share one budget ledger.
pub struct Counted<D: ?Sized> {
    count: AtomicU64,
    inner: Arc<D>,
}

impl<D: LogDensity + ?Sized> Counted<D> {
    pub fn new(inner: Arc<D>) -> Self {
        Self { count: AtomicU64::new(0), inner }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &Arc<D> {
        &self.inner
    }
}

impl<D: LogDensity + ?Sized> LogDensity for Counted<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.log_density(theta)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.count.fetch_add(self.inner.grad_cost(), Ordering::SeqCst);
        self.inner.log_density_grad(theta, grad)
    }

    fn grad_cost(&self) -> u64 {
        self.inner.grad_cost()
    }
}

/// `inner` continued outside a box: evaluated at the nearest point of the
/// box, minus `½ Σ (excess_i / s_i)²` with `s_i` a tenth of the box width.
///
/// Keeps a model that is only trustworthy on the box from extrapolating into
/// spurious modes, while leaving the density positive everywhere.
pub struct BoxGuard<D> {
    inner: D,
    bounds: Bounds,
}

impl<D: LogDensity> BoxGuard<D> {
    pub fn new(inner: D, bounds: Bounds) -> Self {
        Self { inner, bounds }
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn penalty(&self, theta: &[f64], clamped: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut pen = 0.0;
        let mut g = grad;
        for i in 0..theta.len() {
            let s = 0.1 * self.bounds.width(i);
            let z = (theta[i] - clamped[i]) / s;
            pen += 0.5 * z * z;
            if let Some(g) = g.as_deref_mut() {
                g[i] = if z == 0.0 { g[i] } else { -z / s };
            }
        }
        pen
    }
}

impl<D: LogDensity> LogDensity for BoxGuard<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        if self.bounds.contains(theta) {
            return self.inner.log_density(theta);
        }
        let mut c = theta.to_vec();
        self.bounds.clamp(&mut c);
        self.inner.log_density(&c) - self.penalty(theta, &c, None)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        if self.bounds.contains(theta) {
            return self.inner.log_density_grad(theta, grad);
        }
        let mut c = theta.to_vec();
        self.bounds.clamp(&mut c);
        let v = self.inner.log_density_grad(&c, grad);
        v - self.penalty(theta, &c, Some(grad))
    }

    fn grad_cost(&self) -> u64 {
        self.inner.grad_cost()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counted_tallies_gradient_cost() {
        let fd = Arc::new(FnDensity::new(3, |x| -x.iter().map(|v| v * v).sum::<f64>()));
        let c = Counted::new(fd);
        let mut g = vec![0.0; 3];
        c.log_density(&[0.0; 3]);
        c.log_density_grad(&[1.0, 2.0, 3.0], &mut g);
        assert_eq!(c.count(), 1 + 7);
        assert!((g[1] + 4.0).abs() < 1e-6);
    }

    #[test]
    fn std_normal_gradient() {
        let d = FnDensity::std_normal(2);
        let mut g = vec![0.0; 2];
        let lp = d.log_density_grad(&[3.0, -4.0], &mut g);
        assert_eq!(lp, -12.5);
        assert_eq!(g, vec![-3.0, 4.0]);
        assert_eq!(d.grad_cost(), 1);
    }

    #[test]
    fn box_guard_continues_with_a_penalty() {
        let inner = FnDensity::std_normal(2);
        let g = BoxGuard::new(&inner, Bounds::cube(2, -1.0, 1.0).unwrap());
        assert_eq!(g.log_density(&[0.5, -1.0]), -0.625);
        // clamped to (1, 0): inner -0.5, excess 0.5 with scale 0.2
        assert!((g.log_density(&[1.5, 0.0]) - (-0.5 - 0.5 * 2.5f64.powi(2))).abs() < 1e-12);
        let mut grad = vec![0.0; 2];
        g.log_density_grad(&[1.5, 0.3], &mut grad);
        assert!((grad[0] - (-2.5 / 0.2)).abs() < 1e-12);
        assert_eq!(grad[1], -0.3);
        // FD outside the box, away from the kink
        let x = [1.7, -0.4];
        for i in 0..2 {
            let (mut a, mut b) = (x, x);
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (g.log_density(&a) - g.log_density(&b)) / 2e-6;
            g.log_density_grad(&x, &mut grad);
            assert!((grad[i] - fd).abs() < 1e-6, "{i}: {} vs {fd}", grad[i]);
        }
    }
}
