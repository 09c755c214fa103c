//! Steady groundwater flow `κ Δu = S` on the unit square with zero
//! Dirichlet boundary, discretized by the 5-point stencil.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Gaussian sources `S(x) = Σ θ_i N(x; μ_i, σ_i² I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub intensities: Vec<f64>,
    pub locations: Vec<[f64; 2]>,
    pub variances: Vec<f64>,
}

impl SourceSpec {
    pub fn new(intensities: Vec<f64>, locations: Vec<[f64; 2]>, variances: Vec<f64>) -> Result<Self> {
        check_dim(intensities.len(), locations.len())?;
        check_dim(intensities.len(), variances.len())?;
        if locations.iter().flatten().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return Err(Error::InvalidArgument("source locations must lie strictly inside the unit square".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("source variances must be positive".into()));
        }
        Ok(Self { intensities, locations, variances })
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let mut s = 0.0;
        for ((t, mu), v) in self.intensities.iter().zip(&self.locations).zip(&self.variances) {
            let r2 = (x - mu[0]).powi(2) + (y - mu[1]).powi(2);
            s += t / (2.0 * PI * v) * (-r2 / (2.0 * v)).exp();
        }
        s
    }
}

/// Values at the `(n-1)²` interior nodes, row-major with `x` varying
/// fastest. Node `(i, j)` sits at `((i+1)/n, (j+1)/n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!("mesh needs at least 4 cells per side, got {n}")));
        }
        Ok(Self { n, values: vec![0.0; (n - 1) * (n - 1)] })
    }

    /// Sample `f` at the interior nodes.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut field = Self::zeros(n)?;
        let m = n - 1;
        let h = 1.0 / n as f64;
        for j in 0..m {
            for i in 0..m {
                field.values[j * m + i] = f((i + 1) as f64 * h, (j + 1) as f64 * h);
            }
        }
        Ok(field)
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Value at grid node `(i, j)` for `0 ≤ i, j ≤ n`, zero on the boundary.
    pub fn node(&self, i: usize, j: usize) -> f64 {
        if i == 0 || j == 0 || i >= self.n || j >= self.n {
            0.0
        } else {
            self.values[(j - 1) * (self.n - 1) + (i - 1)]
        }
    }

    /// Interior grid as CSV, one mesh row per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.n - 1;
        for row in self.values.chunks(m) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

pub fn source_field(spec: &SourceSpec, n: usize) -> Result<Field> {
    Field::from_fn(n, |x, y| spec.eval(x, y))
}

/// `out = -Δ_h u` with zero boundary values.
fn neg_laplacian(u: &[f64], m: usize, inv_h2: f64, out: &mut [f64]) {
    for j in 0..m {
        for i in 0..m {
            let k = j * m + i;
            let mut s = 4.0 * u[k];
            if i > 0 {
                s -= u[k - 1];
            }
            if i + 1 < m {
                s -= u[k + 1];
            }
            if j > 0 {
                s -= u[k - m];
            }
            if j + 1 < m {
                s -= u[k + m];
            }
            out[k] = s * inv_h2;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `κ Δu = S` by conjugate gradients on the SPD system
/// `-Δ_h u = -S/κ`, to relative residual `1e-10`.
pub fn solve_poisson(kappa: f64, source: &Field) -> Result<Field> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("diffusion coefficient must be positive, got {kappa}")));
    }
    let n = source.n;
    let m = n - 1;
    let inv_h2 = (n * n) as f64;
    let b: Vec<f64> = source.values.iter().map(|s| -s / kappa).collect();
    let b_norm = dot(&b, &b).sqrt();
    let mut u = vec![0.0; m * m];
    if b_norm == 0.0 {
        return Ok(Field { n, values: u });
    }
    let tol = 1e-10 * b_norm;
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; m * m];
    let mut rr = dot(&r, &r);
    let max_iter = 10 * n * n;
    for _ in 0..max_iter {
        if rr.sqrt() <= tol {
            return Ok(Field { n, values: u });
        }
        neg_laplacian(&p, m, inv_h2, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for k in 0..u.len() {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
    }
    if rr.sqrt() <= tol {
        return Ok(Field { n, values: u });
    }
    Err(Error::SolverDiverged { iterations: max_iter, residual: rr.sqrt() / b_norm })
}

/// Bilinear interpolation of `field` at each location in `[0, 1]²`.
pub fn probe(field: &Field, locations: &[[f64; 2]]) -> Result<Vec<f64>> {
    let n = field.n;
    locations
        .iter()
        .map(|&[x, y]| {
            if !((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)) {
                return Err(Error::InvalidArgument(format!("probe ({x}, {y}) lies outside the unit square")));
            }
            let (gx, gy) = (x * n as f64, y * n as f64);
            let i = (gx.floor() as usize).min(n - 1);
            let j = (gy.floor() as usize).min(n - 1);
            let (tx, ty) = (gx - i as f64, gy - j as f64);
            Ok((1.0 - tx) * (1.0 - ty) * field.node(i, j)
                + tx * (1.0 - ty) * field.node(i + 1, j)
                + (1.0 - tx) * ty * field.node(i, j + 1)
                + tx * ty * field.node(i + 1, j + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(t: [f64; 4]) -> SourceSpec {
        SourceSpec::new(t.to_vec(), vec![[0.33, 0.33], [0.33, 0.67], [0.67, 0.33], [0.67, 0.67]], vec![0.01; 4])
            .unwrap()
    }

    fn manufactured(n: usize) -> (Field, f64) {
        let s = Field::from_fn(n, |x, y| -2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()).unwrap();
        let u = solve_poisson(1.0, &s).unwrap();
        let exact = Field::from_fn(n, |x, y| (PI * x).sin() * (PI * y).sin()).unwrap();
        let err = u.values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (u, err)
    }

    #[test]
    fn source_values() {
        assert!(source_field(&layout([0.0; 4]), 16).unwrap().values.iter().all(|&v| v == 0.0));
        let single = SourceSpec::new(vec![1.0], vec![[0.5, 0.5]], vec![0.01]).unwrap();
        let f = source_field(&single, 16).unwrap();
        assert!((f.node(8, 8) - 1.0 / (2.0 * PI * 0.01)).abs() < 1e-12);
        assert!((f.node(8, 8) - 15.9155).abs() < 1e-4);
        for j in 1..16 {
            for i in 1..16 {
                assert!((f.node(i, j) - f.node(16 - i, j)).abs() < 1e-12);
                assert!((f.node(i, j) - f.node(i, 16 - j)).abs() < 1e-12);
            }
        }
        assert!(SourceSpec::new(vec![1.0], vec![[1.0, 0.5]], vec![0.01]).is_err());
        assert!(Field::zeros(3).is_err());
    }

    #[test]
    fn zero_source_zero_solution() {
        let u = solve_poisson(1.0, &Field::zeros(8).unwrap()).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
        assert!(solve_poisson(0.0, &Field::zeros(8).unwrap()).is_err());
    }

    #[test]
    fn second_order_convergence() {
        let (_, e32) = manufactured(32);
        let (u64_, e64) = manufactured(64);
        assert!(e32 / e64 >= 3.5, "{e32} / {e64}");
        let centre = probe(&u64_, &[[0.5, 0.5]]).unwrap()[0];
        assert!((centre - 1.0).abs() <= 5e-3);
    }

    #[test]
    fn layout_symmetric_under_swap() {
        let u = solve_poisson(1.0, &source_field(&layout([1.0; 4]), 32).unwrap()).unwrap();
        for j in 1..32 {
            for i in 1..32 {
                assert!((u.node(i, j) - u.node(j, i)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn probes() {
        let f = Field::from_fn(8, |x, y| x + 10.0 * y).unwrap();
        let v = probe(&f, &[[0.25, 0.5], [0.0, 0.3], [1.0, 1.0], [0.3, 1.0]]).unwrap();
        assert!((v[0] - (0.25 + 5.0)).abs() < 1e-12);
        assert_eq!(&v[1..], &[0.0, 0.0, 0.0]);
        let mid = probe(&f, &[[0.3125, 0.5]]).unwrap()[0];
        assert!((mid - (0.3125 + 5.0)).abs() < 1e-12);
        assert!(probe(&f, &[[1.5, 0.0]]).is_err());
    }

    #[test]
    fn maximum_principle() {
        let neg = solve_poisson(1.0, &source_field(&layout([1.0, 0.5, 2.0, 0.1]), 16).unwrap()).unwrap();
        // S ≥ 0 gives u ≤ 0 for κΔu = S
        assert!(neg.values.iter().all(|&v| v <= 0.0));
        let pos = solve_poisson(1.0, &source_field(&layout([-1.0, -0.5, -2.0, -0.1]), 16).unwrap()).unwrap();
        assert!(pos.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mesh_fidelity_gap() {
        let pts: Vec<[f64; 2]> = [0.25, 0.5, 0.75].iter().flat_map(|&y| [0.25, 0.5, 0.75].map(|x| [x, y])).collect();
        let spec = layout([0.75, 1.25, 0.8, 1.2]);
        let coarse = probe(&solve_poisson(1.0, &source_field(&spec, 8).unwrap()).unwrap(), &pts).unwrap();
        let fine = probe(&solve_poisson(1.0, &source_field(&spec, 64).unwrap()).unwrap(), &pts).unwrap();
        let gap = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap > 1e-3, "{gap}");
    }

    #[test]
    fn csv_dump() {
        let mut buf = Vec::new();
        Field::from_fn(4, |x, _| x).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn linearity(t1 in prop::array::uniform4(-2.0f64..2.0), t2 in prop::array::uniform4(-2.0f64..2.0), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let solve = |t: [f64; 4]| solve_poisson(1.0, &source_field(&layout(t), 16).unwrap()).unwrap();
            let combo: [f64; 4] = std::array::from_fn(|i| a * t1[i] + b * t2[i]);
            let (u1, u2, u) = (solve(t1), solve(t2), solve(combo));
            for k in 0..u.values.len() {
                prop_assert!((u.values[k] - (a * u1.values[k] + b * u2.values[k])).abs() < 1e-9);
            }
        }
    }
}
