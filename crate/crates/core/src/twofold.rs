//! Double-double arithmetic, just enough for accurate kernel sums.
//!
//! A value is the unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`,
//! carrying roughly 106 bits of significand.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

/// 1/k! for k = 0..=9.
const INV_FACT: [f64; 10] =
    [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0, 1.0 / 720.0, 1.0 / 5040.0, 1.0 / 40320.0, 1.0 / 362880.0];

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    /// Exact difference of two doubles.
    pub fn diff(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, -b);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add_f64(self, b: f64) -> Self {
        let (s, e) = two_sum(self.hi, b);
        let (hi, lo) = quick_two_sum(s, e + self.lo);
        Dd { hi, lo }
    }

    pub fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    pub fn square(self) -> Self {
        self * self
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Dd { hi: self.hi * f, lo: self.lo * f }
    }

    /// `exp(self)`, accurate to a few units in the last double-double place
    /// for arguments in the normal range. Underflows to zero below -700.
    pub fn exp(self) -> Self {
        if self.hi < -700.0 {
            return Dd::ZERO;
        }
        if self.hi > 700.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        // exp(x) = 2^k · exp(r)^1024 with |r| ≤ ln2 / 2048.
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).scale_pow2(-10);
        let mut p = Dd::from_f64(INV_FACT[9]);
        for c in INV_FACT[..9].iter().rev() {
            p = (p * r).add_f64(*c);
        }
        for _ in 0..10 {
            p = p.square();
        }
        p.scale_pow2(k as i32)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_is_exact() {
        let d = Dd::diff(1.0, 1e-20);
        assert_eq!(d.hi, 1.0);
        assert_eq!(d.lo, -1e-20);
    }

    #[test]
    fn exp_matches_std_to_double_precision() {
        for x in [-650.0, -30.5, -1.0, -1e-9, 0.0, 0.3, 5.25, 100.0] {
            let e = Dd::from_f64(x).exp().to_f64();
            let s: f64 = x.exp();
            assert!((e - s).abs() <= 2.0 * f64::EPSILON * s, "{x}: {e} vs {s}");
        }
        assert_eq!(Dd::from_f64(-800.0).exp().to_f64(), 0.0);
    }

    #[test]
    fn exp_resolves_sub_ulp_arguments() {
        // exp(1 + δ) - exp(1) ≈ e·δ for δ far below ulp(1).
        let delta = 1e-20;
        let a = Dd::from_f64(1.0).exp();
        let b = Dd { hi: 1.0, lo: delta }.exp();
        let d = (b - a).to_f64();
        assert!((d / (std::f64::consts::E * delta) - 1.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn log_identity_via_ln2() {
        // exp(ln 2) = 2 to double-double accuracy.
        let two = LN2.exp();
        assert!((two.hi - 2.0).abs() == 0.0 && two.lo.abs() < 1e-30, "{two:?}");
    }
}
