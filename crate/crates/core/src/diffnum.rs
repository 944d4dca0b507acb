//! Hyper-dual numbers: a four-component scalar carrying a value, two
//! independent first-derivative slots and their mixed second derivative.
//!
//! Seeding variable `p` in the first slot and variable `q` in the second slot
//! and evaluating any expression built from `+ - * /` and integer powers
//! yields `f`, `∂f/∂p`, `∂f/∂q` and `∂²f/∂p∂q` exactly (no step size). Seeding
//! the same variable in both slots gives the pure second derivative.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Divisors whose magnitude is below this are treated as literal zeros.
pub const DIV_EPSILON: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("division by zero")]
    DivisionByZero,
}

/// Which derivative slot(s) a seeded variable occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    First,
    Second,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperDual {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl HyperDual {
    pub const fn new(value: f64, d1: f64, d2: f64, d12: f64) -> Self {
        Self { value, d1, d2, d12 }
    }

    pub const fn lift_const(c: f64) -> Self {
        Self::new(c, 0.0, 0.0, 0.0)
    }

    pub fn seed(c: f64, slot: Slot) -> Self {
        match slot {
            Slot::First => Self::new(c, 1.0, 0.0, 0.0),
            Slot::Second => Self::new(c, 0.0, 1.0, 0.0),
            Slot::Both => Self::new(c, 1.0, 1.0, 0.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d1.is_finite() && self.d2.is_finite() && self.d12.is_finite()
    }
}

impl fmt::Display for HyperDual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.value, self.d1, self.d2, self.d12)
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(
            self.value + rhs.value,
            self.d1 + rhs.d1,
            self.d2 + rhs.d2,
            self.d12 + rhs.d12,
        )
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(
            self.value - rhs.value,
            self.d1 - rhs.d1,
            self.d2 - rhs.d2,
            self.d12 - rhs.d12,
        )
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.value * rhs.value,
            self.value * rhs.d1 + self.d1 * rhs.value,
            self.value * rhs.d2 + self.d2 * rhs.value,
            self.value * rhs.d12 + self.d1 * rhs.d2 + self.d2 * rhs.d1 + self.d12 * rhs.value,
        )
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.value, -self.d1, -self.d2, -self.d12)
    }
}

/// Arithmetic shared by plain floats and hyper-duals, so the expression
/// evaluator runs the same operation sequence for both.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;
    fn checked_div(self, rhs: Self) -> Result<Self, DiffError>;

    /// Integer power by left-to-right repeated multiplication.
    fn powi(self, exponent: u32) -> Self {
        let mut acc = Self::constant(1.0);
        for _ in 0..exponent {
            acc = acc * self;
        }
        acc
    }
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }

    fn value(&self) -> f64 {
        *self
    }

    fn checked_div(self, rhs: Self) -> Result<Self, DiffError> {
        if rhs.abs() < DIV_EPSILON {
            return Err(DiffError::DivisionByZero);
        }
        Ok(self / rhs)
    }
}

impl Scalar for HyperDual {
    fn constant(c: f64) -> Self {
        Self::lift_const(c)
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn checked_div(self, rhs: Self) -> Result<Self, DiffError> {
        if rhs.value.abs() < DIV_EPSILON {
            return Err(DiffError::DivisionByZero);
        }
        // Solve self = q * rhs for q slot by slot.
        let value = self.value / rhs.value;
        let d1 = (self.d1 - value * rhs.d1) / rhs.value;
        let d2 = (self.d2 - value * rhs.d2) / rhs.value;
        let d12 = (self.d12 - value * rhs.d12 - d1 * rhs.d2 - d2 * rhs.d1) / rhs.value;
        Ok(Self::new(value, d1, d2, d12))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hd(v: f64, a: f64, b: f64, c: f64) -> HyperDual {
        HyperDual::new(v, a, b, c)
    }

    #[test]
    fn lift_const_has_no_derivatives() {
        assert_eq!(HyperDual::lift_const(3.0), hd(3.0, 0.0, 0.0, 0.0));
        assert_eq!(HyperDual::lift_const(0.0), hd(0.0, 0.0, 0.0, 0.0));
        assert_eq!(HyperDual::lift_const(-1.5), hd(-1.5, 0.0, 0.0, 0.0));
    }

    #[test]
    fn seeding() {
        assert_eq!(HyperDual::seed(2.0, Slot::First), hd(2.0, 1.0, 0.0, 0.0));
        assert_eq!(HyperDual::seed(2.0, Slot::Second), hd(2.0, 0.0, 1.0, 0.0));
        assert_eq!(HyperDual::seed(2.0, Slot::Both), hd(2.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn square_at_three() {
        let a = HyperDual::seed(3.0, Slot::Both);
        assert_eq!(a * a, hd(9.0, 6.0, 6.0, 2.0));
    }

    #[test]
    fn product_rule() {
        let p = HyperDual::seed(2.0, Slot::First) * HyperDual::seed(5.0, Slot::Second);
        assert_eq!(p, hd(10.0, 5.0, 2.0, 1.0));
    }

    #[test]
    fn powi_matches_finite_differences() {
        let p = HyperDual::seed(4.0, Slot::Both).powi(2);
        assert_eq!(p, hd(16.0, 8.0, 8.0, 2.0));
        let h = 1e-4;
        let f = |a: f64| a * a;
        let fd1 = (f(4.0 + h) - f(4.0 - h)) / (2.0 * h);
        let fd2 = (f(4.0 + h) - 2.0 * f(4.0) + f(4.0 - h)) / (h * h);
        assert!((p.d1 - fd1).abs() < 1e-8);
        assert!((p.d12 - fd2).abs() < 1e-5);
    }

    #[test]
    fn reciprocal_matches_finite_differences() {
        let q = HyperDual::lift_const(1.0)
            .checked_div(HyperDual::seed(2.0, Slot::First))
            .unwrap();
        assert_eq!(q, hd(0.5, -0.25, 0.0, 0.0));
        let h = 1e-5;
        let fd = (1.0 / (2.0 + h) - 1.0 / (2.0 - h)) / (2.0 * h);
        assert!((q.d1 - fd).abs() < 1e-9);
    }

    #[test]
    fn division_by_literal_zero() {
        let r = HyperDual::seed(1.0, Slot::First).checked_div(HyperDual::lift_const(0.0));
        assert_eq!(r, Err(DiffError::DivisionByZero));
        assert_eq!(1.0f64.checked_div(0.0), Err(DiffError::DivisionByZero));
        // tiny but nonzero divisors are allowed
        assert!(1.0f64.checked_div(1e-200).is_ok());
    }

    #[test]
    fn powers_match_analytic_second_derivatives() {
        for k in 0..=6u32 {
            for &a in &[-1.7, -0.3, 0.0, 0.8, 2.5] {
                let p = HyperDual::seed(a, Slot::Both).powi(k);
                let kf = k as f64;
                let d1 = if k >= 1 { kf * a.powi(k as i32 - 1) } else { 0.0 };
                let d2 = if k >= 2 {
                    kf * (kf - 1.0) * a.powi(k as i32 - 2)
                } else {
                    0.0
                };
                assert!((p.value - a.powi(k as i32)).abs() < 1e-12);
                assert!((p.d1 - d1).abs() < 1e-10, "k={k} a={a}");
                assert!((p.d2 - d1).abs() < 1e-10);
                assert!((p.d12 - d2).abs() < 1e-10, "k={k} a={a}");
            }
        }
    }

    #[test]
    fn mixed_partial_of_quotient() {
        // f(a, b) = a / b, ∂²f/∂a∂b = -1/b²
        let a = HyperDual::seed(3.0, Slot::First);
        let b = HyperDual::seed(2.0, Slot::Second);
        let q = a.checked_div(b).unwrap();
        assert!((q.value - 1.5).abs() < 1e-15);
        assert!((q.d1 - 0.5).abs() < 1e-15);
        assert!((q.d2 + 0.75).abs() < 1e-15);
        assert!((q.d12 + 0.25).abs() < 1e-15);
    }
}
