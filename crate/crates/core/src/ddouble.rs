//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s,
//! giving roughly 106 bits of significand.
//!
//! Only what the finite-difference verifier needs: the four field operations,
//! comparison, and `exp`.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

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

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub const fn new(hi: f64) -> Self {
        Self { hi, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Multiplies by `2^k` exactly (barring underflow).
    fn ldexp(self, k: i32) -> Self {
        // split so neither factor over/underflows on its own
        let half = k / 2;
        let a = 2f64.powi(half);
        let b = 2f64.powi(k - half);
        Self {
            hi: self.hi * a * b,
            lo: self.lo * a * b,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        if self.hi == 0.0 && self.lo == 0.0 {
            return Self::ONE;
        }
        // x = k·ln2 + r, |r| ≤ ln2/2, then r is shrunk by 2^-10 for the series
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * Self::new(k);
        let r = Self {
            hi: r.hi / 1024.0,
            lo: r.lo / 1024.0,
        };
        // expm1 by Taylor series
        let mut term = r;
        let mut sum = r;
        for n in 2..30 {
            term = term * r / Self::new(f64::from(n));
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // expm1(2x) = expm1(x) · (expm1(x) + 2)
        for _ in 0..10 {
            sum = sum * (sum + Self::new(2.0));
        }
        (sum + Self::ONE).ldexp(k as i32)
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        Self::new(v)
    }
}

impl Add for DoubleDouble {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;

    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let (p, e) = two_prod(self.hi, rhs.hi);
        Self::renorm(p, e + (self.hi * rhs.lo + self.lo * rhs.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;

    fn div(self, rhs: Self) -> Self {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * Self::new(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * Self::new(q2);
        let q3 = r.hi / rhs.hi;
        Self::renorm(q1, q2) + Self::new(q3)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}

/// The arithmetic the soft ProtoSeg forward pass needs.
pub trait Real:
    Copy
    + PartialOrd
    + From<f64>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn exp(self) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for DoubleDouble {
    fn exp(self) -> Self {
        DoubleDouble::exp(self)
    }

    fn to_f64(self) -> f64 {
        DoubleDouble::to_f64(self)
    }
}
