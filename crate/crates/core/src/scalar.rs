//! Numeric field abstraction: exact rationals by default, `f64` in fast mode.

use std::cmp::Ordering;
use std::fmt::Debug;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::dist::{ratio_string, Prob};

/// Arithmetic needed by the transport and metric engines.
pub trait Scalar: Clone + Debug + PartialEq + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_prob(p: &Prob) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn is_zero(&self) -> bool;
    fn is_negative(&self) -> bool;
    fn is_positive(&self) -> bool {
        !self.is_zero() && !self.is_negative()
    }
    /// Total order; in float mode values within the tolerance compare equal.
    fn compare(&self, o: &Self) -> Ordering;
    fn to_f64(&self) -> f64;
    /// `p/q` for rationals, decimal for floats.
    fn render(&self) -> String;

    fn max_of(self, o: Self) -> Self {
        if self.compare(&o) == Ordering::Less {
            o
        } else {
            self
        }
    }

    fn min_of(self, o: Self) -> Self {
        if o.compare(&self) == Ordering::Less {
            o
        } else {
            self
        }
    }

    fn le(&self, o: &Self) -> bool {
        self.compare(o) != Ordering::Greater
    }
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_prob(p: &Prob) -> Self {
        p.clone()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn is_negative(&self) -> bool {
        Signed::is_negative(self)
    }
    fn compare(&self, o: &Self) -> Ordering {
        self.cmp(o)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn render(&self) -> String {
        ratio_string(self)
    }
}

static FLOAT_TOL_BITS: AtomicU64 = AtomicU64::new(0x3e11_2e0b_e826_d695); // 1e-9

/// Tolerance used by the `f64` scalar for zero tests and comparisons.
pub fn float_tolerance() -> f64 {
    f64::from_bits(FLOAT_TOL_BITS.load(AtomicOrdering::Relaxed))
}

pub fn set_float_tolerance(tol: f64) {
    FLOAT_TOL_BITS.store(tol.to_bits(), AtomicOrdering::Relaxed);
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_prob(p: &Prob) -> Self {
        ToPrimitive::to_f64(p).unwrap_or(f64::NAN)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn is_zero(&self) -> bool {
        self.abs() <= float_tolerance()
    }
    fn is_negative(&self) -> bool {
        *self < -float_tolerance()
    }
    fn compare(&self, o: &Self) -> Ordering {
        let d = self - o;
        if d.abs() <= float_tolerance() {
            Ordering::Equal
        } else if d < 0.0 {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn render(&self) -> String {
        format!("{}", self)
    }
}
