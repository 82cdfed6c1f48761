//! Values carried by channels, sensors and actuators.
//!
//! Physical quantities are fixed-point decimals stored as scaled integers, so
//! grid arithmetic and state interning are exact.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

/// Interned-by-content name of a channel, device, variable or atom.
pub type Name = Arc<str>;

pub fn name(s: &str) -> Name {
    Arc::from(s)
}

/// Number of fractional digits carried internally.
pub const SCALE_DIGITS: u32 = 9;
const SCALE: i64 = 1_000_000_000;

/// A decimal number with `SCALE_DIGITS` fractional digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Decimal(i64);

impl Decimal {
    pub const ZERO: Decimal = Decimal(0);

    pub const fn from_units(units: i64) -> Self {
        Decimal(units)
    }

    pub fn units(self) -> i64 {
        self.0
    }

    pub fn from_int(v: i64) -> Self {
        Decimal(v * SCALE)
    }

    /// `mantissa * 10^-digits`, e.g. `from_parts(14, 1)` is 1.4.
    pub fn from_parts(mantissa: i64, digits: u32) -> Self {
        assert!(digits <= SCALE_DIGITS, "too many fractional digits");
        Decimal(mantissa * 10i64.pow(SCALE_DIGITS - digits))
    }

    /// Grid step `10^-g`.
    pub fn step(g: u32) -> Self {
        Self::from_parts(1, g)
    }

    pub fn checked_add(self, o: Decimal) -> Option<Decimal> {
        self.0.checked_add(o.0).map(Decimal)
    }

    pub fn checked_sub(self, o: Decimal) -> Option<Decimal> {
        self.0.checked_sub(o.0).map(Decimal)
    }

    /// True when the value is a multiple of `10^-g`.
    pub fn on_grid(self, g: u32) -> bool {
        g >= SCALE_DIGITS || self.0 % 10i64.pow(SCALE_DIGITS - g) == 0
    }

    /// Smallest number of fractional digits that represents the value exactly.
    pub fn digits_needed(self) -> u32 {
        (0..=SCALE_DIGITS).find(|&g| self.on_grid(g)).unwrap_or(SCALE_DIGITS)
    }

    pub fn to_rational(self) -> BigRational {
        BigRational::new(BigInt::from(self.0), BigInt::from(SCALE))
    }

    /// Render with exactly `digits` fractional digits (more if needed for exactness).
    pub fn render(self, digits: u32) -> String {
        let digits = digits.max(self.digits_needed()).min(SCALE_DIGITS);
        let neg = self.0 < 0;
        let abs = self.0.unsigned_abs();
        let int = abs / SCALE as u64;
        let frac = abs % SCALE as u64;
        let mut s = String::new();
        if neg {
            s.push('-');
        }
        s.push_str(&int.to_string());
        if digits > 0 {
            let frac = frac / 10u64.pow(SCALE_DIGITS - digits);
            s.push('.');
            s.push_str(&format!("{:0width$}", frac, width = digits as usize));
        }
        s
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(0))
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid decimal literal `{0}`")]
pub struct DecimalError(pub String);

impl FromStr for Decimal {
    type Err = DecimalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DecimalError(s.to_string());
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > SCALE_DIGITS as usize {
            return Err(err());
        }
        if body.contains('.') && frac.is_empty() {
            return Err(err());
        }
        let int: i64 = int.parse().map_err(|_| err())?;
        let mut f: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
        f *= 10i64.pow(SCALE_DIGITS - frac.len() as u32);
        let units = int.checked_mul(SCALE).and_then(|v| v.checked_add(f)).ok_or_else(err)?;
        Ok(Decimal(if neg { -units } else { units }))
    }
}

/// A value: decimal number or symbolic atom.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Num(Decimal),
    Atom(Name),
}

impl Value {
    pub fn atom(s: &str) -> Value {
        Value::Atom(name(s))
    }

    pub fn num(d: Decimal) -> Value {
        Value::Num(d)
    }

    pub fn as_num(&self) -> Option<Decimal> {
        match self {
            Value::Num(d) => Some(*d),
            Value::Atom(_) => None,
        }
    }

    pub fn render(&self, digits: u32) -> String {
        match self {
            Value::Num(d) => d.render(digits),
            Value::Atom(a) => a.to_string(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(0))
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Comparison operators usable in guards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// Ordering comparisons between an atom and anything else are false;
    /// equality works across kinds.
    pub fn eval(self, a: &Value, b: &Value) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            _ => match (a, b) {
                (Value::Num(x), Value::Num(y)) => {
                    let o = x.cmp(y);
                    match self {
                        CmpOp::Lt => o == Ordering::Less,
                        CmpOp::Le => o != Ordering::Greater,
                        CmpOp::Gt => o == Ordering::Greater,
                        CmpOp::Ge => o != Ordering::Less,
                        _ => unreachable!(),
                    }
                }
                _ => false,
            },
        }
    }
}

impl std::ops::Neg for Decimal {
    type Output = Decimal;

    fn neg(self) -> Decimal {
        Decimal(-self.0)
    }
}
