//! Finite-support (sub-)probability distributions with exact rational weights.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::semantics::Cps;
use crate::syntax::Proc;

/// Exact probability weight.
pub type Prob = BigRational;

pub fn prob(n: i64, d: i64) -> Prob {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DistError {
    #[error("negative weight in combination")]
    NegativeWeight,
    #[error("total mass {0} exceeds 1")]
    MassOverflow(Prob),
}

/// A finite map from elements to positive weights with total mass at most 1.
///
/// Entries are kept sorted by element, so iteration order is canonical.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dist<T> {
    entries: Vec<(T, Prob)>,
}

/// A distribution whose mass is exactly 1.
pub type FiniteDist<T> = Dist<T>;
/// A distribution whose mass may be below 1.
pub type SubDist<T> = Dist<T>;

impl<T: Ord + Clone> Dist<T> {
    /// The empty sub-distribution (mass 0).
    pub fn empty() -> Self {
        Dist { entries: Vec::new() }
    }

    pub fn dirac(x: T) -> Self {
        Dist { entries: vec![(x, Prob::one())] }
    }

    /// Builds a distribution from weighted elements, merging duplicates and
    /// dropping zero weights. Does not check the mass.
    pub fn from_weights<I: IntoIterator<Item = (T, Prob)>>(items: I) -> Self {
        let mut map: BTreeMap<T, Prob> = BTreeMap::new();
        for (x, p) in items {
            if p.is_zero() {
                continue;
            }
            *map.entry(x).or_insert_with(Prob::zero) += p;
        }
        Dist { entries: map.into_iter().filter(|(_, p)| !p.is_zero()).collect() }
    }

    /// Uniform distribution over the given elements (duplicates merge).
    pub fn uniform<I: IntoIterator<Item = T>>(items: I) -> Self {
        let xs: Vec<T> = items.into_iter().collect();
        assert!(!xs.is_empty(), "uniform over empty set");
        let w = prob(1, xs.len() as i64);
        Self::from_weights(xs.into_iter().map(|x| (x, w.clone())))
    }

    pub fn mass(&self) -> Prob {
        self.entries.iter().fold(Prob::zero(), |acc, (_, p)| acc + p)
    }

    pub fn is_full(&self) -> bool {
        self.mass().is_one()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, &Prob)> {
        self.entries.iter().map(|(x, p)| (x, p))
    }

    pub fn support(&self) -> impl Iterator<Item = &T> {
        self.entries.iter().map(|(x, _)| x)
    }

    pub fn into_entries(self) -> Vec<(T, Prob)> {
        self.entries
    }

    pub fn weight(&self, x: &T) -> Prob {
        match self.entries.binary_search_by(|(y, _)| y.cmp(x)) {
            Ok(i) => self.entries[i].1.clone(),
            Err(_) => Prob::zero(),
        }
    }

    /// The single element of a point distribution.
    pub fn as_dirac(&self) -> Option<&T> {
        match self.entries.as_slice() {
            [(x, p)] if p.is_one() => Some(x),
            _ => None,
        }
    }

    /// Push-forward along `f`; weights of elements with equal images merge.
    pub fn map<U: Ord + Clone, F: FnMut(&T) -> U>(&self, mut f: F) -> Dist<U> {
        Dist::from_weights(self.entries.iter().map(|(x, p)| (f(x), p.clone())))
    }

    pub fn scale(&self, k: &Prob) -> Self {
        if k.is_zero() {
            return Self::empty();
        }
        Dist { entries: self.entries.iter().map(|(x, p)| (x.clone(), p * k)).collect() }
    }

    /// Product over two independent distributions, combining elements with `f`.
    pub fn product<U: Ord + Clone, V: Ord + Clone, F: FnMut(&T, &U) -> V>(&self, other: &Dist<U>, mut f: F) -> Dist<V> {
        let mut items = Vec::with_capacity(self.len() * other.len());
        for (x, p) in self.iter() {
            for (y, q) in other.iter() {
                items.push((f(x, y), p * q));
            }
        }
        Dist::from_weights(items)
    }

    /// Adds `1 - mass` onto `sink`, producing a full distribution.
    pub fn pad(&self, sink: T) -> Self {
        let missing = Prob::one() - self.mass();
        if missing.is_zero() {
            return self.clone();
        }
        Dist::from_weights(self.entries.iter().cloned().chain(std::iter::once((sink, missing))))
    }
}

/// Weighted sum `Σ p_i · γ_i`, failing when a weight is negative or the total
/// mass exceeds 1.
pub fn combine<T: Ord + Clone>(parts: &[(Prob, Dist<T>)]) -> Result<Dist<T>, DistError> {
    let mut items = Vec::new();
    for (p, d) in parts {
        if p < &Prob::zero() {
            return Err(DistError::NegativeWeight);
        }
        for (x, q) in d.iter() {
            items.push((x.clone(), p * q));
        }
    }
    let out = Dist::from_weights(items);
    let m = out.mass();
    if m > Prob::one() {
        return Err(DistError::MassOverflow(m));
    }
    Ok(out)
}

/// Parallel product of process distributions, canonicalising each composite.
pub fn product_par(a: &Dist<Proc>, b: &Dist<Proc>) -> Dist<Proc> {
    a.product(b, |p, q| Proc::par(vec![p.clone(), q.clone()]))
}

/// Pads a sub-distribution of systems with the deadlocked system.
pub fn pad_dead(g: &Dist<Cps>) -> Dist<Cps> {
    g.pad(Cps::Dead)
}

/// Renders a rational as `p/q` (always with an explicit denominator).
pub fn ratio_string(p: &BigRational) -> String {
    format!("{}/{}", p.numer(), p.denom())
}

impl<T: fmt::Debug> fmt::Debug for Dist<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (x, p)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{:?} ↦ {}", x, p)?;
        }
        f.write_str("}")
    }
}
