//! Property checks shared by the metric suites and the acceptance runner.
#![allow(dead_code)]

use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;

use pccps::explore::{reachable, Limits};
use pccps::gen::{logic_process, small_model};
use pccps::metric::{d_n, MetricEngine, MetricOptions, MetricSpace, MetricTable, DEAD};
use pccps::modeldsl::build_model;
use pccps::semantics::{compose_logic, disjoint_union, restrict, Cps};
use pccps::value::name;

pub type Q = BigRational;

/// A random small model with at most `max_states` reachable states.
pub fn small_cps<R: Rng>(rng: &mut R, suffix: &str, max_states: usize) -> Cps {
    loop {
        let mf = small_model(rng, suffix);
        let m = build_model(&mf).expect("generated model is valid");
        let limits = Limits { max_states: max_states + 1, ..Limits::default() };
        match reachable(&m, limits) {
            Ok(p) if !p.truncated && p.len() <= max_states => return m,
            _ => continue,
        }
    }
}

/// Zero diagonal, symmetry and range of a full table over `classes` classes.
pub fn check_symmetric(t: &MetricTable<Q>, classes: u32) -> Result<(), String> {
    let one = Q::one();
    for a in 0..classes {
        if !t.get(a, a).is_zero() {
            return Err(format!("d({a},{a}) != 0"));
        }
        for b in 0..classes {
            let ab = t.get(a, b);
            if ab != t.get(b, a) {
                return Err(format!("asymmetric at ({a},{b})"));
            }
            if ab < Q::zero() || ab > one {
                return Err(format!("d({a},{b}) = {ab} out of [0,1]"));
            }
        }
    }
    Ok(())
}

/// First violation of the triangle inequality, if any.
pub fn triangle_violation(t: &MetricTable<Q>, classes: u32) -> Option<(u32, u32, u32)> {
    for a in 0..classes {
        for b in a + 1..classes {
            let ab = t.get(a, b);
            for c in 0..classes {
                if ab > t.get(a, c) + t.get(c, b) {
                    return Some((a, b, c));
                }
            }
        }
    }
    None
}

/// Every class from which `Dead` is unreachable sits at distance 1 from it.
pub fn check_dead_separation(space: &MetricSpace, t: &MetricTable<Q>) -> Result<(), String> {
    let edges = &space.lts.edges;
    let mut reaches = vec![false; edges.len()];
    reaches[DEAD as usize] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for c in 0..edges.len() {
            if !reaches[c] && edges[c].iter().any(|(_, g)| g.support().any(|s| reaches[*s as usize])) {
                reaches[c] = true;
                changed = true;
            }
        }
    }
    for c in 1..space.classes() as u32 {
        if !reaches[c as usize] && t.get(c, DEAD) != Q::one() {
            return Err(format!("class {c} below 1 from Dead at n = {}", t.n));
        }
    }
    Ok(())
}

/// Checks on the plain full space of `m` and `n`: every iterate up to `steps`
/// is symmetric with zero diagonal and dominates the one before; once the
/// iteration settles (within `limit` rounds) the fixpoint is a pseudometric
/// that puts every class unable to reach `Dead` at 1 from it. The finite iterates need not
/// satisfy the last two. Returns the number of classes and whether the
/// iteration settled.
pub fn pseudometric_suite(m: &Cps, n: &Cps, steps: usize, limit: usize) -> Result<(usize, bool), String> {
    let space = MetricSpace::build(&[m.clone(), n.clone()], &MetricOptions::plain_full()).map_err(|e| e.to_string())?;
    let classes = space.classes() as u32;
    let engine = MetricEngine::<Q>::full(&space);
    let mut prev: Option<MetricTable<Q>> = None;
    let mut failure = None;
    engine
        .iterate(steps, |t| {
            if failure.is_some() {
                return;
            }
            let r = check_symmetric(t, classes).and_then(|_| match &prev {
                Some(p) if !p.le(t) => Err(format!("not monotone at n = {}", t.n)),
                _ => Ok(()),
            });
            if let Err(e) = r {
                failure = Some(e);
            }
            prev = Some(t.clone());
        })
        .map_err(|e| e.to_string())?;
    if let Some(e) = failure {
        return Err(e);
    }
    let (d, settled) = engine.limit(limit).map_err(|e| e.to_string())?;
    if settled {
        check_symmetric(&d, classes)?;
        if let Some((a, b, c)) = triangle_violation(&d, classes) {
            return Err(format!("triangle fails at ({a},{b}) via {c} in the limit"));
        }
        check_dead_separation(&space, &d)?;
    }
    Ok((classes as usize, settled))
}

pub fn dn(m: &Cps, n: &Cps, steps: usize) -> Q {
    d_n::<Q>(m, n, steps, &MetricOptions::default()).expect("metric")
}

/// The reduced space and the plain space agree on the root pair for every
/// iterate up to `steps`.
pub fn reductions_agree(m: &Cps, n: &Cps, steps: usize) -> Result<(), String> {
    let plain = MetricOptions { lump: false, ..MetricOptions::default() };
    for k in 0..=steps {
        let a = d_n::<Q>(m, n, k, &plain).map_err(|e| e.to_string())?;
        let b = d_n::<Q>(m, n, k, &MetricOptions::default()).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("n = {k}: plain {a} vs reduced {b}"));
        }
    }
    Ok(())
}

/// Congruence for one triple: disjoint union with `o`, parallel composition
/// with a pure-logical process and restriction never increase `dⁿ`.
pub fn congruence<R: Rng>(rng: &mut R, m: &Cps, n: &Cps, o: &Cps, steps: usize) -> Result<(), String> {
    let base = dn(m, n, steps);
    let mo = disjoint_union(m, o).map_err(|e| e.to_string())?;
    let no = disjoint_union(n, o).map_err(|e| e.to_string())?;
    let u = dn(&mo, &no, steps);
    if u > base {
        return Err(format!("union: {u} > {base}"));
    }
    let p = logic_process(rng);
    let mp = compose_logic(m, &p).map_err(|e| e.to_string())?;
    let np = compose_logic(n, &p).map_err(|e| e.to_string())?;
    let c = dn(&mp, &np, steps);
    if c > base {
        return Err(format!("parallel with {p}: {c} > {base}"));
    }
    let ch = name(if rng.random_bool(0.5) { "c" } else { "d" });
    let r = dn(&restrict(m, &ch), &restrict(n, &ch), steps);
    if r > base {
        return Err(format!("restriction on {ch}: {r} > {base}"));
    }
    Ok(())
}

/// `dⁿ(M ⊎ M′, N ⊎ N′) ≤ dⁿ(M, N) + dⁿ(M′, N′)`.
pub fn non_expansive(m: &Cps, n: &Cps, m2: &Cps, n2: &Cps, steps: usize) -> Result<(), String> {
    let lhs = dn(
        &disjoint_union(m, m2).map_err(|e| e.to_string())?,
        &disjoint_union(n, n2).map_err(|e| e.to_string())?,
        steps,
    );
    let rhs = dn(m, n, steps) + dn(m2, n2, steps);
    if lhs > rhs {
        return Err(format!("{lhs} > {rhs}"));
    }
    Ok(())
}
