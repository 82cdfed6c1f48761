//! Weak bisimulation metrics: the functional `B`, the iterates `dⁿ`, the
//! limit and bisimilarity verdicts.
//!
//! Both systems are explored into one joint state space. By default the space
//! is lumped by strong probabilistic bisimulation before any metric work;
//! strongly bisimilar states have equal rows in every iterate, so `dⁿ` is
//! unchanged. The plain joint space stays available for cross-checking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::{ratio_string, Dist};
use crate::explore::{reachable, ExploreError, Limits, Plts};
use crate::scalar::Scalar;
use crate::semantics::{Action, Cps};
use crate::transport::{hull_by_oracle, kantorovich, TransportError};
use crate::weakstep::{Lts, WeakCache, WeakError, DEFAULT_CAP};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Weak(#[from] WeakError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("state space truncated at {0} states")]
    Truncated(usize),
}

/// Which state pairs get a table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Every pair of (quotient) states.
    Full,
    /// Only pairs the root pair depends on.
    Root,
}

#[derive(Debug, Clone, Copy)]
pub struct MetricOptions {
    pub scope: Scope,
    /// Lump strongly bisimilar states.
    pub lump: bool,
    pub cap: usize,
    pub limits: Limits,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { scope: Scope::Root, lump: true, cap: DEFAULT_CAP, limits: Limits::default() }
    }
}

impl MetricOptions {
    pub fn plain_full() -> Self {
        MetricOptions { scope: Scope::Full, lump: false, ..Default::default() }
    }
}

/// The joint, possibly reduced, state space of several systems.
pub struct MetricSpace {
    pub states: Vec<Cps>,
    /// Class of every joint state.
    pub class_of: Vec<u32>,
    pub lts: Arc<Lts>,
    pub cache: WeakCache,
    /// Classes of the systems the space was built from, in order.
    pub roots: Vec<u32>,
}

/// Class 0 is always `Dead`.
pub const DEAD: u32 = 0;

fn merge_plts(parts: &[Plts]) -> (Vec<Cps>, Vec<Vec<(Action, Dist<u32>)>>, Vec<u32>) {
    let mut states = vec![Cps::Dead];
    let mut index: HashMap<Cps, u32> = HashMap::from([(Cps::Dead, 0)]);
    let mut edges: Vec<Vec<(Action, Dist<u32>)>> = vec![Vec::new()];
    let mut roots = Vec::new();
    for p in parts {
        let ids: Vec<u32> = p
            .states
            .iter()
            .map(|s| {
                *index.entry(s.clone()).or_insert_with(|| {
                    states.push(s.clone());
                    edges.push(Vec::new());
                    (states.len() - 1) as u32
                })
            })
            .collect();
        for (s, es) in p.edges.iter().enumerate() {
            let slot = &mut edges[ids[s] as usize];
            if !slot.is_empty() || p.states[s].is_dead() {
                continue;
            }
            let mut v: Vec<(Action, Dist<u32>)> =
                es.iter().map(|e| (e.action.clone(), e.target.map(|t| ids[*t as usize]))).collect();
            v.sort();
            v.dedup();
            *slot = v;
        }
        roots.push(ids[p.root as usize]);
    }
    (states, edges, roots)
}

/// Coarsest strong probabilistic bisimulation refining `init`; classes listed
/// in `fixed` are never split.
fn lump(edges: &[Vec<(Action, Dist<u32>)>], init: Vec<u32>, fixed: &BTreeSet<u32>) -> Vec<u32> {
    let mut class = init;
    let mut count = class.iter().collect::<BTreeSet<_>>().len();
    loop {
        let base = fixed.len() as u32;
        let sigs: Vec<Option<(u32, Vec<(Action, Dist<u32>)>)>> = (0..edges.len())
            .into_par_iter()
            .map(|s| {
                if fixed.contains(&class[s]) {
                    return None;
                }
                let mut sig: Vec<(Action, Dist<u32>)> =
                    edges[s].iter().map(|(a, d)| (a.clone(), d.map(|t| class[*t as usize]))).collect();
                sig.sort();
                sig.dedup();
                Some((class[s], sig))
            })
            .collect();
        let mut ids: BTreeMap<&(u32, Vec<(Action, Dist<u32>)>), u32> = BTreeMap::new();
        for sig in sigs.iter().flatten() {
            let next = base + ids.len() as u32;
            ids.entry(sig).or_insert(next);
        }
        let next: Vec<u32> = sigs.iter().zip(&class).map(|(sig, c)| sig.as_ref().map_or(*c, |s| ids[s])).collect();
        let n = next.iter().collect::<BTreeSet<_>>().len();
        class = next;
        if n == count {
            return class;
        }
        count = n;
    }
}

impl MetricSpace {
    /// Explores every system and builds the joint space.
    pub fn build(systems: &[Cps], opts: &MetricOptions) -> Result<MetricSpace, MetricError> {
        let mut parts = Vec::new();
        for m in systems {
            let p = reachable(m, opts.limits)?;
            if p.truncated {
                return Err(MetricError::Truncated(p.len()));
            }
            parts.push(p);
        }
        Self::from_plts(&parts, opts)
    }

    pub fn from_plts(parts: &[Plts], opts: &MetricOptions) -> Result<MetricSpace, MetricError> {
        let space = Self::joint(parts, opts);
        match space.lts.tau_cycle() {
            Some(s) => Err(WeakError::TauCycle(s).into()),
            None => Ok(space),
        }
    }

    fn joint(parts: &[Plts], opts: &MetricOptions) -> MetricSpace {
        let (states, edges, roots) = merge_plts(parts);
        if !opts.lump {
            let lts = Arc::new(Lts { edges, dead: DEAD });
            let cache = WeakCache::new(lts.clone(), opts.cap);
            let class_of = (0..states.len() as u32).collect();
            return MetricSpace { states, class_of, lts, cache, roots };
        }
        let init: Vec<u32> = (0..states.len()).map(|s| if s == DEAD as usize { DEAD } else { 1 }).collect();
        let class_of = lump(&edges, init, &BTreeSet::from([DEAD]));
        let n_classes = class_of.iter().max().map_or(1, |m| *m as usize + 1);
        let mut qedges: Vec<Option<Vec<(Action, Dist<u32>)>>> = vec![None; n_classes];
        for (s, es) in edges.iter().enumerate() {
            let c = class_of[s] as usize;
            if qedges[c].is_none() {
                let mut v: Vec<(Action, Dist<u32>)> =
                    es.iter().map(|(a, d)| (a.clone(), d.map(|t| class_of[*t as usize]))).collect();
                v.sort();
                v.dedup();
                qedges[c] = Some(v);
            }
        }
        let lts = Arc::new(Lts { edges: qedges.into_iter().map(Option::unwrap_or_default).collect(), dead: DEAD });
        let cache = WeakCache::new(lts.clone(), opts.cap);
        let roots = roots.iter().map(|r| class_of[*r as usize]).collect();
        MetricSpace { states, class_of, lts, cache, roots }
    }

    pub fn classes(&self) -> usize {
        self.lts.len()
    }
}

fn key(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A symmetric table of distances over a set of class pairs.
#[derive(Debug, Clone)]
pub struct MetricTable<S> {
    pub n: usize,
    pairs: Arc<Vec<(u32, u32)>>,
    index: Arc<HashMap<(u32, u32), usize>>,
    values: Vec<S>,
    /// Entries that differ from the previous iterate; `None` when unknown.
    changed: Option<Arc<Vec<bool>>>,
}

impl<S: Scalar> MetricTable<S> {
    fn zero(pairs: Arc<Vec<(u32, u32)>>) -> Self {
        let index = Arc::new(pairs.iter().enumerate().map(|(i, p)| (*p, i)).collect());
        let values = vec![S::zero(); pairs.len()];
        MetricTable { n: 0, pairs, index, values, changed: None }
    }

    /// Distance between two classes. Pairs outside the table's scope panic.
    pub fn get(&self, a: u32, b: u32) -> S {
        if a == b {
            return S::zero();
        }
        let i = self.index.get(&key(a, b)).unwrap_or_else(|| panic!("pair ({a},{b}) outside the metric scope"));
        self.values[*i].clone()
    }

    pub fn try_get(&self, a: u32, b: u32) -> Option<S> {
        if a == b {
            return Some(S::zero());
        }
        self.index.get(&key(a, b)).map(|i| self.values[*i].clone())
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// Whether every entry is at most the corresponding entry of `o`.
    pub fn le(&self, o: &MetricTable<S>) -> bool {
        self.values.iter().zip(&o.values).all(|(a, b)| a.le(b))
    }
}

/// Which directed term produced a positive distance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub action: String,
    /// `left` when the first system moves and the second answers weakly.
    pub mover: &'static str,
    pub term: String,
    /// Optimal coupling `(mover state, answering state, weight)`, when the
    /// answer set is small enough to report.
    pub coupling: Option<Vec<(String, String, String)>>,
}

/// Iterates `B` over a space.
pub struct MetricEngine<'a, S> {
    pub space: &'a MetricSpace,
    pairs: Arc<Vec<(u32, u32)>>,
    _s: std::marker::PhantomData<S>,
}

impl<'a, S: Scalar> MetricEngine<'a, S> {
    /// Engine over all pairs of classes.
    pub fn full(space: &'a MetricSpace) -> Self {
        let n = space.classes() as u32;
        let pairs: Vec<(u32, u32)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        MetricEngine { space, pairs: Arc::new(pairs), _s: Default::default() }
    }

    /// Engine over the pairs that `(a, b)` depends on.
    pub fn rooted(space: &'a MetricSpace, roots: &[(u32, u32)]) -> Self {
        let lts = &space.lts;
        let mut seen: BTreeSet<(u32, u32)> = BTreeSet::new();
        let mut queue: VecDeque<(u32, u32)> = VecDeque::new();
        let mut reach_memo: HashMap<(u32, Action), Arc<BTreeSet<u32>>> = HashMap::new();
        let push = |p: (u32, u32), seen: &mut BTreeSet<(u32, u32)>, queue: &mut VecDeque<(u32, u32)>| {
            if p.0 != p.1 && seen.insert(key(p.0, p.1)) {
                queue.push_back(key(p.0, p.1));
            }
        };
        for r in roots {
            push(*r, &mut seen, &mut queue);
        }
        while let Some((a, b)) = queue.pop_front() {
            for (m, n) in [(a, b), (b, a)] {
                for (act, g) in &lts.edges[m as usize] {
                    let reach = reach_memo
                        .entry((n, act.clone()))
                        .or_insert_with(|| {
                            let mut r = space.cache.weak_reach(n, act);
                            r.insert(DEAD);
                            Arc::new(r)
                        })
                        .clone();
                    for x in g.support() {
                        for y in reach.iter() {
                            push((*x, *y), &mut seen, &mut queue);
                        }
                    }
                }
            }
        }
        MetricEngine { space, pairs: Arc::new(seen.into_iter().collect()), _s: Default::default() }
    }

    pub fn pairs_computed(&self) -> usize {
        self.pairs.len()
    }

    pub fn zero(&self) -> MetricTable<S> {
        MetricTable::zero(self.pairs.clone())
    }

    /// Directed term: `min` over weak `a`-answers of `n` of the lifted distance
    /// to `g` (with missing mass sent to `Dead`); `1` when there is none.
    fn answer(&self, d: &MetricTable<S>, g: &Dist<u32>, n: u32, a: &Action) -> Result<S, MetricError> {
        let cache = &self.space.cache;
        if let Some(c) = g.as_dirac() {
            let c = *c;
            let dd = d.get(c, DEAD);
            let h = |t: u32| d.get(c, t).sub(&dd);
            return Ok(match cache.min_linear(n, a, &h) {
                None => S::one(),
                Some(v) => dd.add(&v),
            });
        }
        // Sending each source to its nearest reachable target bounds every
        // answer from below.
        let reach = cache.reach_set(n, a);
        let mut bound = S::zero();
        for (x, p) in g.iter() {
            let near = reach.iter().map(|t| d.get(*x, *t)).fold(d.get(*x, DEAD), |m, v| m.min_of(v));
            bound = bound.add(&S::from_prob(p).mul(&near));
        }
        if bound.compare(&S::one()) != Ordering::Less {
            return Ok(S::one());
        }
        // Vertices of the hull are generated on demand by the scheduler DP.
        let cost = |x: u32, y: u32| d.get(x, y);
        let mut price = |h: &dyn Fn(u32) -> S| cache.argmin_linear(n, a, h).map(|(_, v)| v);
        Ok(hull_by_oracle(g, &cost, DEAD, &mut price).unwrap_or_else(S::one))
    }

    /// `B(d)(m, n)`.
    pub fn apply_pair(&self, d: &MetricTable<S>, m: u32, n: u32) -> Result<S, MetricError> {
        let lts = &self.space.lts;
        let mut best = S::zero();
        for (x, y) in [(m, n), (n, m)] {
            for (a, g) in &lts.edges[x as usize] {
                let v = self.answer(d, g, y, a)?;
                best = best.max_of(v);
                if best.compare(&S::one()) != Ordering::Less {
                    return Ok(S::one());
                }
            }
        }
        Ok(best)
    }

    /// One application of `B` to the whole table. When `d` records which
    /// entries changed in its own step, pairs that read none of them keep
    /// their value.
    pub fn apply_b(&self, d: &MetricTable<S>) -> Result<MetricTable<S>, MetricError> {
        let values: Vec<S> = self
            .pairs
            .par_iter()
            .zip(d.values.par_iter())
            .map(|((m, n), old)| {
                // Entries at 1 cannot grow and B is monotone from zero.
                if old.compare(&S::one()) == Ordering::Equal {
                    return Ok(S::one());
                }
                if let Some(ch) = &d.changed {
                    if !self.reads_changed(d, ch, *m, *n) {
                        return Ok(old.clone());
                    }
                }
                self.apply_pair(d, *m, *n)
            })
            .collect::<Result<_, MetricError>>()?;
        let changed: Vec<bool> = values.iter().zip(&d.values).map(|(a, b)| a.compare(b) != Ordering::Equal).collect();
        Ok(MetricTable {
            n: d.n + 1,
            pairs: d.pairs.clone(),
            index: d.index.clone(),
            values,
            changed: Some(Arc::new(changed)),
        })
    }

    /// Whether `B(d)(m, n)` reads an entry flagged in `changed`.
    fn reads_changed(&self, d: &MetricTable<S>, changed: &[bool], m: u32, n: u32) -> bool {
        let lts = &self.space.lts;
        let hit = |x: u32, t: u32| x != t && d.index.get(&key(x, t)).is_some_and(|i| changed[*i]);
        for (x, y) in [(m, n), (n, m)] {
            for (a, g) in &lts.edges[x as usize] {
                let reach = self.space.cache.reach_set(y, a);
                for c in g.support() {
                    if hit(*c, DEAD) || reach.iter().any(|t| hit(*c, *t)) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// `dⁿ`, calling `observe` on every iterate from `d⁰`.
    pub fn iterate(&self, n: usize, mut observe: impl FnMut(&MetricTable<S>)) -> Result<MetricTable<S>, MetricError> {
        let mut d = self.zero();
        observe(&d);
        for _ in 0..n {
            d = self.apply_b(&d)?;
            observe(&d);
        }
        Ok(d)
    }

    /// Like [`iterate`](Self::iterate) but on the zero pattern of `dⁿ`: each
    /// table holds 1 where `dⁿ > 0` and 0 elsewhere. Whether `B(d)` vanishes
    /// at a pair depends only on where `d` vanishes, so the pattern is exact
    /// while the numbers stay small.
    pub fn iterate_pattern(
        &self,
        n: usize,
        mut observe: impl FnMut(&MetricTable<S>),
    ) -> Result<MetricTable<S>, MetricError> {
        let mut d = self.zero();
        observe(&d);
        for _ in 0..n {
            let mut next = self.apply_b(&d)?;
            for v in next.values.iter_mut() {
                if v.is_positive() {
                    *v = S::one();
                }
            }
            let changed = next.values.iter().zip(&d.values).map(|(a, b)| a.compare(b) != Ordering::Equal).collect();
            next.changed = Some(Arc::new(changed));
            d = next;
            observe(&d);
        }
        Ok(d)
    }

    /// Iterates until the table is stable or `n_max` is reached.
    pub fn limit(&self, n_max: usize) -> Result<(MetricTable<S>, bool), MetricError> {
        let mut d = self.zero();
        for _ in 0..n_max {
            let next = self.apply_b(&d)?;
            let stable = next.values.iter().zip(&d.values).all(|(a, b)| a.compare(b) == Ordering::Equal);
            d = next;
            if stable {
                return Ok((d, true));
            }
        }
        Ok((d, false))
    }

    /// Explains a positive entry `B(d)(m, n)` by its largest directed term.
    pub fn witness(&self, d: &MetricTable<S>, m: u32, n: u32) -> Result<Option<Witness>, MetricError> {
        let lts = &self.space.lts;
        let mut best: Option<(S, &'static str, Action, Dist<u32>, u32)> = None;
        for (x, y, side) in [(m, n, "left"), (n, m, "right")] {
            for (a, g) in &lts.edges[x as usize] {
                let v = self.answer(d, g, y, a)?;
                if v.is_positive() && best.as_ref().is_none_or(|(b, ..)| v.compare(b) == Ordering::Greater) {
                    best = Some((v, side, a.clone(), g.clone(), y));
                }
            }
        }
        let Some((v, mover, a, g, y)) = best else { return Ok(None) };
        let mut w = Witness { action: a.to_string(), mover, term: v.render(), coupling: None };
        // The coupling is reported for the best single answer; skipped when
        // the answers are too many to enumerate.
        if let Ok(answers) = self.space.cache.weak_derivatives(y, &a) {
            let mut best_c: Option<(S, Vec<(String, String, String)>)> = None;
            for ans in answers.iter() {
                let (c, matching) = kantorovich(|p: &u32, q: &u32| d.get(*p, *q), &g, &ans.pad(DEAD))?;
                if best_c.as_ref().is_none_or(|(b, _)| c.compare(b) == Ordering::Less) {
                    let rows = matching
                        .omega
                        .iter()
                        .map(|((p, q), wgt)| (self.describe(*p), self.describe(*q), ratio_string(wgt)))
                        .collect();
                    best_c = Some((c, rows));
                }
            }
            w.coupling = best_c.map(|(_, c)| c);
        }
        Ok(Some(w))
    }

    fn describe(&self, class: u32) -> String {
        if class == DEAD {
            return "Dead".into();
        }
        match self.space.class_of.iter().position(|c| *c == class) {
            Some(s) => format!("{:?}", self.space.states[s]),
            None => format!("class {class}"),
        }
    }
}

/// Serialized metric result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricReport {
    pub n: usize,
    pub value: String,
    pub converged: bool,
    pub pairs_computed: usize,
    pub witness: Option<Witness>,
}

/// `dⁿ(m1, m2)`.
pub fn d_n<S: Scalar>(m1: &Cps, m2: &Cps, n: usize, opts: &MetricOptions) -> Result<S, MetricError> {
    let space = MetricSpace::build(&[m1.clone(), m2.clone()], opts)?;
    let (a, b) = (space.roots[0], space.roots[1]);
    let engine = engine_for::<S>(&space, opts.scope, (a, b));
    Ok(engine.iterate(n, |_| {})?.get(a, b))
}

fn engine_for<S: Scalar>(space: &MetricSpace, scope: Scope, root: (u32, u32)) -> MetricEngine<'_, S> {
    match scope {
        Scope::Full => MetricEngine::full(space),
        Scope::Root => MetricEngine::rooted(space, &[root]),
    }
}

/// Iterates to a fixed point or `n_max`; the value is a lower bound on the
/// limit distance when not converged.
pub fn d_limit<S: Scalar>(m1: &Cps, m2: &Cps, n_max: usize, opts: &MetricOptions) -> Result<MetricReport, MetricError> {
    let space = MetricSpace::build(&[m1.clone(), m2.clone()], opts)?;
    let (a, b) = (space.roots[0], space.roots[1]);
    let engine = engine_for::<S>(&space, opts.scope, (a, b));
    let (d, converged) = engine.limit(n_max)?;
    report(&engine, &d, a, b, converged)
}

/// `dⁿ` with a JSON-ready report.
pub fn metric_report<S: Scalar>(
    m1: &Cps,
    m2: &Cps,
    n: usize,
    opts: &MetricOptions,
) -> Result<MetricReport, MetricError> {
    let space = MetricSpace::build(&[m1.clone(), m2.clone()], opts)?;
    let (a, b) = (space.roots[0], space.roots[1]);
    let engine = engine_for::<S>(&space, opts.scope, (a, b));
    let mut prev = None;
    let d = engine.iterate(n, |t| {
        if t.n + 1 == n {
            prev = Some(t.clone());
        }
    })?;
    let mut r = report(&engine, &d, a, b, false)?;
    if n > 0 {
        let prev = prev.expect("previous iterate");
        r.witness = engine.witness(&prev, a, b)?;
    }
    Ok(r)
}

fn report<S: Scalar>(
    engine: &MetricEngine<'_, S>,
    d: &MetricTable<S>,
    a: u32,
    b: u32,
    converged: bool,
) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        n: d.n,
        value: d.get(a, b).render(),
        converged,
        pairs_computed: engine.pairs_computed(),
        witness: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// `dⁿ = 0` for every `n` up to the bound; a semi-verdict.
    BisimilarUpTo(usize),
    /// `dⁿ > 0`, which proves the systems are not weakly bisimilar.
    Distinct { n: usize, value: String, witness: Option<Witness> },
}

/// The least `n ≤ n_max` with `dⁿ(m1, m2) > 0`, found on zero patterns
/// without computing the distances themselves.
pub fn separation_depth<S: Scalar>(
    m1: &Cps,
    m2: &Cps,
    n_max: usize,
    opts: &MetricOptions,
) -> Result<Option<usize>, MetricError> {
    let space = MetricSpace::build(&[m1.clone(), m2.clone()], opts)?;
    let (a, b) = (space.roots[0], space.roots[1]);
    if a == b {
        return Ok(None);
    }
    let engine = engine_for::<S>(&space, opts.scope, (a, b));
    let mut first = None;
    engine.iterate_pattern(n_max, |t| {
        if first.is_none() && t.get(a, b).is_positive() {
            first = Some(t.n);
        }
    })?;
    Ok(first)
}

/// Iterates until the distance becomes positive or `n_max` is reached.
pub fn check_bisimilar<S: Scalar>(
    m1: &Cps,
    m2: &Cps,
    n_max: usize,
    opts: &MetricOptions,
) -> Result<Verdict, MetricError> {
    let space = MetricSpace::build(&[m1.clone(), m2.clone()], opts)?;
    let (a, b) = (space.roots[0], space.roots[1]);
    let engine = engine_for::<S>(&space, opts.scope, (a, b));
    let mut d = engine.zero();
    for _ in 0..n_max {
        let next = engine.apply_b(&d)?;
        let v = next.get(a, b);
        if v.is_positive() {
            let witness = engine.witness(&d, a, b)?;
            return Ok(Verdict::Distinct { n: next.n, value: v.render(), witness });
        }
        d = next;
    }
    Ok(Verdict::BisimilarUpTo(n_max))
}
