//! Weak transitions over sub-distributions: `⇒τ̂` closures, hat steps and the
//! enumeration of weak derivatives, plus linear minimisation over them.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use dashmap::DashMap;

use crate::dist::{Dist, Prob};
use crate::scalar::Scalar;
use crate::semantics::Action;

/// Default cap on the number of weak derivatives enumerated per query.
pub const DEFAULT_CAP: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WeakError {
    #[error("more than {cap} weak derivatives from state {state} for {action}")]
    CapExceeded { state: u32, action: String, cap: usize },
    #[error("cycle of internal transitions through state {0}")]
    TauCycle(u32),
}

/// A finite pLTS over dense state ids.
#[derive(Debug, Clone)]
pub struct Lts {
    pub edges: Vec<Vec<(Action, Dist<u32>)>>,
    /// The absorbing deadlock state, used to pad sub-distributions.
    pub dead: u32,
}

impl Lts {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn able(&self, s: u32, a: &Action) -> bool {
        self.edges[s as usize].iter().any(|(b, _)| b == a)
    }

    pub fn actions(&self, s: u32) -> BTreeSet<Action> {
        self.edges[s as usize].iter().map(|(a, _)| a.clone()).collect()
    }

    /// A state on a cycle of `τ` transitions, if any.
    pub fn tau_cycle(&self) -> Option<u32> {
        let n = self.edges.len();
        let mut indeg = vec![0usize; n];
        for s in 0..n as u32 {
            for d in self.taus(s) {
                for t in d.support() {
                    indeg[*t as usize] += 1;
                }
            }
        }
        let mut queue: Vec<u32> = (0..n as u32).filter(|s| indeg[*s as usize] == 0).collect();
        let mut removed = 0;
        while let Some(u) = queue.pop() {
            removed += 1;
            for d in self.taus(u) {
                for t in d.support() {
                    indeg[*t as usize] -= 1;
                    if indeg[*t as usize] == 0 {
                        queue.push(*t);
                    }
                }
            }
        }
        if removed == n {
            None
        } else {
            (0..n as u32).find(|s| indeg[*s as usize] > 0)
        }
    }

    fn taus(&self, s: u32) -> impl Iterator<Item = &Dist<u32>> {
        self.edges[s as usize].iter().filter(|(a, _)| a.is_tau()).map(|(_, d)| d)
    }
}

/// One hat step from a sub-distribution, following the definition literally:
/// for `τ` every state either stays or takes one of its `τ` transitions; for a
/// visible action or `tick` exactly the able states move and the others are
/// dropped, and there is no result when no state is able.
pub fn hat_step(lts: &Lts, g: &Dist<u32>, a: &Action) -> Vec<Dist<u32>> {
    let mut per_state: Vec<(Prob, Vec<Option<Dist<u32>>>)> = Vec::new();
    for (s, p) in g.iter() {
        let moves: Vec<Option<Dist<u32>>> =
            lts.edges[*s as usize].iter().filter(|(b, _)| b == a).map(|(_, d)| Some(d.clone())).collect();
        let opts = if a.is_tau() {
            let mut v = vec![Some(Dist::dirac(*s))];
            v.extend(moves);
            v
        } else if moves.is_empty() {
            vec![None]
        } else {
            moves
        };
        per_state.push((p.clone(), opts));
    }
    if !a.is_tau() && per_state.iter().all(|(_, o)| o.iter().all(Option::is_none)) {
        return Vec::new();
    }
    let mut out = BTreeSet::new();
    let mut idx = vec![0usize; per_state.len()];
    loop {
        let mut parts = Vec::new();
        for (k, (p, opts)) in per_state.iter().enumerate() {
            if let Some(d) = &opts[idx[k]] {
                parts.push((p.clone(), d.clone()));
            }
        }
        out.insert(crate::dist::combine(&parts).expect("sub-distribution"));
        let mut k = 0;
        while k < idx.len() {
            idx[k] += 1;
            if idx[k] < per_state[k].1.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == idx.len() {
            break;
        }
    }
    out.into_iter().collect()
}

type DerivSet = Arc<Vec<Dist<u32>>>;

/// Memoised weak-derivative enumeration. Safe to share between threads.
pub struct WeakCache {
    lts: Arc<Lts>,
    cap: usize,
    tau: DashMap<u32, DerivSet>,
    fire: DashMap<(u32, Action), DerivSet>,
    weak: DashMap<(u32, Action), DerivSet>,
    /// Queries known to exceed the cap.
    too_many: DashMap<(u32, Action), ()>,
    reach: DashMap<(u32, Action), Arc<Vec<u32>>>,
}

/// Sums `Σ p_t · γ_t` for every choice of `γ_t` from `sets[t]`, deduplicated.
fn products(parts: &[(Prob, DerivSet)], cap: usize) -> Option<Vec<Dist<u32>>> {
    let mut acc: BTreeSet<Dist<u32>> = BTreeSet::from([Dist::empty()]);
    for (p, set) in parts {
        let mut next = BTreeSet::new();
        for a in &acc {
            for g in set.iter() {
                let mut entries: Vec<(u32, Prob)> = a.iter().map(|(x, w)| (*x, w.clone())).collect();
                entries.extend(g.iter().map(|(x, w)| (*x, w * p)));
                next.insert(Dist::from_weights(entries));
                if next.len() > cap {
                    return None;
                }
            }
        }
        acc = next;
    }
    Some(acc.into_iter().collect())
}

impl WeakCache {
    pub fn new(lts: Arc<Lts>, cap: usize) -> Self {
        WeakCache {
            lts,
            cap,
            tau: DashMap::new(),
            fire: DashMap::new(),
            weak: DashMap::new(),
            too_many: DashMap::new(),
            reach: DashMap::new(),
        }
    }

    pub fn lts(&self) -> &Lts {
        &self.lts
    }

    fn cap_error(&self, s: u32, a: &Action) -> WeakError {
        WeakError::CapExceeded { state: s, action: a.to_string(), cap: self.cap }
    }

    /// Checks that no cycle of `τ` transitions is reachable from `s`.
    pub fn check_tau_acyclic(&self, s: u32) -> Result<(), WeakError> {
        let mut colour: HashMap<u32, u8> = HashMap::new();
        let mut stack = vec![(s, false)];
        while let Some((u, done)) = stack.pop() {
            if done {
                colour.insert(u, 2);
                continue;
            }
            match colour.get(&u) {
                Some(2) => continue,
                Some(1) => continue,
                _ => {}
            }
            colour.insert(u, 1);
            stack.push((u, true));
            for d in self.lts.taus(u) {
                for t in d.support() {
                    match colour.get(t) {
                        Some(1) => return Err(WeakError::TauCycle(*t)),
                        Some(2) => {}
                        _ => stack.push((*t, false)),
                    }
                }
            }
        }
        Ok(())
    }

    /// All distributions reachable by `⇒τ̂` from `δ_s`.
    pub fn tau_closure(&self, s: u32) -> Result<DerivSet, WeakError> {
        if let Some(v) = self.tau.get(&s) {
            return Ok(v.clone());
        }
        let mut set: BTreeSet<Dist<u32>> = BTreeSet::from([Dist::dirac(s)]);
        for d in self.lts.taus(s) {
            let parts: Vec<(Prob, DerivSet)> =
                d.iter().map(|(t, p)| Ok((p.clone(), self.tau_closure(*t)?))).collect::<Result<_, WeakError>>()?;
            let combos = products(&parts, self.cap).ok_or_else(|| self.cap_error(s, &Action::Tau))?;
            set.extend(combos);
            if set.len() > self.cap {
                return Err(self.cap_error(s, &Action::Tau));
            }
        }
        let v = Arc::new(set.into_iter().collect::<Vec<_>>());
        self.tau.insert(s, v.clone());
        Ok(v)
    }

    /// Distributions reachable by one `a` step from `s` followed by `⇒τ̂`.
    fn fire(&self, s: u32, a: &Action) -> Result<DerivSet, WeakError> {
        if let Some(v) = self.fire.get(&(s, a.clone())) {
            return Ok(v.clone());
        }
        let mut set = BTreeSet::new();
        for (b, d) in &self.lts.edges[s as usize] {
            if b != a {
                continue;
            }
            let parts: Vec<(Prob, DerivSet)> =
                d.iter().map(|(t, p)| Ok((p.clone(), self.tau_closure(*t)?))).collect::<Result<_, WeakError>>()?;
            set.extend(products(&parts, self.cap).ok_or_else(|| self.cap_error(s, a))?);
            if set.len() > self.cap {
                return Err(self.cap_error(s, a));
            }
        }
        let v = Arc::new(set.into_iter().collect::<Vec<_>>());
        self.fire.insert((s, a.clone()), v.clone());
        Ok(v)
    }

    /// The weak derivatives of `δ_s` for `a`: the `τ̂` closure for `τ`,
    /// `⇒τ̂ →â ⇒τ̂` otherwise. Every element has positive mass.
    pub fn weak_derivatives(&self, s: u32, a: &Action) -> Result<DerivSet, WeakError> {
        let key = (s, a.clone());
        if self.too_many.contains_key(&key) {
            return Err(self.cap_error(s, a));
        }
        let r = self.enumerate(s, a);
        if let Err(WeakError::CapExceeded { .. }) = r {
            self.too_many.insert(key, ());
        }
        r
    }

    fn enumerate(&self, s: u32, a: &Action) -> Result<DerivSet, WeakError> {
        if a.is_tau() {
            return self.tau_closure(s);
        }
        if let Some(v) = self.weak.get(&(s, a.clone())) {
            return Ok(v.clone());
        }
        let mut set = BTreeSet::new();
        for pre in self.tau_closure(s)?.iter() {
            let mut parts = Vec::new();
            let mut any = false;
            for (u, p) in pre.iter() {
                let f = self.fire(*u, a)?;
                any |= !f.is_empty();
                // Unable states are dropped; able states must fire.
                let opts = if f.is_empty() { Arc::new(vec![Dist::empty()]) } else { f };
                parts.push((p.clone(), opts));
            }
            if !any {
                continue;
            }
            set.extend(products(&parts, self.cap).ok_or_else(|| self.cap_error(s, a))?);
            if set.len() > self.cap {
                return Err(self.cap_error(s, a));
            }
        }
        let v = Arc::new(set.into_iter().collect::<Vec<_>>());
        self.weak.insert((s, a.clone()), v.clone());
        Ok(v)
    }

    /// States that may carry mass in some weak `a`-derivative of `s`.
    pub fn weak_reach(&self, s: u32, a: &Action) -> BTreeSet<u32> {
        let tau_reach = |from: &[u32]| -> BTreeSet<u32> {
            let mut seen: BTreeSet<u32> = from.iter().copied().collect();
            let mut stack: Vec<u32> = from.to_vec();
            while let Some(u) = stack.pop() {
                for d in self.lts.taus(u) {
                    for t in d.support() {
                        if seen.insert(*t) {
                            stack.push(*t);
                        }
                    }
                }
            }
            seen
        };
        let pre = tau_reach(&[s]);
        if a.is_tau() {
            return pre;
        }
        let mut mid = Vec::new();
        for u in pre {
            for (b, d) in &self.lts.edges[u as usize] {
                if b == a {
                    mid.extend(d.support().copied());
                }
            }
        }
        tau_reach(&mid)
    }

    /// Memoised [`weak_reach`](Self::weak_reach), sorted.
    pub fn reach_set(&self, s: u32, a: &Action) -> Arc<Vec<u32>> {
        let key = (s, a.clone());
        if let Some(v) = self.reach.get(&key) {
            return v.clone();
        }
        let v = Arc::new(self.weak_reach(s, a).into_iter().collect::<Vec<_>>());
        self.reach.insert(key, v.clone());
        v
    }

    /// `min Σ_t γ(t)·h(t)` over weak `a`-derivatives `γ` of `s`, computed by
    /// dynamic programming without enumerating them. `None` when there are no
    /// weak derivatives. Dropped mass contributes zero.
    pub fn min_linear<S: Scalar>(&self, s: u32, a: &Action, h: &dyn Fn(u32) -> S) -> Option<S> {
        let mut dp = Dp::new(&self.lts, a, h);
        if a.is_tau() {
            Some(dp.tau(s).0)
        } else {
            dp.alpha(s).valid.map(|v| v.0)
        }
    }

    /// [`min_linear`](Self::min_linear) together with a derivative attaining it.
    pub fn argmin_linear<S: Scalar>(&self, s: u32, a: &Action, h: &dyn Fn(u32) -> S) -> Option<(S, Dist<u32>)> {
        let mut dp = Dp::new(&self.lts, a, h);
        if a.is_tau() {
            let v = dp.tau(s).0;
            Some((v, dp.tau_dist(s)))
        } else {
            let v = dp.alpha(s).valid?.0;
            Some((v, dp.valid_dist(s)))
        }
    }
}

/// Choice made at a state by an optimal scheduler.
#[derive(Clone, Copy, Debug)]
enum Pick {
    Stay,
    Drop,
    Fire(usize),
    Tau(usize),
    /// Take `τ` edge `k`; the branch to the given state carries the firing.
    TauVia(usize, u32),
}

/// `any` allows all mass to be dropped; `valid` requires some mass to fire.
#[derive(Clone)]
struct AlphaMin<S> {
    any: (S, Pick),
    valid: Option<(S, Pick)>,
}

struct Dp<'c, S> {
    lts: &'c Lts,
    a: &'c Action,
    h: &'c dyn Fn(u32) -> S,
    tau: HashMap<u32, (S, Pick)>,
    alpha: HashMap<u32, AlphaMin<S>>,
    dists: HashMap<(u8, u32), Dist<u32>>,
}

fn better<S: Scalar>(cur: &Option<(S, Pick)>, v: &S) -> bool {
    cur.as_ref().is_none_or(|(c, _)| v.compare(c) == std::cmp::Ordering::Less)
}

impl<'c, S: Scalar> Dp<'c, S> {
    fn new(lts: &'c Lts, a: &'c Action, h: &'c dyn Fn(u32) -> S) -> Self {
        Dp { lts, a, h, tau: HashMap::new(), alpha: HashMap::new(), dists: HashMap::new() }
    }

    fn expect(&mut self, d: &Dist<u32>, f: fn(&mut Self, u32) -> S) -> S {
        let mut acc = S::zero();
        for (t, p) in d.iter() {
            acc = acc.add(&S::from_prob(p).mul(&f(self, *t)));
        }
        acc
    }

    fn tau(&mut self, s: u32) -> (S, Pick) {
        if let Some(v) = self.tau.get(&s) {
            return v.clone();
        }
        let mut best = Some(((self.h)(s), Pick::Stay));
        for (k, (b, d)) in self.lts.edges[s as usize].iter().enumerate() {
            if b.is_tau() {
                let v = self.expect(d, |dp, t| dp.tau(t).0);
                if better(&best, &v) {
                    best = Some((v, Pick::Tau(k)));
                }
            }
        }
        let best = best.expect("staying is always possible");
        self.tau.insert(s, best.clone());
        best
    }

    fn alpha(&mut self, s: u32) -> AlphaMin<S> {
        if let Some(v) = self.alpha.get(&s) {
            return v.clone();
        }
        // Stopping here: fire if able, otherwise drop.
        let mut fire: Option<(S, Pick)> = None;
        for (k, (b, d)) in self.lts.edges[s as usize].iter().enumerate() {
            if b == self.a {
                let v = self.expect(d, |dp, t| dp.tau(t).0);
                if better(&fire, &v) {
                    fire = Some((v, Pick::Fire(k)));
                }
            }
        }
        let mut any = fire.clone().unwrap_or((S::zero(), Pick::Drop));
        let mut valid = fire;
        for (k, (b, d)) in self.lts.edges[s as usize].iter().enumerate() {
            if !b.is_tau() {
                continue;
            }
            let mut sum_any = S::zero();
            let mut best_gap: Option<(S, Pick)> = None;
            for (t, p) in d.iter() {
                let m = self.alpha(*t);
                let w = S::from_prob(p);
                sum_any = sum_any.add(&w.mul(&m.any.0));
                if let Some((tv, _)) = &m.valid {
                    let gap = w.mul(&tv.sub(&m.any.0));
                    if better(&best_gap, &gap) {
                        best_gap = Some((gap, Pick::TauVia(k, *t)));
                    }
                }
            }
            if sum_any.compare(&any.0) == std::cmp::Ordering::Less {
                any = (sum_any.clone(), Pick::Tau(k));
            }
            if let Some((g, pick)) = best_gap {
                let v = sum_any.add(&g);
                if better(&valid, &v) {
                    valid = Some((v, pick));
                }
            }
        }
        let out = AlphaMin { any, valid };
        self.alpha.insert(s, out.clone());
        out
    }

    fn mix(&mut self, parts: Vec<(Prob, Dist<u32>)>) -> Dist<u32> {
        crate::dist::combine(&parts).expect("sub-distribution")
    }

    fn edge(&self, s: u32, k: usize) -> Dist<u32> {
        self.lts.edges[s as usize][k].1.clone()
    }

    fn tau_dist(&mut self, s: u32) -> Dist<u32> {
        if let Some(d) = self.dists.get(&(0, s)) {
            return d.clone();
        }
        let out = match self.tau(s).1 {
            Pick::Tau(k) => {
                let parts = self.edge(s, k).iter().map(|(t, p)| (p.clone(), self.tau_dist(*t))).collect();
                self.mix(parts)
            }
            _ => Dist::dirac(s),
        };
        self.dists.insert((0, s), out.clone());
        out
    }

    fn fire_dist(&mut self, s: u32, k: usize) -> Dist<u32> {
        let parts = self.edge(s, k).iter().map(|(t, p)| (p.clone(), self.tau_dist(*t))).collect();
        self.mix(parts)
    }

    fn any_dist(&mut self, s: u32) -> Dist<u32> {
        if let Some(d) = self.dists.get(&(1, s)) {
            return d.clone();
        }
        let out = match self.alpha(s).any.1 {
            Pick::Fire(k) => self.fire_dist(s, k),
            Pick::Tau(k) => {
                let parts = self.edge(s, k).iter().map(|(t, p)| (p.clone(), self.any_dist(*t))).collect();
                self.mix(parts)
            }
            _ => Dist::empty(),
        };
        self.dists.insert((1, s), out.clone());
        out
    }

    fn valid_dist(&mut self, s: u32) -> Dist<u32> {
        if let Some(d) = self.dists.get(&(2, s)) {
            return d.clone();
        }
        let out = match self.alpha(s).valid.expect("able").1 {
            Pick::Fire(k) => self.fire_dist(s, k),
            Pick::TauVia(k, j) => {
                let parts = self
                    .edge(s, k)
                    .iter()
                    .map(|(t, p)| (p.clone(), if *t == j { self.valid_dist(*t) } else { self.any_dist(*t) }))
                    .collect();
                self.mix(parts)
            }
            p => unreachable!("{p:?} is not a firing choice"),
        };
        self.dists.insert((2, s), out.clone());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::prob;
    use crate::value::name;

    fn out() -> Action {
        Action::Out(name("c"), crate::value::Value::atom("v"))
    }

    /// 0 -τ-> 1, 1 -τ-> ½·2 + ½·3, 2 -c̄v-> 4, 3 dead end, 4 nil; 5 = Dead.
    fn sample() -> Lts {
        let half = |a, b| Dist::from_weights([(a, prob(1, 2)), (b, prob(1, 2))]);
        Lts {
            edges: vec![
                vec![(Action::Tau, Dist::dirac(1))],
                vec![(Action::Tau, half(2, 3))],
                vec![(out(), Dist::dirac(4)), (Action::Tick, Dist::dirac(2))],
                vec![(Action::Tick, Dist::dirac(3))],
                vec![(Action::Tick, Dist::dirac(4))],
                vec![],
            ],
            dead: 5,
        }
    }

    #[test]
    fn identity_is_a_tau_derivative() {
        let c = WeakCache::new(Arc::new(sample()), DEFAULT_CAP);
        let w = c.weak_derivatives(4, &Action::Tau).unwrap();
        assert_eq!(*w, vec![Dist::dirac(4)]);
        let w = c.weak_derivatives(0, &Action::Tau).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.contains(&Dist::dirac(0)));
        assert!(w.contains(&Dist::dirac(1)));
    }

    #[test]
    fn visible_step_drops_unable_states() {
        let lts = sample();
        let g = Dist::from_weights([(2, prob(1, 2)), (3, prob(1, 2))]);
        let r = hat_step(&lts, &g, &out());
        assert_eq!(r, vec![Dist::from_weights([(4, prob(1, 2))])]);
        assert!(hat_step(&lts, &Dist::dirac(3), &out()).is_empty());
        let c = WeakCache::new(Arc::new(lts), DEFAULT_CAP);
        let w = c.weak_derivatives(0, &out()).unwrap();
        assert_eq!(*w, vec![Dist::from_weights([(4, prob(1, 2))])]);
        assert!(c.weak_derivatives(3, &out()).unwrap().is_empty());
    }

    #[test]
    fn hand_enumerated_two_step_closure() {
        let lts = Lts { edges: vec![vec![(Action::Tau, Dist::dirac(1))], vec![], vec![]], dead: 2 };
        let c = WeakCache::new(Arc::new(lts), DEFAULT_CAP);
        assert_eq!(*c.weak_derivatives(0, &Action::Tau).unwrap(), vec![Dist::dirac(0), Dist::dirac(1)]);
    }

    #[test]
    fn dp_agrees_with_enumeration() {
        let c = WeakCache::new(Arc::new(sample()), DEFAULT_CAP);
        let h = |t: u32| prob([3, -2, 5, -7, 1, 0][t as usize], 4);
        for a in [Action::Tau, Action::Tick, out()] {
            for s in 0..5 {
                let set = c.weak_derivatives(s, &a).unwrap();
                let brute = set.iter().map(|g| g.iter().fold(prob(0, 1), |acc, (t, p)| acc + p * h(*t))).min();
                assert_eq!(c.min_linear(s, &a, &h), brute, "state {s} action {a}");
                if let Some((v, g)) = c.argmin_linear(s, &a, &h) {
                    assert!(set.contains(&g), "state {s} action {a}: {g:?}");
                    assert_eq!(g.iter().fold(prob(0, 1), |acc, (t, p)| acc + p * h(*t)), v);
                }
            }
        }
    }

    #[test]
    fn cap_and_cycles_reported() {
        let lts = Lts {
            edges: vec![vec![(Action::Tau, Dist::dirac(1))], vec![(Action::Tau, Dist::dirac(0))], vec![]],
            dead: 2,
        };
        let c = WeakCache::new(Arc::new(lts), DEFAULT_CAP);
        assert_eq!(c.check_tau_acyclic(0), Err(WeakError::TauCycle(0)));
        let c = WeakCache::new(Arc::new(sample()), 2);
        assert!(matches!(c.weak_derivatives(0, &Action::Tau), Err(WeakError::CapExceeded { .. })));
    }
}
