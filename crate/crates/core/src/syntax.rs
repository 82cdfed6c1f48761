//! Process terms.
//!
//! Terms are nameless: value variables and process variables are de Bruijn
//! indices counted in two separate binder namespaces (value binders are the
//! input and read prefixes, process binders are `fix`). Alpha-equivalent terms
//! are therefore identical. Every term is hash-consed in a global table and
//! built only through smart constructors that keep it in canonical form:
//! parallel compositions are flattened, sorted and free of `nil`, and
//! conditionals with closed guards are replaced by the selected branch.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, LazyLock};

use dashmap::DashMap;
use num_traits::{One, Zero};

use crate::dist::{Dist, Prob};
use crate::value::{CmpOp, Name, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyntaxError {
    #[error("probabilistic choice weights sum to {0}, not 1")]
    WeightSum(Prob),
    #[error("probabilistic choice weight {0} outside (0,1]")]
    WeightRange(Prob),
    #[error("empty probabilistic choice")]
    EmptyChoice,
    #[error("recursion variable occurs outside a tick or timeout alternative in `{0}`")]
    Unguarded(String),
    #[error("term is not closed: {0}")]
    NotClosed(String),
    #[error("parallel composition under recursion in `{0}`")]
    NotFiniteControl(String),
    #[error("process is not pure-logical: it uses `{0}`")]
    NotPure(String),
}

/// A value position: literal or bound value variable (de Bruijn index).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum ValExpr {
    Lit(Value),
    Var(u32),
}

impl ValExpr {
    fn subst(&self, k: u32, v: &Value) -> ValExpr {
        match self {
            ValExpr::Var(i) if *i == k => ValExpr::Lit(v.clone()),
            ValExpr::Var(i) if *i > k => ValExpr::Var(i - 1),
            other => other.clone(),
        }
    }

    fn closed_at(&self, depth: u32) -> bool {
        match self {
            ValExpr::Lit(_) => true,
            ValExpr::Var(i) => *i < depth,
        }
    }

    pub fn literal(&self) -> Option<&Value> {
        match self {
            ValExpr::Lit(v) => Some(v),
            ValExpr::Var(_) => None,
        }
    }
}

/// Boolean guard over values.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Guard {
    True,
    False,
    Cmp(CmpOp, ValExpr, ValExpr),
    Not(Box<Guard>),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
}

impl Guard {
    fn subst(&self, k: u32, v: &Value) -> Guard {
        match self {
            Guard::True | Guard::False => self.clone(),
            Guard::Cmp(op, a, b) => Guard::Cmp(*op, a.subst(k, v), b.subst(k, v)),
            Guard::Not(g) => Guard::Not(Box::new(g.subst(k, v))),
            Guard::And(a, b) => Guard::And(Box::new(a.subst(k, v)), Box::new(b.subst(k, v))),
            Guard::Or(a, b) => Guard::Or(Box::new(a.subst(k, v)), Box::new(b.subst(k, v))),
        }
    }

    fn closed_at(&self, depth: u32) -> bool {
        match self {
            Guard::True | Guard::False => true,
            Guard::Cmp(_, a, b) => a.closed_at(depth) && b.closed_at(depth),
            Guard::Not(g) => g.closed_at(depth),
            Guard::And(a, b) | Guard::Or(a, b) => a.closed_at(depth) && b.closed_at(depth),
        }
    }

    /// Truth value of a closed guard.
    pub fn eval(&self) -> Option<bool> {
        Some(match self {
            Guard::True => true,
            Guard::False => false,
            Guard::Cmp(op, a, b) => op.eval(a.literal()?, b.literal()?),
            Guard::Not(g) => !g.eval()?,
            Guard::And(a, b) => a.eval()? && b.eval()?,
            Guard::Or(a, b) => a.eval()? || b.eval()?,
        })
    }
}

/// Probabilistic choice: weighted processes with weights summing to 1.
/// Branches are sorted and equal branches merged.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PChoice(Vec<(Proc, Prob)>);

impl PChoice {
    pub fn single(p: Proc) -> PChoice {
        PChoice(vec![(p, Prob::one())])
    }

    pub fn new(branches: Vec<(Prob, Proc)>) -> Result<PChoice, SyntaxError> {
        if branches.is_empty() {
            return Err(SyntaxError::EmptyChoice);
        }
        let mut total = Prob::zero();
        for (w, _) in &branches {
            if w <= &Prob::zero() || w > &Prob::one() {
                return Err(SyntaxError::WeightRange(w.clone()));
            }
            total += w;
        }
        if !total.is_one() {
            return Err(SyntaxError::WeightSum(total));
        }
        Ok(Self::from_dist(&Dist::from_weights(branches.into_iter().map(|(w, p)| (p, w)))))
    }

    fn from_dist(d: &Dist<Proc>) -> PChoice {
        PChoice(d.iter().map(|(p, w)| (p.clone(), w.clone())).collect())
    }

    pub fn branches(&self) -> impl Iterator<Item = (&Proc, &Prob)> {
        self.0.iter().map(|(p, w)| (p, w))
    }

    /// The denoted distribution over processes.
    pub fn dist(&self) -> Dist<Proc> {
        Dist::from_weights(self.0.iter().cloned())
    }

    pub fn as_single(&self) -> Option<&Proc> {
        match self.0.as_slice() {
            [(p, _)] => Some(p),
            _ => None,
        }
    }

    fn map(&self, mut f: impl FnMut(&Proc) -> Proc) -> PChoice {
        Self::from_dist(&Dist::from_weights(self.0.iter().map(|(p, w)| (f(p), w.clone()))))
    }
}

/// One layer of process syntax. Children are interned [`Proc`]s.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Nil,
    Tick(PChoice),
    /// `⌊chan!value.cont⌋alt`
    Out {
        chan: Name,
        value: ValExpr,
        cont: PChoice,
        alt: PChoice,
    },
    /// `⌊chan?(x).cont⌋alt`; `cont` is under one value binder, `alt` is not.
    In {
        chan: Name,
        cont: PChoice,
        alt: PChoice,
    },
    /// `read sensor(x).cont`; `cont` is under one value binder.
    Read {
        sensor: Name,
        cont: PChoice,
    },
    Write {
        act: Name,
        value: ValExpr,
        cont: PChoice,
    },
    Par(Vec<Proc>),
    If(Guard, Proc, Proc),
    Restrict(Proc, Name),
    Var(u32),
    Fix(Proc),
}

/// An interned, canonical process term. Equality and hashing are by identity,
/// which coincides with structural equality thanks to hash-consing; ordering
/// is structural, so it is stable across runs.
#[derive(Clone)]
pub struct Proc(Arc<Node>);

static TABLE: LazyLock<DashMap<Arc<Node>, ()>> = LazyLock::new(DashMap::new);

fn intern(node: Node) -> Proc {
    if let Some(e) = TABLE.get(&node) {
        return Proc(e.key().clone());
    }
    let e = TABLE.entry(Arc::new(node)).or_insert(());
    Proc(e.key().clone())
}

/// Number of distinct terms interned so far.
pub fn interned_terms() -> usize {
    TABLE.len()
}

impl PartialEq for Proc {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Proc {}

impl Hash for Proc {
    fn hash<H: Hasher>(&self, state: &mut H) {
        (Arc::as_ptr(&self.0) as usize).hash(state)
    }
}

impl PartialOrd for Proc {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Proc {
    fn cmp(&self, other: &Self) -> Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return Ordering::Equal;
        }
        self.0.as_ref().cmp(other.0.as_ref())
    }
}

impl Proc {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn nil() -> Proc {
        intern(Node::Nil)
    }

    pub fn is_nil(&self) -> bool {
        matches!(self.node(), Node::Nil)
    }

    pub fn tick(cont: PChoice) -> Proc {
        intern(Node::Tick(cont))
    }

    pub fn tick1(cont: Proc) -> Proc {
        Self::tick(PChoice::single(cont))
    }

    pub fn out(chan: Name, value: ValExpr, cont: PChoice, alt: PChoice) -> Proc {
        intern(Node::Out { chan, value, cont, alt })
    }

    pub fn inp(chan: Name, cont: PChoice, alt: PChoice) -> Proc {
        intern(Node::In { chan, cont, alt })
    }

    pub fn read(sensor: Name, cont: PChoice) -> Proc {
        intern(Node::Read { sensor, cont })
    }

    pub fn write(act: Name, value: ValExpr, cont: PChoice) -> Proc {
        intern(Node::Write { act, value, cont })
    }

    /// Canonical parallel composition.
    pub fn par(parts: Vec<Proc>) -> Proc {
        let mut flat = Vec::with_capacity(parts.len());
        for p in parts {
            match p.node() {
                Node::Par(inner) => flat.extend(inner.iter().cloned()),
                Node::Nil => {}
                _ => flat.push(p),
            }
        }
        match flat.len() {
            0 => Self::nil(),
            1 => flat.pop().unwrap(),
            _ => {
                flat.sort();
                intern(Node::Par(flat))
            }
        }
    }

    /// Conditional; a closed guard selects its branch immediately.
    pub fn if_(guard: Guard, then: Proc, els: Proc) -> Proc {
        match guard.eval() {
            Some(true) => then,
            Some(false) => els,
            None => intern(Node::If(guard, then, els)),
        }
    }

    pub fn restrict(body: Proc, chan: Name) -> Proc {
        if body.is_nil() {
            return body;
        }
        intern(Node::Restrict(body, chan))
    }

    pub fn var(i: u32) -> Proc {
        intern(Node::Var(i))
    }

    pub fn fix(body: Proc) -> Proc {
        intern(Node::Fix(body))
    }

    /// `self{v/x}` where `x` is the value variable with index `k`.
    pub fn subst_value(&self, k: u32, v: &Value) -> Proc {
        match self.node() {
            Node::Nil | Node::Var(_) => self.clone(),
            Node::Tick(c) => Self::tick(c.map(|p| p.subst_value(k, v))),
            Node::Out { chan, value, cont, alt } => Self::out(
                chan.clone(),
                value.subst(k, v),
                cont.map(|p| p.subst_value(k, v)),
                alt.map(|p| p.subst_value(k, v)),
            ),
            Node::In { chan, cont, alt } => {
                Self::inp(chan.clone(), cont.map(|p| p.subst_value(k + 1, v)), alt.map(|p| p.subst_value(k, v)))
            }
            Node::Read { sensor, cont } => Self::read(sensor.clone(), cont.map(|p| p.subst_value(k + 1, v))),
            Node::Write { act, value, cont } => {
                Self::write(act.clone(), value.subst(k, v), cont.map(|p| p.subst_value(k, v)))
            }
            Node::Par(ps) => Self::par(ps.iter().map(|p| p.subst_value(k, v)).collect()),
            Node::If(g, a, b) => Self::if_(g.subst(k, v), a.subst_value(k, v), b.subst_value(k, v)),
            Node::Restrict(p, c) => Self::restrict(p.subst_value(k, v), c.clone()),
            Node::Fix(b) => Self::fix(b.subst_value(k, v)),
        }
    }

    /// Instantiates the outermost value binder of an open continuation.
    pub fn instantiate(&self, v: &Value) -> Proc {
        self.subst_value(0, v)
    }

    /// `self{q/X}` where `X` is the process variable with index `k`; `q` must be closed.
    fn subst_proc(&self, k: u32, q: &Proc) -> Proc {
        match self.node() {
            Node::Nil => self.clone(),
            Node::Var(i) if *i == k => q.clone(),
            Node::Var(i) if *i > k => Self::var(i - 1),
            Node::Var(_) => self.clone(),
            Node::Tick(c) => Self::tick(c.map(|p| p.subst_proc(k, q))),
            Node::Out { chan, value, cont, alt } => Self::out(
                chan.clone(),
                value.clone(),
                cont.map(|p| p.subst_proc(k, q)),
                alt.map(|p| p.subst_proc(k, q)),
            ),
            Node::In { chan, cont, alt } => {
                Self::inp(chan.clone(), cont.map(|p| p.subst_proc(k, q)), alt.map(|p| p.subst_proc(k, q)))
            }
            Node::Read { sensor, cont } => Self::read(sensor.clone(), cont.map(|p| p.subst_proc(k, q))),
            Node::Write { act, value, cont } => {
                Self::write(act.clone(), value.clone(), cont.map(|p| p.subst_proc(k, q)))
            }
            Node::Par(ps) => Self::par(ps.iter().map(|p| p.subst_proc(k, q)).collect()),
            Node::If(g, a, b) => Self::if_(g.clone(), a.subst_proc(k, q), b.subst_proc(k, q)),
            Node::Restrict(p, c) => Self::restrict(p.subst_proc(k, q), c.clone()),
            Node::Fix(b) => Self::fix(b.subst_proc(k + 1, q)),
        }
    }

    /// One unfolding of a recursion: `fix X.P` becomes `P{fix X.P / X}`.
    /// Other terms are returned unchanged.
    pub fn unfold(&self) -> Proc {
        match self.node() {
            Node::Fix(body) => body.subst_proc(0, self),
            _ => self.clone(),
        }
    }

    /// Closedness under `vdepth` value binders and `pdepth` process binders.
    pub fn closed_at(&self, vdepth: u32, pdepth: u32) -> bool {
        let ch = |c: &PChoice, v: u32, p: u32| c.branches().all(|(q, _)| q.closed_at(v, p));
        match self.node() {
            Node::Nil => true,
            Node::Var(i) => *i < pdepth,
            Node::Tick(c) => ch(c, vdepth, pdepth),
            Node::Out { value, cont, alt, .. } => {
                value.closed_at(vdepth) && ch(cont, vdepth, pdepth) && ch(alt, vdepth, pdepth)
            }
            Node::In { cont, alt, .. } => ch(cont, vdepth + 1, pdepth) && ch(alt, vdepth, pdepth),
            Node::Read { cont, .. } => ch(cont, vdepth + 1, pdepth),
            Node::Write { value, cont, .. } => value.closed_at(vdepth) && ch(cont, vdepth, pdepth),
            Node::Par(ps) => ps.iter().all(|p| p.closed_at(vdepth, pdepth)),
            Node::If(g, a, b) => g.closed_at(vdepth) && a.closed_at(vdepth, pdepth) && b.closed_at(vdepth, pdepth),
            Node::Restrict(p, _) => p.closed_at(vdepth, pdepth),
            Node::Fix(b) => b.closed_at(vdepth, pdepth + 1),
        }
    }

    /// Whether the process variable with index `k` occurs free.
    pub fn mentions_proc_var(&self, k: u32) -> bool {
        match self.node() {
            Node::Var(i) => *i == k,
            Node::Fix(b) => b.mentions_proc_var(k + 1),
            _ => self.children().into_iter().any(|q| q.mentions_proc_var(k)),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed_at(0, 0)
    }

    /// Immediate subterms, including the branches of probabilistic choices.
    pub fn children(&self) -> Vec<&Proc> {
        fn ch(c: &PChoice) -> Vec<&Proc> {
            c.0.iter().map(|(p, _)| p).collect()
        }
        match self.node() {
            Node::Nil | Node::Var(_) => vec![],
            Node::Tick(c) | Node::Read { cont: c, .. } | Node::Write { cont: c, .. } => ch(c),
            Node::Out { cont, alt, .. } | Node::In { cont, alt, .. } => {
                let mut v = ch(cont);
                v.extend(ch(alt));
                v
            }
            Node::Par(ps) => ps.iter().collect(),
            Node::If(_, a, b) => vec![a, b],
            Node::Restrict(p, _) => vec![p],
            Node::Fix(b) => vec![b],
        }
    }

    fn walk(&self, f: &mut impl FnMut(&Proc)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Sensors and actuators syntactically mentioned.
    pub fn devices(&self) -> (BTreeSet<Name>, BTreeSet<Name>) {
        let mut sensors = BTreeSet::new();
        let mut acts = BTreeSet::new();
        self.walk(&mut |p| match p.node() {
            Node::Read { sensor, .. } => {
                sensors.insert(sensor.clone());
            }
            Node::Write { act, .. } => {
                acts.insert(act.clone());
            }
            _ => {}
        });
        (sensors, acts)
    }

    /// Channels syntactically mentioned (including restricted ones).
    pub fn channels(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.walk(&mut |p| match p.node() {
            Node::Out { chan, .. } | Node::In { chan, .. } | Node::Restrict(_, chan) => {
                out.insert(chan.clone());
            }
            _ => {}
        });
        out
    }

    /// Every occurrence of a recursion variable must lie below a tick prefix
    /// or a timeout alternative reached from its binder.
    pub fn check_time_guarded(&self) -> Result<(), SyntaxError> {
        fn go(p: &Proc, guarded: &mut Vec<bool>) -> Result<(), SyntaxError> {
            let guarded_sub = |c: &PChoice, g: &mut Vec<bool>| -> Result<(), SyntaxError> {
                let saved = g.clone();
                g.iter_mut().for_each(|b| *b = true);
                let r = c.branches().try_for_each(|(q, _)| go(q, g));
                *g = saved;
                r
            };
            match p.node() {
                Node::Var(i) => {
                    let n = guarded.len();
                    let idx = *i as usize;
                    if idx < n && !guarded[n - 1 - idx] {
                        return Err(SyntaxError::Unguarded(p.to_string()));
                    }
                    Ok(())
                }
                Node::Tick(c) => guarded_sub(c, guarded),
                Node::Out { cont, alt, .. } | Node::In { cont, alt, .. } => {
                    cont.branches().try_for_each(|(q, _)| go(q, guarded))?;
                    guarded_sub(alt, guarded)
                }
                Node::Fix(b) => {
                    guarded.push(false);
                    let r = go(b, guarded);
                    guarded.pop();
                    r
                }
                _ => p.children().into_iter().try_for_each(|q| go(q, guarded)),
            }
        }
        go(self, &mut Vec::new())
    }

    /// No parallel composition occurs under a recursion binder.
    pub fn check_finite_control(&self) -> Result<(), SyntaxError> {
        fn go(p: &Proc, under_fix: bool) -> Result<(), SyntaxError> {
            match p.node() {
                Node::Par(_) if under_fix => Err(SyntaxError::NotFiniteControl(p.to_string())),
                Node::Fix(b) => go(b, true),
                _ => p.children().into_iter().try_for_each(|q| go(q, under_fix)),
            }
        }
        go(self, false)
    }

    /// Pure-logical processes never read sensors or write actuators.
    pub fn check_pure_logical(&self) -> Result<(), SyntaxError> {
        let mut bad = None;
        self.walk(&mut |p| {
            if bad.is_none() {
                match p.node() {
                    Node::Read { sensor, .. } => bad = Some(format!("read {sensor}")),
                    Node::Write { act, .. } => bad = Some(format!("write {act}")),
                    _ => {}
                }
            }
        });
        match bad {
            Some(b) => Err(SyntaxError::NotPure(b)),
            None => Ok(()),
        }
    }

    /// Size of the term tree (shared subterms counted each time).
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }
}

/// Canonical form. Terms are canonical by construction, so this is the identity.
pub fn canonicalize(p: &Proc) -> Proc {
    p.clone()
}

/// `p{v/x}` for a closed value `v`, `x` given as a de Bruijn index.
pub fn substitute(p: &Proc, x: u32, v: &Value) -> Proc {
    p.subst_value(x, v)
}

pub fn unfold_fix(p: &Proc) -> Proc {
    p.unfold()
}

// Pretty printing in the surface syntax, with generated binder names.

fn fmt_val(v: &ValExpr, vdepth: u32) -> String {
    match v {
        ValExpr::Lit(x) => x.to_string(),
        ValExpr::Var(i) if *i < vdepth => format!("x{}", vdepth - 1 - i),
        ValExpr::Var(i) => format!("#free{}", i),
    }
}

fn fmt_guard(g: &Guard, vd: u32) -> String {
    match g {
        Guard::True => "true".into(),
        Guard::False => "false".into(),
        Guard::Cmp(op, a, b) => format!("{} {} {}", fmt_val(a, vd), op.symbol(), fmt_val(b, vd)),
        Guard::Not(x) => format!("not ({})", fmt_guard(x, vd)),
        Guard::And(a, b) => format!("({}) and ({})", fmt_guard(a, vd), fmt_guard(b, vd)),
        Guard::Or(a, b) => format!("({}) or ({})", fmt_guard(a, vd), fmt_guard(b, vd)),
    }
}

fn fmt_choice(c: &PChoice, vd: u32, pd: u32) -> String {
    match c.as_single() {
        Some(p) => fmt_unary(p, vd, pd),
        None => {
            let parts: Vec<String> = c.branches().map(|(p, w)| format!("{}: {}", w, fmt_proc(p, vd, pd))).collect();
            format!("{{ {} }}", parts.join(" | "))
        }
    }
}

fn fmt_unary(p: &Proc, vd: u32, pd: u32) -> String {
    match p.node() {
        Node::Par(_) | Node::Restrict(..) => format!("({})", fmt_proc(p, vd, pd)),
        _ => fmt_proc(p, vd, pd),
    }
}

fn fmt_proc(p: &Proc, vd: u32, pd: u32) -> String {
    match p.node() {
        Node::Nil => "nil".into(),
        Node::Var(i) if *i < pd => format!("X{}", pd - 1 - i),
        Node::Var(i) => format!("#X{}", i),
        Node::Tick(c) => format!("tick.{}", fmt_choice(c, vd, pd)),
        Node::Out { chan, value, cont, alt } => format!(
            "out {}({}).{} timeout {}",
            chan,
            fmt_val(value, vd),
            fmt_choice(cont, vd, pd),
            fmt_choice(alt, vd, pd)
        ),
        Node::In { chan, cont, alt } => {
            format!("in {}(x{}).{} timeout {}", chan, vd, fmt_choice(cont, vd + 1, pd), fmt_choice(alt, vd, pd))
        }
        Node::Read { sensor, cont } => format!("read {}(x{}).{}", sensor, vd, fmt_choice(cont, vd + 1, pd)),
        Node::Write { act, value, cont } => {
            format!("write {}({}).{}", act, fmt_val(value, vd), fmt_choice(cont, vd, pd))
        }
        Node::Par(ps) => ps.iter().map(|q| fmt_unary(q, vd, pd)).collect::<Vec<_>>().join(" || "),
        Node::If(g, a, b) => {
            format!("if {} then {} else {}", fmt_guard(g, vd), fmt_unary(a, vd, pd), fmt_unary(b, vd, pd))
        }
        Node::Restrict(q, c) => format!("{} \\ {}", fmt_unary(q, vd, pd), c),
        Node::Fix(b) => format!("fix X{}. {}", pd, fmt_unary(b, vd, pd + 1)),
    }
}

impl fmt::Display for Proc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&fmt_proc(self, 0, 0))
    }
}

impl fmt::Debug for Proc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Debug for PChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&fmt_choice(self, 0, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::prob;
    use crate::value::{name, Decimal};
    use proptest::prelude::*;

    fn num(v: i64) -> Value {
        Value::num(Decimal::from_int(v))
    }

    fn chan_out(c: &str, v: i64, cont: Proc, alt: Proc) -> Proc {
        Proc::out(name(c), ValExpr::Lit(num(v)), PChoice::single(cont), PChoice::single(alt))
    }

    #[test]
    fn nil_is_unit_of_par() {
        let p = Proc::tick1(Proc::nil());
        assert_eq!(Proc::par(vec![Proc::nil(), p.clone()]), p);
        assert_eq!(Proc::par(vec![Proc::nil(), Proc::nil()]), Proc::nil());
    }

    #[test]
    fn par_is_commutative_and_flat() {
        let p = chan_out("a", 1, Proc::nil(), Proc::nil());
        let q = chan_out("b", 2, Proc::nil(), Proc::nil());
        let r = Proc::tick1(Proc::nil());
        assert_eq!(Proc::par(vec![p.clone(), q.clone()]), Proc::par(vec![q.clone(), p.clone()]));
        let left = Proc::par(vec![Proc::par(vec![p.clone(), q.clone()]), r.clone()]);
        let right = Proc::par(vec![p, Proc::par(vec![r, q])]);
        assert_eq!(left, right);
    }

    #[test]
    fn alpha_equivalent_recursions_coincide() {
        // Both `fix X. tick.X` and `fix Y. tick.Y` denote the same nameless term.
        let a = Proc::fix(Proc::tick1(Proc::var(0)));
        let b = Proc::fix(Proc::tick1(Proc::var(0)));
        assert_eq!(a, b);
        assert!(Arc::ptr_eq(&a.0, &b.0));
    }

    #[test]
    fn substitution_evaluates_guards() {
        let p = chan_out("p", 1, Proc::nil(), Proc::nil());
        let q = chan_out("q", 2, Proc::nil(), Proc::nil());
        let g = Guard::Cmp(CmpOp::Gt, ValExpr::Var(0), ValExpr::Lit(num(10)));
        let body = Proc::if_(g, p.clone(), q.clone());
        assert_eq!(body.instantiate(&num(12)), p);
        assert_eq!(body.instantiate(&num(3)), q);
    }

    #[test]
    fn substitution_respects_binders() {
        // read s(y).(if y > 1 then P else Q) has no free variable: substitution leaves it alone.
        let p = chan_out("p", 1, Proc::nil(), Proc::nil());
        let q = chan_out("q", 2, Proc::nil(), Proc::nil());
        let g = Guard::Cmp(CmpOp::Gt, ValExpr::Var(0), ValExpr::Lit(num(1)));
        let r = Proc::read(name("s"), PChoice::single(Proc::if_(g, p, q)));
        assert!(r.is_closed());
        assert_eq!(r.subst_value(0, &num(5)), r);
    }

    #[test]
    fn substitution_reaches_under_other_binders() {
        // in c(y).(out d(x)) with x free at depth 0: under the binder x has index 1.
        let body = Proc::out(name("d"), ValExpr::Var(1), PChoice::single(Proc::nil()), PChoice::single(Proc::nil()));
        let p = Proc::inp(name("c"), PChoice::single(body), PChoice::single(Proc::nil()));
        assert!(!p.is_closed());
        let s = p.subst_value(0, &num(7));
        assert!(s.is_closed());
        let expect_body =
            Proc::out(name("d"), ValExpr::Lit(num(7)), PChoice::single(Proc::nil()), PChoice::single(Proc::nil()));
        assert_eq!(s, Proc::inp(name("c"), PChoice::single(expect_body), PChoice::single(Proc::nil())));
    }

    #[test]
    fn unfolding() {
        let f = Proc::fix(Proc::tick1(Proc::var(0)));
        assert_eq!(f.unfold(), Proc::tick1(f.clone()));
        let g = Proc::fix(chan_out("c", 1, Proc::var(0), Proc::var(0)));
        assert_eq!(g.unfold(), chan_out("c", 1, g.clone(), g.clone()));
        let twice = g.unfold().unfold();
        assert_eq!(twice, g.unfold());
    }

    #[test]
    fn time_guardedness() {
        assert!(Proc::fix(Proc::tick1(Proc::var(0))).check_time_guarded().is_ok());
        assert!(Proc::fix(chan_out("c", 1, Proc::nil(), Proc::var(0))).check_time_guarded().is_ok());
        assert!(Proc::fix(chan_out("c", 1, Proc::var(0), Proc::var(0))).check_time_guarded().is_err());
        // Guard through an outer tick covers inner occurrences.
        let inner = Proc::fix(chan_out("c", 1, Proc::var(1), Proc::var(0)));
        assert!(Proc::fix(Proc::tick1(inner.clone())).check_time_guarded().is_ok());
        assert!(Proc::fix(inner).check_time_guarded().is_err());
    }

    #[test]
    fn finite_control_and_purity() {
        let par = Proc::par(vec![Proc::tick1(Proc::var(0)), chan_out("c", 1, Proc::nil(), Proc::nil())]);
        assert!(Proc::fix(par.clone()).check_finite_control().is_err());
        assert!(Proc::par(vec![Proc::fix(Proc::tick1(Proc::var(0))), Proc::nil()]).check_finite_control().is_ok());
        let r = Proc::read(name("s"), PChoice::single(Proc::nil()));
        assert!(r.check_pure_logical().is_err());
        assert!(par.check_pure_logical().is_ok());
    }

    #[test]
    fn choice_weights_checked() {
        let a = Proc::tick1(Proc::nil());
        let b = chan_out("c", 1, Proc::nil(), Proc::nil());
        assert!(PChoice::new(vec![(prob(1, 2), a.clone()), (prob(1, 3), b.clone())]).is_err());
        let c = PChoice::new(vec![(prob(1, 2), a.clone()), (prob(1, 2), a.clone())]).unwrap();
        assert_eq!(c, PChoice::single(a));
    }

    fn arb_proc() -> impl Strategy<Value = Proc> {
        let leaf = prop_oneof![
            Just(Proc::nil()),
            (0i64..3).prop_map(|v| chan_out("c", v, Proc::nil(), Proc::nil())),
            Just(Proc::fix(Proc::tick1(Proc::var(0)))),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Proc::par),
                inner.clone().prop_map(Proc::tick1),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Proc::out(
                    name("d"),
                    ValExpr::Lit(Value::atom("on")),
                    PChoice::single(a),
                    PChoice::single(b)
                )),
                inner.prop_map(|a| Proc::restrict(a, name("c"))),
            ]
        })
    }

    proptest! {
        #[test]
        fn canonical_form_is_idempotent(p in arb_proc()) {
            prop_assert_eq!(canonicalize(&canonicalize(&p)), canonicalize(&p));
        }

        #[test]
        fn par_order_irrelevant(p in arb_proc(), q in arb_proc()) {
            prop_assert_eq!(Proc::par(vec![p.clone(), q.clone()]), Proc::par(vec![q, p]));
        }

        #[test]
        fn ordering_is_total_and_consistent(p in arb_proc(), q in arb_proc()) {
            prop_assert_eq!(p.cmp(&q) == Ordering::Equal, p == q);
            prop_assert_eq!(p.cmp(&q), q.cmp(&p).reverse());
        }
    }
}
