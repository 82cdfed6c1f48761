//! Operational semantics: process transitions, system transitions and the
//! composition operators on systems.

use std::fmt;
use std::sync::Arc;

use dashmap::DashMap;

use crate::dist::{Dist, Prob};
use crate::physics::{self, Env, PhysEnv, PhysError, PhysState};
use crate::syntax::{Node, Proc, SyntaxError};
use crate::value::{Decimal, Name, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SemError {
    #[error(transparent)]
    Phys(#[from] PhysError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("device `{0}` is used by the process but not declared by the physical state")]
    IllFormed(Name),
    #[error("output or write of an unbound value in `{0}`")]
    OpenValue(String),
}

/// Process-level labels.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Label {
    Tau,
    Out(Name, Value),
    In(Name, Value),
    Tick,
    Write(Name, Value),
    /// Sensor read; the continuation keeps the read value as a free variable.
    Read(Name),
}

/// System-level actions.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Tau,
    Out(Name, Value),
    In(Name, Value),
    Tick,
}

impl Action {
    pub fn is_tau(&self) -> bool {
        matches!(self, Action::Tau)
    }

    pub fn is_tick(&self) -> bool {
        matches!(self, Action::Tick)
    }

    pub fn is_visible(&self) -> bool {
        matches!(self, Action::Out(..) | Action::In(..))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Tau => f.write_str("tau"),
            Action::Tick => f.write_str("tick"),
            Action::Out(c, v) => write!(f, "out {c}({v})"),
            Action::In(c, v) => write!(f, "in {c}({v})"),
        }
    }
}

impl fmt::Debug for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A running system: environment, physical state and controlling process.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Live {
    pub env: Env,
    pub state: PhysState,
    pub proc: Proc,
}

/// A cyber-physical system, or the absorbing deadlocked system.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cps {
    Dead,
    Live(Arc<Live>),
}

impl Cps {
    pub fn live(env: Env, state: PhysState, proc: Proc) -> Cps {
        Cps::Live(Arc::new(Live { env, state, proc }))
    }

    pub fn is_dead(&self) -> bool {
        matches!(self, Cps::Dead)
    }

    pub fn as_live(&self) -> Option<&Live> {
        match self {
            Cps::Dead => None,
            Cps::Live(l) => Some(l),
        }
    }

    fn with_proc(l: &Live, state: &PhysState, p: Proc) -> Cps {
        Cps::live(l.env.clone(), state.clone(), p)
    }
}

impl fmt::Debug for Cps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cps::Dead => f.write_str("Dead"),
            Cps::Live(l) => write!(f, "{:?} ⋉ {}", l.state, l.proc),
        }
    }
}

fn closed_value(v: &crate::syntax::ValExpr, p: &Proc) -> Result<Value, SemError> {
    v.literal().cloned().ok_or_else(|| SemError::OpenValue(p.to_string()))
}

/// All process-level transitions of a closed canonical process.
///
/// Input prefixes are instantiated once per value in the channel's alphabet.
/// Read transitions return continuations with the read value still free.
pub fn proc_step(p: &Proc, alphabets: &PhysEnv) -> Result<Vec<(Label, Dist<Proc>)>, SemError> {
    let mut out = Vec::new();
    step_into(p, alphabets, &mut out)?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn step_into(p: &Proc, env: &PhysEnv, out: &mut Vec<(Label, Dist<Proc>)>) -> Result<(), SemError> {
    match p.node() {
        Node::Nil => out.push((Label::Tick, Dist::dirac(p.clone()))),
        Node::Tick(c) => out.push((Label::Tick, c.dist())),
        Node::Out { chan, value, cont, alt } => {
            out.push((Label::Out(chan.clone(), closed_value(value, p)?), cont.dist()));
            out.push((Label::Tick, alt.dist()));
        }
        Node::In { chan, cont, alt } => {
            let body = cont.dist();
            for v in env.alphabet(chan) {
                out.push((Label::In(chan.clone(), v.clone()), body.map(|q| q.instantiate(v))));
            }
            out.push((Label::Tick, alt.dist()));
        }
        Node::Read { sensor, cont } => out.push((Label::Read(sensor.clone()), cont.dist())),
        Node::Write { act, value, cont } => {
            out.push((Label::Write(act.clone(), closed_value(value, p)?), cont.dist()));
        }
        Node::Par(parts) => par_steps(parts, env, out)?,
        // A conditional survives only when its guard mentions a free variable.
        Node::If(..) | Node::Var(_) => {}
        Node::Restrict(body, c) => {
            let mut inner = Vec::new();
            step_into(body, env, &mut inner)?;
            for (l, d) in inner {
                if matches!(&l, Label::Out(x, _) | Label::In(x, _) if x == c) {
                    continue;
                }
                out.push((l, d.map(|q| Proc::restrict(q.clone(), c.clone()))));
            }
        }
        Node::Fix(_) => step_into(&p.unfold(), env, out)?,
    }
    Ok(())
}

fn par_steps(parts: &[Proc], env: &PhysEnv, out: &mut Vec<(Label, Dist<Proc>)>) -> Result<(), SemError> {
    let steps: Vec<Vec<(Label, Dist<Proc>)>> = parts.iter().map(|q| proc_step(q, env)).collect::<Result<_, _>>()?;
    // Rebuild the composition with the components in `replace` substituted.
    let rebuild = |replace: &[(usize, &Proc)]| -> Proc {
        let mut v: Vec<Proc> = parts.to_vec();
        for (i, q) in replace {
            v[*i] = (*q).clone();
        }
        Proc::par(v)
    };
    let mut has_tau = false;
    for (i, si) in steps.iter().enumerate() {
        for (l, d) in si {
            if *l == Label::Tick {
                continue;
            }
            has_tau |= *l == Label::Tau;
            out.push((l.clone(), d.map(|q| rebuild(&[(i, q)]))));
        }
    }
    for (i, si) in steps.iter().enumerate() {
        for (j, sj) in steps.iter().enumerate() {
            if i == j {
                continue;
            }
            for (l1, d1) in si {
                let Label::Out(c, v) = l1 else { continue };
                for (l2, d2) in sj {
                    if matches!(l2, Label::In(c2, v2) if c2 == c && v2 == v) {
                        has_tau = true;
                        out.push((Label::Tau, d1.product(d2, |a, b| rebuild(&[(i, a), (j, b)]))));
                    }
                }
            }
        }
    }
    if has_tau {
        return Ok(());
    }
    let mut ticks: Vec<Dist<Vec<Proc>>> = vec![Dist::dirac(Vec::new())];
    for si in &steps {
        let mine: Vec<&Dist<Proc>> = si.iter().filter(|(l, _)| *l == Label::Tick).map(|(_, d)| d).collect();
        if mine.is_empty() {
            return Ok(());
        }
        let mut next = Vec::new();
        for acc in &ticks {
            for d in &mine {
                next.push(acc.product(d, |v, q| {
                    let mut v = v.clone();
                    v.push(q.clone());
                    v
                }));
            }
        }
        ticks = next;
    }
    for t in ticks {
        out.push((Label::Tick, t.map(|v| Proc::par(v.clone()))));
    }
    Ok(())
}

/// Why a system-level transition fired.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Cause {
    /// Process-level step (internal synchronisation, output or input).
    Proc,
    Read(Name),
    Write(Name, Value),
    Time,
    Deadlock,
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cause::Proc => f.write_str("proc"),
            Cause::Read(s) => write!(f, "read {s}"),
            Cause::Write(a, v) => write!(f, "write {a}={v}"),
            Cause::Time => f.write_str("time"),
            Cause::Deadlock => f.write_str("deadlock"),
        }
    }
}

#[derive(Clone, Debug)]
enum MoveKind {
    Plain { state: PhysState, procs: Dist<Proc> },
    Read { values: Dist<Decimal>, open: Dist<Proc> },
    Tick { procs: Dist<Proc> },
    Dead,
}

/// A system transition whose target distribution is built on demand.
#[derive(Clone, Debug)]
pub struct Move {
    pub action: Action,
    pub cause: Cause,
    kind: MoveKind,
}

impl Move {
    /// The full target distribution.
    pub fn target(&self, from: &Cps) -> Result<Dist<Cps>, SemError> {
        let Some(l) = from.as_live() else { return Ok(Dist::dirac(Cps::Dead)) };
        Ok(match &self.kind {
            MoveKind::Dead => Dist::dirac(Cps::Dead),
            MoveKind::Plain { state, procs } => procs.map(|p| Cps::with_proc(l, state, p.clone())),
            MoveKind::Read { values, open } => {
                values.product(open, |v, p| Cps::with_proc(l, &l.state, p.instantiate(&Value::Num(*v))))
            }
            MoveKind::Tick { procs } => {
                physics::next(&l.env, &l.state)?.product(procs, |s, p| Cps::with_proc(l, s, p.clone()))
            }
        })
    }

    /// Draws one element of the target distribution.
    pub fn sample<R: rand::Rng>(&self, from: &Cps, rng: &mut R) -> Result<Cps, SemError> {
        let Some(l) = from.as_live() else { return Ok(Cps::Dead) };
        Ok(match &self.kind {
            MoveKind::Dead => Cps::Dead,
            MoveKind::Plain { state, procs } => Cps::with_proc(l, state, sample_dist(procs, rng).clone()),
            MoveKind::Read { values, open } => {
                let v = sample_dist(values, rng);
                Cps::with_proc(l, &l.state, sample_dist(open, rng).instantiate(&Value::Num(*v)))
            }
            MoveKind::Tick { procs } => {
                let s = physics::sample_next(&l.env, &l.state, rng)?;
                Cps::with_proc(l, &s, sample_dist(procs, rng).clone())
            }
        })
    }
}

/// Samples by inverse transform on the exact cumulative weights.
pub fn sample_dist<'a, T: Ord + Clone, R: rand::Rng>(d: &'a Dist<T>, rng: &mut R) -> &'a T {
    use num_traits::ToPrimitive;
    let u: f64 = rng.random::<f64>() * d.mass().to_f64().unwrap_or(1.0);
    let mut acc = 0.0;
    let mut last = None;
    for (x, p) in d.iter() {
        acc += p.to_f64().unwrap_or(0.0);
        last = Some(x);
        if u < acc {
            return x;
        }
    }
    last.expect("sampling from an empty distribution")
}

/// Memoises process-level transitions across many system states.
#[derive(Default)]
pub struct Stepper {
    cache: DashMap<(Proc, Env), Arc<Vec<(Label, Dist<Proc>)>>>,
}

impl Stepper {
    pub fn new() -> Self {
        Self::default()
    }

    fn proc_steps(&self, p: &Proc, env: &Env) -> Result<Arc<Vec<(Label, Dist<Proc>)>>, SemError> {
        let key = (p.clone(), env.clone());
        if let Some(v) = self.cache.get(&key) {
            return Ok(v.clone());
        }
        let v = Arc::new(proc_step(p, env)?);
        self.cache.insert(key, v.clone());
        Ok(v)
    }

    /// System transitions with lazily built targets.
    pub fn moves(&self, m: &Cps) -> Result<Vec<Move>, SemError> {
        let Some(l) = m.as_live() else { return Ok(Vec::new()) };
        if !physics::check_inv(&l.env, &l.state) {
            return Ok(vec![Move { action: Action::Tau, cause: Cause::Deadlock, kind: MoveKind::Dead }]);
        }
        let mut moves = Vec::new();
        let mut tick = None;
        for (label, procs) in self.proc_steps(&l.proc, &l.env)?.iter() {
            let plain = |state: PhysState| MoveKind::Plain { state, procs: procs.clone() };
            let mv = match label {
                Label::Tau => Move { action: Action::Tau, cause: Cause::Proc, kind: plain(l.state.clone()) },
                Label::Out(c, v) => {
                    Move { action: Action::Out(c.clone(), v.clone()), cause: Cause::Proc, kind: plain(l.state.clone()) }
                }
                Label::In(c, v) => {
                    Move { action: Action::In(c.clone(), v.clone()), cause: Cause::Proc, kind: plain(l.state.clone()) }
                }
                Label::Write(a, v) => {
                    let s = physics::update_act(&l.env, &l.state, a, v).map_err(|e| match e {
                        PhysError::UnknownActuator(n) => SemError::IllFormed(n),
                        e => e.into(),
                    })?;
                    Move { action: Action::Tau, cause: Cause::Write(a.clone(), v.clone()), kind: plain(s) }
                }
                Label::Read(s) => {
                    let values = physics::read_sensor(&l.env, &l.state, s).map_err(|e| match e {
                        PhysError::UnknownSensor(n) => SemError::IllFormed(n),
                        e => e.into(),
                    })?;
                    Move {
                        action: Action::Tau,
                        cause: Cause::Read(s.clone()),
                        kind: MoveKind::Read { values, open: procs.clone() },
                    }
                }
                Label::Tick => {
                    tick = Some(procs.clone());
                    continue;
                }
            };
            moves.push(mv);
        }
        if let Some(procs) = tick {
            if !moves.iter().any(|m| m.action.is_tau()) {
                moves.push(Move { action: Action::Tick, cause: Cause::Time, kind: MoveKind::Tick { procs } });
            }
        }
        Ok(moves)
    }

    /// System transitions with fully built target distributions.
    pub fn step(&self, m: &Cps) -> Result<Vec<(Action, Dist<Cps>)>, SemError> {
        let mut out = Vec::new();
        for mv in self.moves(m)? {
            out.push((mv.action.clone(), mv.target(m)?));
        }
        Ok(out)
    }
}

/// System transitions of `m` (no memoisation across calls).
pub fn cps_step(m: &Cps) -> Result<Vec<(Action, Dist<Cps>)>, SemError> {
    Stepper::new().step(m)
}

/// Every sensor and actuator mentioned by the process is declared.
pub fn well_formed(m: &Cps) -> Result<(), Name> {
    let Some(l) = m.as_live() else { return Ok(()) };
    let (sensors, acts) = l.proc.devices();
    for s in sensors {
        if l.env.sensor_index(&s).is_none() {
            return Err(s);
        }
    }
    for a in acts {
        if l.env.act_index(&a).is_none() {
            return Err(a);
        }
    }
    Ok(())
}

/// Physically disjoint union; the processes run in parallel.
pub fn disjoint_union(m1: &Cps, m2: &Cps) -> Result<Cps, SemError> {
    let (Some(a), Some(b)) = (m1.as_live(), m2.as_live()) else { return Ok(Cps::Dead) };
    let env = Env::new(PhysEnv::union(&a.env, &b.env)?);
    let state = PhysState::union(&a.state, &b.state);
    Ok(Cps::live(env, state, Proc::par(vec![a.proc.clone(), b.proc.clone()])))
}

/// `m \ c`.
pub fn restrict(m: &Cps, c: &Name) -> Cps {
    match m.as_live() {
        None => Cps::Dead,
        Some(l) => Cps::live(l.env.clone(), l.state.clone(), Proc::restrict(l.proc.clone(), c.clone())),
    }
}

/// Parallel composition with a pure-logical process.
pub fn compose_logic(m: &Cps, p: &Proc) -> Result<Cps, SemError> {
    p.check_pure_logical()?;
    if !p.is_closed() {
        return Err(SyntaxError::NotClosed(p.to_string()).into());
    }
    Ok(match m.as_live() {
        None => Cps::Dead,
        Some(l) => Cps::live(l.env.clone(), l.state.clone(), Proc::par(vec![l.proc.clone(), p.clone()])),
    })
}

/// Adds channel alphabets to the environment, merging with existing ones.
pub fn declare_channels(m: &Cps, chans: &[(Name, Vec<Value>)]) -> Cps {
    match m.as_live() {
        None => Cps::Dead,
        Some(l) => {
            let mut sorted: Vec<(Name, Vec<Value>)> = chans.to_vec();
            sorted.sort();
            let mut env = (*l.env).clone();
            env.channels = crate::physics::merge_alphabets(&env.channels, &sorted);
            Cps::live(Env::new(env), l.state.clone(), l.proc.clone())
        }
    }
}

/// Total mass check used by property tests.
pub fn is_full(d: &Dist<Cps>) -> bool {
    d.mass() == <Prob as num_traits::One>::one()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{ActSpec, GridInterval, SensorMode, SensorSpec, VarSpec};
    use crate::syntax::{Guard, PChoice, ValExpr};
    use crate::value::{name, CmpOp};

    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    fn num(s: &str) -> Value {
        Value::Num(d(s))
    }

    fn one(p: Proc) -> PChoice {
        PChoice::single(p)
    }

    fn env_with(channels: Vec<(Name, Vec<Value>)>) -> PhysEnv {
        PhysEnv {
            granularity: 1,
            vars: vec![VarSpec { name: name("x"), lo: d("0"), hi: d("5") }],
            sensors: vec![SensorSpec {
                name: name("s"),
                source: 0,
                noise: GridInterval::closed(d("0"), d("0"), 1).unwrap(),
                mode: SensorMode::AtTick,
            }],
            actuators: vec![ActSpec { name: name("a"), values: vec![(name("off"), d("0")), (name("on"), d("-1"))] }],
            evol: vec![vec![crate::physics::EvolRule {
                guard: crate::physics::Cond::True,
                op: crate::physics::UpdOp::Add,
                rhs: crate::physics::Rhs::Const(d("1")),
            }]],
            channels,
        }
    }

    fn sys(p: Proc, x: &str) -> Cps {
        let env = Env::new(env_with(vec![(name("c"), vec![num("5"), num("7")])]));
        Cps::live(env, PhysState { xs: vec![d(x)], ss: vec![d(x)], acts: vec![Value::atom("off")] }, p)
    }

    fn marker(c: &str) -> Proc {
        Proc::out(name(c), ValExpr::Lit(Value::atom("on")), one(Proc::nil()), one(Proc::nil()))
    }

    #[test]
    fn output_and_timeout() {
        let env = env_with(vec![]);
        let (c, dd) = (marker("k"), marker("m"));
        let p = Proc::out(name("c"), ValExpr::Lit(num("5")), one(c.clone()), one(dd.clone()));
        let steps = proc_step(&p, &env).unwrap();
        assert_eq!(steps, vec![(Label::Out(name("c"), num("5")), Dist::dirac(c)), (Label::Tick, Dist::dirac(dd))]);
    }

    #[test]
    fn nil_ticks() {
        let env = env_with(vec![]);
        assert_eq!(proc_step(&Proc::nil(), &env).unwrap(), vec![(Label::Tick, Dist::dirac(Proc::nil()))]);
    }

    #[test]
    fn communication_substitutes() {
        let env = env_with(vec![(name("c"), vec![num("5"), num("7")])]);
        let c1 = marker("k");
        let sender = Proc::out(name("c"), ValExpr::Lit(num("5")), one(c1.clone()), one(Proc::nil()));
        // in c(x). out r(x)
        let echo = Proc::out(name("r"), ValExpr::Var(0), one(Proc::nil()), one(Proc::nil()));
        let receiver = Proc::inp(name("c"), one(echo), one(Proc::nil()));
        let steps = proc_step(&Proc::par(vec![sender, receiver]), &env).unwrap();
        let expect =
            Proc::par(vec![c1, Proc::out(name("r"), ValExpr::Lit(num("5")), one(Proc::nil()), one(Proc::nil()))]);
        assert!(steps.contains(&(Label::Tau, Dist::dirac(expect))));
        // maximal progress at process level: no tick while a synchronisation is possible
        assert!(steps.iter().all(|(l, _)| *l != Label::Tick));
        // inputs are instantiated over the alphabet
        assert_eq!(steps.iter().filter(|(l, _)| matches!(l, Label::In(..))).count(), 2);
    }

    #[test]
    fn restriction_hides_channel() {
        let env = env_with(vec![]);
        let p = Proc::restrict(marker("w"), name("w"));
        let steps = proc_step(&p, &env).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].0, Label::Tick);
    }

    #[test]
    fn deadlock_when_invariant_fails() {
        let m = sys(Proc::fix(Proc::tick1(Proc::var(0))), "6");
        assert_eq!(cps_step(&m).unwrap(), vec![(Action::Tau, Dist::dirac(Cps::Dead))]);
        assert!(cps_step(&Cps::Dead).unwrap().is_empty());
    }

    #[test]
    fn read_then_branch() {
        // read s(x). if x > 2 then P else Q, with ξs(s) = 3
        let g = Guard::Cmp(CmpOp::Gt, ValExpr::Var(0), ValExpr::Lit(num("2")));
        let (p, q) = (marker("p"), marker("q"));
        let m = sys(Proc::read(name("s"), one(Proc::if_(g, p.clone(), q))), "3");
        let steps = cps_step(&m).unwrap();
        assert_eq!(steps.len(), 1);
        let (a, dist) = &steps[0];
        assert_eq!(*a, Action::Tau);
        assert_eq!(dist.as_dirac().unwrap().as_live().unwrap().proc, p);
    }

    #[test]
    fn write_updates_actuator_and_blocks_tick() {
        let m = sys(Proc::write(name("a"), ValExpr::Lit(Value::atom("on")), one(Proc::nil())), "1");
        let steps = cps_step(&m).unwrap();
        assert_eq!(steps.len(), 1);
        let t = steps[0].1.as_dirac().unwrap().as_live().unwrap().clone();
        assert_eq!(t.state.acts, vec![Value::atom("on")]);
        let bad = sys(Proc::write(name("fan"), ValExpr::Lit(Value::atom("on")), one(Proc::nil())), "1");
        assert_eq!(cps_step(&bad), Err(SemError::IllFormed(name("fan"))));
        assert_eq!(well_formed(&bad), Err(name("fan")));
        assert_eq!(well_formed(&Cps::Dead), Ok(()));
    }

    #[test]
    fn tick_moves_physics() {
        let m = sys(Proc::fix(Proc::tick1(Proc::var(0))), "1");
        let steps = cps_step(&m).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].0, Action::Tick);
        let t = steps[0].1.as_dirac().unwrap().as_live().unwrap().clone();
        assert_eq!(t.state.xs, vec![d("2")]);
        assert_eq!(t.proc, Proc::fix(Proc::tick1(Proc::var(0))));
    }

    #[test]
    fn compositions() {
        let m = sys(marker("w"), "1");
        let r = restrict(&m, &name("w"));
        assert!(cps_step(&r).unwrap().iter().all(|(a, _)| !a.is_visible()));
        assert!(compose_logic(&m, &Proc::read(name("s"), one(Proc::nil()))).is_err());
        let with_nil = compose_logic(&m, &Proc::nil()).unwrap();
        assert_eq!(cps_step(&with_nil).unwrap(), cps_step(&m).unwrap());
        assert_eq!(disjoint_union(&m, &Cps::Dead).unwrap(), Cps::Dead);
        assert!(matches!(disjoint_union(&m, &m), Err(SemError::Phys(PhysError::Collision(_)))));
    }
}
