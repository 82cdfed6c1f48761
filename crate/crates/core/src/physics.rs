//! Physical states and declarative physical environments.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, LazyLock};

use dashmap::DashMap;

use crate::dist::{Dist, Prob};
use crate::value::{CmpOp, Decimal, Name, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PhysError {
    #[error("no evolution rule fires for variable `{0}`")]
    NoRule(Name),
    #[error("several evolution rules fire for variable `{0}`")]
    ManyRules(Name),
    #[error("unknown sensor `{0}`")]
    UnknownSensor(Name),
    #[error("unknown actuator `{0}`")]
    UnknownActuator(Name),
    #[error("value `{1}` is not in the alphabet of actuator `{0}`")]
    BadActuatorValue(Name, Value),
    #[error("interval [{0}, {1}] is not on the 10^-{2} grid or is empty")]
    BadInterval(Decimal, Decimal, u32),
    #[error("value overflow while evolving `{0}`")]
    Overflow(Name),
    #[error("physical name collision: {0:?}")]
    Collision(Vec<Name>),
}

/// The finite set `{lo + h·10^-g | h ∈ ℕ} ∩ [lo, hi]` (or `[lo, hi)` when half-open).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridInterval {
    pub lo: Decimal,
    pub hi: Decimal,
    pub g: u32,
    pub open_hi: bool,
}

impl GridInterval {
    pub fn closed(lo: Decimal, hi: Decimal, g: u32) -> Result<Self, PhysError> {
        Self::build(lo, hi, g, false)
    }

    pub fn half_open(lo: Decimal, hi: Decimal, g: u32) -> Result<Self, PhysError> {
        Self::build(lo, hi, g, true)
    }

    fn build(lo: Decimal, hi: Decimal, g: u32, open_hi: bool) -> Result<Self, PhysError> {
        if !lo.on_grid(g) || !hi.on_grid(g) || lo > hi || (open_hi && lo == hi) {
            return Err(PhysError::BadInterval(lo, hi, g));
        }
        Ok(GridInterval { lo, hi, g, open_hi })
    }

    /// Number of grid points.
    pub fn len(&self) -> u64 {
        let step = Decimal::step(self.g).units();
        let n = ((self.hi.units() - self.lo.units()) / step) as u64;
        if self.open_hi {
            n
        } else {
            n + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Decimal> {
        let step = Decimal::step(self.g).units();
        (0..self.len() as i64).map(|h| Decimal::from_units(self.lo.units() + h * step)).collect()
    }

    pub fn contains(&self, x: Decimal) -> bool {
        x.on_grid(self.g) && x >= self.lo && (x < self.hi || (!self.open_hi && x == self.hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SensorMode {
    /// The sensor is sampled once per slot; reads return the stored value.
    AtTick,
    /// Every read samples a fresh measurement.
    AtRead,
}

/// A term in an evolution guard.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PTerm {
    Var(usize),
    Act(usize),
    Lit(Value),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cond {
    True,
    False,
    Cmp(CmpOp, PTerm, PTerm),
    Not(Box<Cond>),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
}

impl Cond {
    fn term(t: &PTerm, s: &PhysState) -> Value {
        match t {
            PTerm::Var(i) => Value::Num(s.xs[*i]),
            PTerm::Act(i) => s.acts[*i].clone(),
            PTerm::Lit(v) => v.clone(),
        }
    }

    pub fn eval(&self, s: &PhysState) -> bool {
        match self {
            Cond::True => true,
            Cond::False => false,
            Cond::Cmp(op, a, b) => op.eval(&Self::term(a, s), &Self::term(b, s)),
            Cond::Not(c) => !c.eval(s),
            Cond::And(a, b) => a.eval(s) && b.eval(s),
            Cond::Or(a, b) => a.eval(s) || b.eval(s),
        }
    }

    fn shift(&self, dv: usize, da: usize) -> Cond {
        let t = |t: &PTerm| match t {
            PTerm::Var(i) => PTerm::Var(i + dv),
            PTerm::Act(i) => PTerm::Act(i + da),
            PTerm::Lit(v) => PTerm::Lit(v.clone()),
        };
        match self {
            Cond::True | Cond::False => self.clone(),
            Cond::Cmp(op, a, b) => Cond::Cmp(*op, t(a), t(b)),
            Cond::Not(c) => Cond::Not(Box::new(c.shift(dv, da))),
            Cond::And(a, b) => Cond::And(Box::new(a.shift(dv, da)), Box::new(b.shift(dv, da))),
            Cond::Or(a, b) => Cond::Or(Box::new(a.shift(dv, da)), Box::new(b.shift(dv, da))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UpdOp {
    Add,
    Sub,
    Set,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rhs {
    Uniform(GridInterval),
    Const(Decimal),
}

impl Rhs {
    fn points(&self) -> Vec<Decimal> {
        match self {
            Rhs::Uniform(gi) => gi.points(),
            Rhs::Const(c) => vec![*c],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EvolRule {
    pub guard: Cond,
    pub op: UpdOp,
    pub rhs: Rhs,
}

/// A state variable and its invariant interval.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarSpec {
    pub name: Name,
    pub lo: Decimal,
    pub hi: Decimal,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorSpec {
    pub name: Name,
    pub source: usize,
    pub noise: GridInterval,
    pub mode: SensorMode,
}

/// An actuator with its symbolic values and their numeric codes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActSpec {
    pub name: Name,
    pub values: Vec<(Name, Decimal)>,
}

impl ActSpec {
    pub fn admits(&self, v: &Value) -> bool {
        matches!(v, Value::Atom(a) if self.values.iter().any(|(n, _)| n == a))
    }
}

/// A physical environment together with the channel alphabets of the model.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhysEnv {
    pub granularity: u32,
    pub vars: Vec<VarSpec>,
    pub sensors: Vec<SensorSpec>,
    pub actuators: Vec<ActSpec>,
    /// Evolution rules, indexed like `vars`.
    pub evol: Vec<Vec<EvolRule>>,
    /// Finite alphabets of the channels, sorted by name.
    pub channels: Vec<(Name, Vec<Value>)>,
}

impl PhysEnv {
    pub fn var_index(&self, n: &str) -> Option<usize> {
        self.vars.iter().position(|v| &*v.name == n)
    }

    pub fn sensor_index(&self, n: &str) -> Option<usize> {
        self.sensors.iter().position(|v| &*v.name == n)
    }

    pub fn act_index(&self, n: &str) -> Option<usize> {
        self.actuators.iter().position(|v| &*v.name == n)
    }

    pub fn alphabet(&self, chan: &str) -> &[Value] {
        self.channels.binary_search_by(|(c, _)| (**c).cmp(chan)).map(|i| self.channels[i].1.as_slice()).unwrap_or(&[])
    }

    /// Disjoint union of two environments. Channel alphabets are merged.
    pub fn union(a: &PhysEnv, b: &PhysEnv) -> Result<PhysEnv, PhysError> {
        let mut clash = Vec::new();
        for v in &b.vars {
            if a.var_index(&v.name).is_some() {
                clash.push(v.name.clone());
            }
        }
        for s in &b.sensors {
            if a.sensor_index(&s.name).is_some() {
                clash.push(s.name.clone());
            }
        }
        for x in &b.actuators {
            if a.act_index(&x.name).is_some() {
                clash.push(x.name.clone());
            }
        }
        if !clash.is_empty() {
            return Err(PhysError::Collision(clash));
        }
        let dv = a.vars.len();
        let da = a.actuators.len();
        let mut out = a.clone();
        out.granularity = a.granularity.max(b.granularity);
        out.vars.extend(b.vars.iter().cloned());
        out.sensors.extend(b.sensors.iter().map(|s| SensorSpec { source: s.source + dv, ..s.clone() }));
        out.actuators.extend(b.actuators.iter().cloned());
        out.evol.extend(
            b.evol
                .iter()
                .map(|rules| rules.iter().map(|r| EvolRule { guard: r.guard.shift(dv, da), ..r.clone() }).collect()),
        );
        out.channels = merge_alphabets(&a.channels, &b.channels);
        Ok(out)
    }
}

/// Union of two sorted channel-alphabet lists.
pub fn merge_alphabets(a: &[(Name, Vec<Value>)], b: &[(Name, Vec<Value>)]) -> Vec<(Name, Vec<Value>)> {
    let mut map: std::collections::BTreeMap<Name, std::collections::BTreeSet<Value>> = Default::default();
    for (c, vs) in a.iter().chain(b) {
        map.entry(c.clone()).or_default().extend(vs.iter().cloned());
    }
    map.into_iter().map(|(c, vs)| (c, vs.into_iter().collect())).collect()
}

/// Interned environment handle. Equality and hashing are by identity, which
/// coincides with structural equality.
#[derive(Clone)]
pub struct Env(Arc<PhysEnv>);

static ENVS: LazyLock<DashMap<Arc<PhysEnv>, ()>> = LazyLock::new(DashMap::new);

impl Env {
    pub fn new(e: PhysEnv) -> Env {
        if let Some(x) = ENVS.get(&e) {
            return Env(x.key().clone());
        }
        Env(ENVS.entry(Arc::new(e)).or_insert(()).key().clone())
    }
}

impl std::ops::Deref for Env {
    type Target = PhysEnv;
    fn deref(&self) -> &PhysEnv {
        &self.0
    }
}

impl PartialEq for Env {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Env {}

impl Hash for Env {
    fn hash<H: Hasher>(&self, state: &mut H) {
        (Arc::as_ptr(&self.0) as usize).hash(state)
    }
}

impl PartialOrd for Env {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Env {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return std::cmp::Ordering::Equal;
        }
        self.0.as_ref().cmp(other.0.as_ref())
    }
}

impl fmt::Debug for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.vars.iter().map(|v| &*v.name).collect();
        write!(f, "Env{:?}", names)
    }
}

/// Concrete valuation of variables, sensors and actuators, indexed by
/// declaration order in the environment.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhysState {
    pub xs: Vec<Decimal>,
    pub ss: Vec<Decimal>,
    pub acts: Vec<Value>,
}

impl PhysState {
    pub fn union(a: &PhysState, b: &PhysState) -> PhysState {
        PhysState {
            xs: a.xs.iter().chain(&b.xs).copied().collect(),
            ss: a.ss.iter().chain(&b.ss).copied().collect(),
            acts: a.acts.iter().chain(&b.acts).cloned().collect(),
        }
    }
}

impl fmt::Debug for PhysState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨x={:?} s={:?} a={:?}⟩", self.xs, self.ss, self.acts)
    }
}

fn uniform_decimals(points: Vec<Decimal>) -> Dist<Decimal> {
    Dist::uniform(points)
}

/// Distribution of one variable's next value.
fn evol_var(env: &PhysEnv, s: &PhysState, i: usize) -> Result<Dist<Decimal>, PhysError> {
    let name = &env.vars[i].name;
    let mut firing = env.evol[i].iter().filter(|r| r.guard.eval(s));
    let rule = firing.next().ok_or_else(|| PhysError::NoRule(name.clone()))?;
    if firing.next().is_some() {
        return Err(PhysError::ManyRules(name.clone()));
    }
    let x = s.xs[i];
    let mut out = Vec::new();
    for p in rule.rhs.points() {
        let v = match rule.op {
            UpdOp::Add => x.checked_add(p),
            UpdOp::Sub => x.checked_sub(p),
            UpdOp::Set => Some(p),
        };
        out.push(v.ok_or_else(|| PhysError::Overflow(name.clone()))?);
    }
    Ok(uniform_decimals(out))
}

fn product_vec(parts: Vec<Dist<Decimal>>) -> Dist<Vec<Decimal>> {
    parts.into_iter().fold(Dist::dirac(Vec::new()), |acc, d| {
        acc.product(&d, |v, x| {
            let mut v = v.clone();
            v.push(*x);
            v
        })
    })
}

/// Evolution map: product over variables of the firing rule's update.
pub fn evol(env: &PhysEnv, s: &PhysState) -> Result<Dist<Vec<Decimal>>, PhysError> {
    let parts = (0..env.vars.len()).map(|i| evol_var(env, s, i)).collect::<Result<Vec<_>, _>>()?;
    Ok(product_vec(parts))
}

/// Fresh measurement of one sensor from the variable valuation `xs`.
fn sample_sensor(env: &PhysEnv, xs: &[Decimal], j: usize) -> Result<Dist<Decimal>, PhysError> {
    let spec = &env.sensors[j];
    let base = xs[spec.source];
    let pts = spec
        .noise
        .points()
        .into_iter()
        .map(|e| base.checked_add(e).ok_or_else(|| PhysError::Overflow(spec.name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(uniform_decimals(pts))
}

/// Measurement map at the start of a slot. Sensors in read mode keep their
/// stored value `prev`.
pub fn meas(env: &PhysEnv, xs: &[Decimal], prev: &[Decimal]) -> Result<Dist<Vec<Decimal>>, PhysError> {
    let parts = (0..env.sensors.len())
        .map(|j| match env.sensors[j].mode {
            SensorMode::AtTick => sample_sensor(env, xs, j),
            SensorMode::AtRead => Ok(Dist::dirac(prev[j])),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(product_vec(parts))
}

/// Physical successor distribution for the next time slot.
pub fn next(env: &PhysEnv, s: &PhysState) -> Result<Dist<PhysState>, PhysError> {
    let ev = evol(env, s)?;
    let mut items: Vec<(PhysState, Prob)> = Vec::new();
    for (xs, p) in ev.iter() {
        for (ss, q) in meas(env, xs, &s.ss)?.iter() {
            items.push((PhysState { xs: xs.clone(), ss: ss.clone(), acts: s.acts.clone() }, p * q));
        }
    }
    Ok(Dist::from_weights(items))
}

pub fn check_inv(env: &PhysEnv, s: &PhysState) -> bool {
    env.vars.iter().zip(&s.xs).all(|(v, x)| *x >= v.lo && *x <= v.hi)
}

pub fn update_act(env: &PhysEnv, s: &PhysState, act: &str, v: &Value) -> Result<PhysState, PhysError> {
    let i = env.act_index(act).ok_or_else(|| PhysError::UnknownActuator(act.into()))?;
    if !env.actuators[i].admits(v) {
        return Err(PhysError::BadActuatorValue(act.into(), v.clone()));
    }
    let mut out = s.clone();
    out.acts[i] = v.clone();
    Ok(out)
}

/// Distribution of the value returned by reading `sensor`.
pub fn read_sensor(env: &PhysEnv, s: &PhysState, sensor: &str) -> Result<Dist<Decimal>, PhysError> {
    let j = env.sensor_index(sensor).ok_or_else(|| PhysError::UnknownSensor(sensor.into()))?;
    match env.sensors[j].mode {
        SensorMode::AtTick => Ok(Dist::dirac(s.ss[j])),
        SensorMode::AtRead => sample_sensor(env, &s.xs, j),
    }
}

/// Samples one successor of [`next`] without building the full product.
pub fn sample_next<R: rand::Rng>(env: &PhysEnv, s: &PhysState, rng: &mut R) -> Result<PhysState, PhysError> {
    let pick = |d: &Dist<Decimal>, rng: &mut R| -> Decimal {
        // Every per-variable distribution here is uniform.
        let i = rng.random_range(0..d.len());
        *d.support().nth(i).unwrap()
    };
    let mut xs = Vec::with_capacity(env.vars.len());
    for i in 0..env.vars.len() {
        xs.push(pick(&evol_var(env, s, i)?, rng));
    }
    let mut ss = Vec::with_capacity(env.sensors.len());
    for j in 0..env.sensors.len() {
        ss.push(match env.sensors[j].mode {
            SensorMode::AtTick => pick(&sample_sensor(env, &xs, j)?, rng),
            SensorMode::AtRead => s.ss[j],
        });
    }
    Ok(PhysState { xs, ss, acts: s.acts.clone() })
}
