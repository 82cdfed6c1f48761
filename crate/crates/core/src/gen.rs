//! Seeded generators of random models and pure-logical processes, used by
//! the property suites and the acceptance runner.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::prob;
use crate::modeldsl::{
    build_model, ActDecl, ChanDecl, Choice, EvolDecl, GExpr, Ident, ModelFile, PExpr, ProcDef, RhsDecl, SensorDecl,
    VExpr, VarDecl,
};
use crate::physics::{SensorMode, UpdOp};
use crate::syntax::Proc;
use crate::value::{CmpOp, Decimal, Value};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Channels shared by every generated model: `c` over `{a, b}`, `d` over `{a}`.
pub fn shared_channels() -> Vec<ChanDecl> {
    vec![
        ChanDecl { name: "c".into(), alphabet: vec![Value::atom("a"), Value::atom("b")], span: Default::default() },
        ChanDecl { name: "d".into(), alphabet: vec![Value::atom("a")], span: Default::default() },
    ]
}

fn dec(m: i64, g: u32) -> Decimal {
    Decimal::from_parts(m, g)
}

fn id(n: &str) -> Ident {
    Ident::new(n)
}

fn lit(v: &Value) -> VExpr {
    match v {
        Value::Num(d) => VExpr::Num(*d),
        Value::Atom(a) => VExpr::Ident(id(a)),
    }
}

#[derive(Clone)]
enum Bound {
    Chan(usize),
    Sensor,
}

struct Body<'r, R: Rng> {
    rng: &'r mut R,
    g: u32,
    refs: Vec<String>,
    sensors: Vec<String>,
    acts: Vec<(String, Vec<String>)>,
    chans: Vec<(String, Vec<Value>)>,
    rich: bool,
    fresh: u32,
}

impl<R: Rng> Body<'_, R> {
    fn fresh(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("{base}{}", self.fresh)
    }

    fn leaf(&mut self, guarded: bool) -> PExpr {
        if self.refs.is_empty() || self.rng.random_bool(0.1) {
            return if guarded { PExpr::Nil } else { PExpr::tick(PExpr::Nil) };
        }
        let r = PExpr::reference(self.refs.choose(self.rng).unwrap());
        if guarded {
            r
        } else {
            PExpr::tick(r)
        }
    }

    fn choice(&mut self, depth: u32, guarded: bool, bound: &mut Vec<(String, Bound)>) -> Choice {
        if depth == 0 || !self.rng.random_bool(0.25) {
            return Choice::one(self.expr(depth, guarded, bound));
        }
        let (n, d) = *[(1, 2), (1, 3), (1, 4), (2, 5)].choose(self.rng).unwrap();
        let a = self.expr(depth, guarded, bound);
        let b = self.expr(depth, guarded, bound);
        Choice::Many(vec![(prob(n, d), a), (prob(d - n, d), b)])
    }

    fn guard(&mut self, bound: &[(String, Bound)]) -> GExpr {
        let base = match bound.choose(self.rng) {
            Some((x, Bound::Chan(c))) if self.rng.random_bool(0.8) => {
                let v = self.chans[*c].1.choose(self.rng).unwrap().clone();
                let op = if self.rng.random_bool(0.5) { CmpOp::Eq } else { CmpOp::Ne };
                GExpr::Cmp(op, VExpr::Ident(id(x)), lit(&v))
            }
            Some((x, Bound::Sensor)) if self.rng.random_bool(0.8) => {
                let op = *[CmpOp::Gt, CmpOp::Le, CmpOp::Lt, CmpOp::Ge].choose(self.rng).unwrap();
                let k = self.rng.random_range(0..=3);
                GExpr::Cmp(op, VExpr::Ident(id(x)), VExpr::Num(dec(k, self.g)))
            }
            _ => {
                if self.rng.random_bool(0.5) {
                    GExpr::True
                } else {
                    GExpr::False
                }
            }
        };
        if !self.rich || self.rng.random_bool(0.6) {
            return base;
        }
        match self.rng.random_range(0..3) {
            0 => GExpr::Not(Box::new(base)),
            1 => GExpr::And(Box::new(base), Box::new(self.guard(bound))),
            _ => GExpr::Or(Box::new(base), Box::new(self.guard(bound))),
        }
    }

    /// A process term; `guarded` says a tick or timeout alternative lies
    /// between this position and the enclosing definition.
    fn expr(&mut self, depth: u32, guarded: bool, bound: &mut Vec<(String, Bound)>) -> PExpr {
        if depth == 0 {
            return self.leaf(guarded);
        }
        let d = depth - 1;
        let kinds = if self.rich { 10 } else { 7 };
        match self.rng.random_range(0..kinds) {
            0 => PExpr::Tick(self.choice(d, true, bound)),
            1 if !self.chans.is_empty() => {
                let c = self.rng.random_range(0..self.chans.len());
                let v = self.chans[c].1.choose(self.rng).unwrap().clone();
                let cont = self.choice(d, guarded, bound);
                let alt = self.choice(d, true, bound);
                PExpr::Out { chan: id(&self.chans[c].0), value: lit(&v), cont, alt }
            }
            2 if !self.chans.is_empty() => {
                let c = self.rng.random_range(0..self.chans.len());
                let x = self.fresh("y");
                let alt = self.choice(d, true, bound);
                bound.push((x.clone(), Bound::Chan(c)));
                let cont = self.choice(d, guarded, bound);
                bound.pop();
                PExpr::In { chan: id(&self.chans[c].0), var: x, cont, alt }
            }
            3 if !self.sensors.is_empty() => {
                let s = self.sensors.choose(self.rng).unwrap().clone();
                let x = self.fresh("z");
                bound.push((x.clone(), Bound::Sensor));
                let cont = self.choice(d, guarded, bound);
                bound.pop();
                PExpr::Read { sensor: id(&s), var: x, cont }
            }
            4 if !self.acts.is_empty() => {
                let (a, vals) = self.acts.choose(self.rng).unwrap().clone();
                let v = vals.choose(self.rng).unwrap().clone();
                let cont = self.choice(d, guarded, bound);
                PExpr::Write { act: id(&a), value: VExpr::Ident(id(&v)), cont }
            }
            5 => {
                let g = self.guard(bound);
                let a = self.expr(d, guarded, bound);
                let b = self.expr(d, guarded, bound);
                PExpr::If(g, Box::new(a), Box::new(b))
            }
            7 => PExpr::Par(vec![self.expr(d, guarded, bound), self.expr(d, guarded, bound)]),
            8 if !self.chans.is_empty() => {
                let c = self.chans.choose(self.rng).unwrap().0.clone();
                PExpr::Restrict(Box::new(self.expr(d, guarded, bound)), id(&c))
            }
            9 => {
                let x = self.fresh("X");
                self.refs.push(x.clone());
                let body = self.expr(d, false, bound);
                self.refs.pop();
                PExpr::Fix(x, Box::new(body))
            }
            _ => PExpr::Tick(self.choice(d, true, bound)),
        }
    }
}

/// A tiny model whose devices carry `suffix`, so models built with distinct
/// suffixes are physically disjoint. One variable in `[0, hi]` drifts upward
/// while the actuator is on, so invariant violations are reachable.
pub fn small_model<R: Rng>(rng: &mut R, suffix: &str) -> ModelFile {
    let g = 1;
    let (x, s, h) = (format!("x{suffix}"), format!("s{suffix}"), format!("h{suffix}"));
    let mut mf = ModelFile::empty(&format!("m{suffix}"), g);
    let hi = rng.random_range(1..=3);
    mf.vars.push(VarDecl { name: x.clone(), init: dec(0, g), lo: dec(0, g), hi: dec(hi, g), span: Default::default() });
    let noise = if rng.random_bool(0.5) { 0 } else { 1 };
    mf.sensors.push(SensorDecl {
        name: s.clone(),
        source: id(&x),
        noise: (dec(0, g), dec(noise, g)),
        mode: SensorMode::AtTick,
        span: Default::default(),
    });
    mf.actuators.push(ActDecl {
        name: h.clone(),
        values: vec![("off".into(), None), ("on".into(), None)],
        init: "off".into(),
        span: Default::default(),
    });
    mf.channels = shared_channels();
    let when = |v: &str| GExpr::Cmp(CmpOp::Eq, VExpr::Ident(id(&h)), VExpr::Ident(id(v)));
    mf.evolution.push(EvolDecl {
        guard: when("off"),
        var: id(&x),
        op: UpdOp::Add,
        rhs: RhsDecl::Const(dec(0, g)),
        span: Default::default(),
    });
    mf.evolution.push(EvolDecl {
        guard: when("on"),
        var: id(&x),
        op: UpdOp::Add,
        rhs: RhsDecl::Uniform(dec(0, g), dec(1, g)),
        span: Default::default(),
    });
    let names: Vec<String> = (0..2).map(|i| format!("P{suffix}{i}")).collect();
    let mut body = Body {
        rng,
        g,
        refs: names.clone(),
        sensors: vec![s],
        acts: vec![(h, vec!["off".into(), "on".into()])],
        chans: mf.channels.iter().map(|c| (c.name.clone(), c.alphabet.clone())).collect(),
        rich: false,
        fresh: 0,
    };
    for n in &names {
        let e = body.expr(3, false, &mut Vec::new());
        mf.procs.push(ProcDef { name: n.clone(), body: e, span: Default::default() });
    }
    mf.main = if body.rng.random_bool(0.3) {
        PExpr::Par(vec![PExpr::reference(&names[0]), PExpr::reference(&names[1])])
    } else {
        PExpr::reference(&names[0])
    };
    mf
}

/// A closed pure-logical process over the shared channels.
pub fn logic_process<R: Rng>(rng: &mut R) -> Proc {
    let mut mf = ModelFile::empty("logic", 1);
    mf.channels = shared_channels();
    let mut body = Body {
        rng,
        g: 1,
        refs: vec![],
        sensors: vec![],
        acts: vec![],
        chans: mf.channels.iter().map(|c| (c.name.clone(), c.alphabet.clone())).collect(),
        rich: false,
        fresh: 0,
    };
    body.refs.push("L".into());
    let e = body.expr(3, false, &mut Vec::new());
    mf.main = PExpr::Fix("L".into(), Box::new(e));
    let m = build_model(&mf).expect("generated process is valid");
    m.as_live().expect("live").proc.clone()
}

/// A model exercising the whole surface syntax, for round-trip checks.
/// Its state space is not meant to be explored.
pub fn corpus_model<R: Rng>(rng: &mut R) -> ModelFile {
    let g = rng.random_range(1..=3);
    let mut mf = ModelFile::empty(&format!("corpus{}", rng.random_range(0..1000)), g);
    let nvars = rng.random_range(0..=2);
    for i in 0..nvars {
        let lo = rng.random_range(-20..=0);
        let hi = rng.random_range(1..=40);
        let init = rng.random_range(lo..=hi);
        mf.vars.push(VarDecl {
            name: format!("v{i}"),
            init: dec(init, g),
            lo: dec(lo, g),
            hi: dec(hi, g),
            span: Default::default(),
        });
        let e = rng.random_range(0..=3);
        let mode = if rng.random_bool(0.5) { SensorMode::AtTick } else { SensorMode::AtRead };
        mf.sensors.push(SensorDecl {
            name: format!("s{i}"),
            source: id(&format!("v{i}")),
            noise: (dec(-e, g), dec(e, g)),
            mode,
            span: Default::default(),
        });
        let coded = rng.random_bool(0.5);
        let values: Vec<(String, Option<Decimal>)> = ["lo", "mid", "hi"][..rng.random_range(1..=3)]
            .iter()
            .enumerate()
            .map(|(k, v)| (v.to_string(), coded.then(|| dec(k as i64 * 5 - 5, g))))
            .collect();
        let init = values.choose(rng).unwrap().0.clone();
        mf.actuators.push(ActDecl { name: format!("k{i}"), values, init, span: Default::default() });
    }
    let nchans = rng.random_range(0..=3);
    for i in 0..nchans {
        let mut alphabet = vec![Value::atom("a")];
        if rng.random_bool(0.5) {
            alphabet.push(Value::atom("b"));
        }
        if rng.random_bool(0.5) {
            alphabet.push(Value::num(dec(rng.random_range(-30..30), g)));
        }
        alphabet.sort();
        alphabet.dedup();
        mf.channels.push(ChanDecl { name: format!("ch{i}"), alphabet, span: Default::default() });
    }
    for i in 0..nvars {
        let act = &mf.actuators[i];
        for (v, _) in &act.values {
            let guard = GExpr::Cmp(CmpOp::Eq, VExpr::Ident(id(&act.name)), VExpr::Ident(id(v)));
            let op = *[UpdOp::Add, UpdOp::Sub, UpdOp::Set].choose(rng).unwrap();
            let rhs = if rng.random_bool(0.5) {
                RhsDecl::Const(dec(rng.random_range(0..5), g))
            } else {
                let lo = rng.random_range(-5..=5);
                RhsDecl::Uniform(dec(lo, g), dec(lo + rng.random_range(0..4), g))
            };
            mf.evolution.push(EvolDecl { guard, var: id(&format!("v{i}")), op, rhs, span: Default::default() });
        }
    }
    let names: Vec<String> = (0..rng.random_range(1..=3)).map(|i| format!("Q{i}")).collect();
    let mut body = Body {
        rng,
        g,
        refs: names.clone(),
        sensors: mf.sensors.iter().map(|s| s.name.clone()).collect(),
        acts: mf.actuators.iter().map(|a| (a.name.clone(), a.values.iter().map(|v| v.0.clone()).collect())).collect(),
        chans: mf.channels.iter().map(|c| (c.name.clone(), c.alphabet.clone())).collect(),
        rich: true,
        fresh: 0,
    };
    for n in &names {
        let e = body.expr(4, false, &mut Vec::new());
        mf.procs.push(ProcDef { name: n.clone(), body: e, span: Default::default() });
    }
    mf.main = body.expr(3, false, &mut Vec::new());
    mf
}
