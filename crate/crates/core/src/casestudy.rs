//! The engine and airplane case study: model builders, the cooling-switch
//! range check and the closed-form distance bound.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_traits::{One, Pow};

use crate::dist::Prob;
use crate::explore::Plts;
use crate::modeldsl::{
    build_model, ActDecl, ChanDecl, Choice, DslError, EvolDecl, GExpr, Ident, ModelFile, PExpr, ProcDef, RhsDecl,
    SensorDecl, VExpr, VarDecl,
};
use crate::physics::{SensorMode, UpdOp};
use crate::semantics::{compose_logic, declare_channels, disjoint_union, restrict, Cause, Cps};
use crate::syntax::Proc;
use crate::value::{name, CmpOp, Decimal, Value};

/// Cooling power of the engine variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Drop in `[1-δ, 1+δ]` per slot.
    Standard,
    /// Cooling reduced by 20%.
    Tilde,
    /// Cooling reduced by 30%.
    Hat,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Standard, Variant::Tilde, Variant::Hat];

    /// Centre of the per-slot temperature drop.
    pub fn cool_centre(self) -> Decimal {
        match self {
            Variant::Standard => Decimal::from_parts(10, 1),
            Variant::Tilde => Decimal::from_parts(8, 1),
            Variant::Hat => Decimal::from_parts(7, 1),
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Standard => "engine",
            Variant::Tilde => "engine_tilde",
            Variant::Hat => "engine_hat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineParams {
    pub g: u32,
    pub variant: Variant,
    pub delta: Decimal,
    pub err: Decimal,
    pub heat_centre: Decimal,
    pub threshold: Decimal,
    /// Ticks of cooling before the temperature is checked again.
    pub cycle: usize,
    pub inv: (Decimal, Decimal),
    /// Atom sent on `warning`.
    pub id: String,
    /// Appended to device names, e.g. `_l` gives `temp_l`.
    pub suffix: String,
}

impl EngineParams {
    pub fn new(g: u32, variant: Variant) -> Self {
        EngineParams {
            g,
            variant,
            delta: Decimal::from_parts(4, 1),
            err: Decimal::from_parts(1, 1),
            heat_centre: Decimal::from_int(1),
            threshold: Decimal::from_int(10),
            cycle: 5,
            inv: (Decimal::from_int(0), Decimal::from_int(30)),
            id: "ID".into(),
            suffix: String::new(),
        }
    }

    /// A small engine with the same controller shape whose state space is a
    /// few hundred states, for exact metrics on composed systems.
    pub fn reduced(variant: Variant) -> Self {
        EngineParams {
            delta: Decimal::from_parts(1, 1),
            err: Decimal::from_int(0),
            threshold: Decimal::from_int(2),
            cycle: 2,
            inv: (Decimal::from_int(0), Decimal::from_int(5)),
            ..EngineParams::new(1, variant)
        }
    }

    /// The engine placed on one side of the airplane.
    pub fn side(mut self, id: &str) -> Self {
        self.suffix = format!("_{}", id.to_lowercase());
        self.id = id.to_string();
        self
    }

    fn dev(&self, base: &str) -> String {
        format!("{base}{}", self.suffix)
    }

    fn proc_name(&self, base: &str) -> String {
        format!("{base}{}", self.suffix.trim_start_matches('_').to_uppercase())
    }

    pub fn heat_interval(&self) -> (Decimal, Decimal) {
        let c = self.heat_centre;
        (c.checked_sub(self.delta).expect("range"), c.checked_add(self.delta).expect("range"))
    }

    /// Interval added to `temp` per slot while cooling (negative values).
    pub fn cool_interval(&self) -> (Decimal, Decimal) {
        let c = -self.variant.cool_centre();
        (c.checked_sub(self.delta).expect("range"), c.checked_add(self.delta).expect("range"))
    }
}

fn id(n: &str) -> Ident {
    Ident::new(n)
}

fn one(p: PExpr) -> Choice {
    Choice::one(p)
}

fn reference(n: &str) -> PExpr {
    PExpr::reference(n)
}

/// `c!v.P` as a persistent output: `fix Z. out c(v).P timeout Z`.
fn persistent_out(chan: &str, value: &str, cont: PExpr) -> PExpr {
    PExpr::Fix(
        "Z".into(),
        Box::new(PExpr::Out {
            chan: id(chan),
            value: VExpr::Ident(id(value)),
            cont: one(cont),
            alt: one(reference("Z")),
        }),
    )
}

fn engine_decls(p: &EngineParams, mf: &mut ModelFile) {
    let (temp, cool, st) = (p.dev("temp"), p.dev("cool"), p.dev("st"));
    let zero = Decimal::from_int(0);
    mf.vars.push(VarDecl { name: temp.clone(), init: zero, lo: p.inv.0, hi: p.inv.1, span: Default::default() });
    mf.sensors.push(SensorDecl {
        name: st.clone(),
        source: id(&temp),
        noise: (-p.err, p.err),
        mode: SensorMode::AtTick,
        span: Default::default(),
    });
    mf.actuators.push(ActDecl {
        name: cool.clone(),
        values: vec![("off".into(), Some(zero)), ("on".into(), Some(Decimal::from_int(-1)))],
        init: "off".into(),
        span: Default::default(),
    });
    mf.channels.push(ChanDecl { name: "warning".into(), alphabet: vec![Value::atom(&p.id)], span: Default::default() });
    let (hl, hh) = p.heat_interval();
    let (cl, ch) = p.cool_interval();
    let when = |v: &str| GExpr::Cmp(CmpOp::Eq, VExpr::Ident(id(&cool)), VExpr::Ident(id(v)));
    mf.evolution.push(EvolDecl {
        guard: when("off"),
        var: id(&temp),
        op: UpdOp::Add,
        rhs: RhsDecl::Uniform(hl, hh),
        span: Default::default(),
    });
    mf.evolution.push(EvolDecl {
        guard: when("on"),
        var: id(&temp),
        op: UpdOp::Add,
        rhs: RhsDecl::Uniform(cl, ch),
        span: Default::default(),
    });

    let ctrl = p.proc_name("Ctrl");
    let cooling = p.proc_name("Cooling");
    let above = |var: &str| GExpr::Cmp(CmpOp::Gt, VExpr::Ident(id(var)), VExpr::Num(p.threshold));
    // Ctrl = read st(x).(if x > 10 then Cooling else tick.Ctrl)
    let ctrl_body = PExpr::Read {
        sensor: id(&st),
        var: "x".into(),
        cont: one(PExpr::If(above("x"), Box::new(reference(&cooling)), Box::new(PExpr::tick(reference(&ctrl))))),
    };
    // Cooling = write cool(on).fix Y. tick^5.read st(x).
    //   (if x > 10 then warning!ID.Y else write cool(off).tick.Ctrl)
    let check = PExpr::Read {
        sensor: id(&st),
        var: "x".into(),
        cont: one(PExpr::If(
            above("x"),
            Box::new(persistent_out("warning", &p.id, reference("Y"))),
            Box::new(PExpr::Write {
                act: id(&cool),
                value: VExpr::Ident(id("off")),
                cont: one(PExpr::tick(reference(&ctrl))),
            }),
        )),
    };
    let cooling_body = PExpr::Write {
        act: id(&cool),
        value: VExpr::Ident(id("on")),
        cont: one(PExpr::Fix("Y".into(), Box::new(PExpr::ticks(p.cycle, check)))),
    };
    mf.procs.push(ProcDef { name: ctrl, body: ctrl_body, span: Default::default() });
    mf.procs.push(ProcDef { name: cooling, body: cooling_body, span: Default::default() });
}

fn empty_model(name: &str, g: u32) -> ModelFile {
    ModelFile::empty(name, g)
}

/// The engine as a model file.
pub fn engine_model(p: &EngineParams) -> ModelFile {
    let mut mf = empty_model(p.variant.slug(), p.g);
    engine_decls(p, &mut mf);
    mf.main = reference(&p.proc_name("Ctrl"));
    mf
}

pub fn build_engine(g: u32, variant: Variant) -> Cps {
    build_engine_with(&EngineParams::new(g, variant))
}

pub fn build_engine_with(p: &EngineParams) -> Cps {
    build_model(&engine_model(p)).expect("engine model is valid")
}

/// Channels used by `Check` besides `warning`.
pub fn check_channels() -> Vec<ChanDecl> {
    let lr = vec![Value::atom("L"), Value::atom("R")];
    vec![
        ChanDecl { name: "alarm".into(), alphabet: vec![Value::atom("unit")], span: Default::default() },
        ChanDecl { name: "failure".into(), alphabet: lr.clone(), span: Default::default() },
        ChanDecl { name: "warning".into(), alphabet: lr, span: Default::default() },
    ]
}

/// The `Check` definitions: `Check`, `CheckL1..CheckL5`, `CheckR1..CheckR5`.
pub fn check_procs() -> Vec<ProcDef> {
    let mut out = vec![ProcDef {
        name: "Check".into(),
        body: PExpr::In {
            chan: id("warning"),
            var: "x".into(),
            cont: one(PExpr::If(
                GExpr::Cmp(CmpOp::Eq, VExpr::Ident(id("x")), VExpr::Ident(id("L"))),
                Box::new(reference("CheckL1")),
                Box::new(reference("CheckR1")),
            )),
            alt: one(reference("Check")),
        },
        span: Default::default(),
    }];
    for side in ["L", "R"] {
        for i in 1..=5 {
            let alarm = persistent_out("alarm", "unit", PExpr::tick(reference("Check")));
            let other = |v: &str| GExpr::Cmp(CmpOp::Ne, VExpr::Ident(id(v)), VExpr::Ident(id(side)));
            let body = if i < 5 {
                let next = reference(&format!("Check{side}{}", i + 1));
                PExpr::In {
                    chan: id("warning"),
                    var: "y".into(),
                    cont: one(PExpr::If(other("y"), Box::new(alarm), Box::new(PExpr::tick(next.clone())))),
                    alt: one(next),
                }
            } else {
                PExpr::In {
                    chan: id("warning"),
                    var: "z".into(),
                    cont: one(PExpr::If(
                        other("z"),
                        Box::new(alarm),
                        Box::new(persistent_out("failure", side, PExpr::tick(reference("Check")))),
                    )),
                    alt: one(persistent_out("failure", side, reference("Check"))),
                }
            };
            out.push(ProcDef { name: format!("Check{side}{i}"), body, span: Default::default() });
        }
    }
    out
}

/// The airplane as a single model file.
pub fn airplane_model(g: u32, variant: Variant) -> ModelFile {
    let mut mf = empty_model("airplane", g);
    let left = EngineParams::new(g, variant).side("L");
    let right = EngineParams::new(g, variant).side("R");
    engine_decls(&left, &mut mf);
    engine_decls(&right, &mut mf);
    mf.channels.retain(|c| c.name != "warning");
    mf.channels.extend(check_channels());
    mf.procs.extend(check_procs());
    mf.main = PExpr::Restrict(
        Box::new(PExpr::Par(vec![reference("CtrlL"), reference("CtrlR"), reference("Check")])),
        id("warning"),
    );
    mf
}

/// The `Check` process as a closed term.
pub fn check_process() -> Proc {
    let mut mf = empty_model("check", 1);
    mf.channels = check_channels();
    mf.procs = check_procs();
    mf.main = reference("Check");
    let m = build_model(&mf).expect("check model is valid");
    m.as_live().expect("live").proc.clone()
}

/// `((Eng^L ⊎ Eng^R) || Check) \ warning`, built with the composition
/// operators.
pub fn build_airplane(variant: Variant, g: u32) -> Cps {
    build_airplane_with(&EngineParams::new(g, variant))
}

pub fn build_airplane_with(p: &EngineParams) -> Cps {
    let left = build_engine_with(&p.clone().side("L"));
    let right = build_engine_with(&p.clone().side("R"));
    let plant = disjoint_union(&left, &right).expect("engines are physically disjoint");
    let chans: Vec<_> = check_channels().into_iter().map(|c| (name(&c.name), c.alphabet)).collect();
    let plant = declare_channels(&plant, &chans);
    let sys = compose_logic(&plant, &check_process()).expect("Check is pure logical");
    restrict(&sys, &name("warning"))
}

/// Temperatures at which an actuator was switched, over a whole pLTS.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwitchTemps {
    pub on: BTreeSet<Decimal>,
    pub off: BTreeSet<Decimal>,
}

impl SwitchTemps {
    /// Whether every switch-on lies in `(on.0, on.1]` and every switch-off in
    /// `(off.0, off.1]`.
    pub fn within(&self, on: (Decimal, Decimal), off: (Decimal, Decimal)) -> bool {
        self.on.iter().all(|t| on.0 < *t && *t <= on.1) && self.off.iter().all(|t| off.0 < *t && *t <= off.1)
    }
}

/// Collects `var` at every `write act(on)` and `write act(off)` edge.
pub fn switch_temperatures(plts: &Plts, var: &str, act: &str) -> SwitchTemps {
    let mut out = SwitchTemps::default();
    for (s, edges) in plts.edges.iter().enumerate() {
        let Some(l) = plts.states[s].as_live() else { continue };
        let Some(k) = l.env.var_index(var) else { continue };
        for e in edges {
            if let Cause::Write(a, v) = &e.cause {
                if &**a == act {
                    match v {
                        Value::Atom(x) if &**x == "on" => out.on.insert(l.state.xs[k]),
                        Value::Atom(x) if &**x == "off" => out.off.insert(l.state.xs[k]),
                        _ => false,
                    };
                }
            }
        }
    }
    out
}

/// `p_g = q_g = 1 / (8 + 10^(1-g))`.
pub fn p_g(g: u32) -> Prob {
    assert!(g >= 1, "granularity starts at 1");
    let t = BigInt::from(10u32).pow(g - 1);
    Prob::new(t.clone(), BigInt::from(8u32) * t + 1u32)
}

/// `1 - (1 - p^6)^n` for `p = a/b`, without intermediate reductions.
fn one_minus_pow(p: &Prob, n: u32) -> Prob {
    let (a, b) = (p.numer().pow(6u32), p.denom().pow(6u32));
    let den = Pow::pow(&b, n);
    let num = Pow::pow(&(&b - &a), n);
    // b and b - a are coprime, so the result is already in lowest terms.
    Prob::new_raw(&den - num, den)
}

/// Upper bound on `d_n(Eng_g, Êng_g)`: `1 - (1 - q_g p_g^5)^n`.
pub fn engine_bound(g: u32, n: u32) -> Prob {
    one_minus_pow(&p_g(g), n)
}

/// The bound as `g` grows: `1 - (1 - 1/8^6)^n`.
pub fn engine_bound_limit(n: u32) -> Prob {
    one_minus_pow(&Prob::new(BigInt::one(), BigInt::from(8u32)), n)
}

/// Loads one of the shipped model sources by variant.
pub fn engine_source(variant: Variant) -> &'static str {
    match variant {
        Variant::Standard => include_str!("../examples/engine.pccps"),
        Variant::Tilde => include_str!("../examples/engine_tilde.pccps"),
        Variant::Hat => include_str!("../examples/engine_hat.pccps"),
    }
}

pub fn airplane_source() -> &'static str {
    include_str!("../examples/airplane.pccps")
}

/// Builds a shipped model or reports why it does not parse.
pub fn load_shipped(variant: Variant) -> Result<Cps, DslError> {
    crate::modeldsl::load_model(engine_source(variant))
}
