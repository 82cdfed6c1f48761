//! The `.pccps` model format: parser, renderer, validation and lowering to a
//! running system.
//!
//! ```text
//! model engine {
//!   granularity 1;
//!   var temp = 0.0 in [0.0, 30.0];
//!   sensor st on temp noise uniform[-0.1, 0.1] attick;
//!   actuator cool values {off = 0, on = -1} init off;
//!   channel warning alphabet {L};
//!   evolution {
//!     when cool = off: temp += uniform[0.6, 1.4];
//!     when cool = on: temp -= uniform[0.6, 1.4];
//!   }
//!   proc Ctrl = read st(x).(if x > 10.0 then Cooling else tick.Ctrl);
//!   ...
//!   main Ctrl;
//! }
//! ```
//!
//! Process syntax, loosest binding first: `P || Q`, postfix restriction
//! `P \ c`, then prefixes, `if`, `fix X. P`, names and parentheses.
//! Continuations are either a single prefix-level process or a weighted
//! choice `{0.5: P | 1/2: Q}`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_traits::Zero;

use crate::dist::Prob;
use crate::physics::{
    ActSpec, Cond, Env, EvolRule, GridInterval, PTerm, PhysEnv, PhysState, Rhs, SensorMode, SensorSpec, UpdOp, VarSpec,
};
use crate::semantics::Cps;
use crate::syntax::{Guard, PChoice, Proc, ValExpr};
use crate::value::{name, CmpOp, Decimal, Value, SCALE_DIGITS};

/// Source position (1-based). Spans never affect equality of syntax trees.
#[derive(Clone, Copy, Debug, Default, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DslErrorKind {
    Syntax,
    Undeclared,
    Duplicate,
    WeightSum,
    Unguarded,
    OffGrid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{span}: {message}")]
pub struct DslError {
    pub kind: DslErrorKind,
    pub span: Span,
    pub message: String,
}

fn err<T>(kind: DslErrorKind, span: Span, message: impl Into<String>) -> Result<T, DslError> {
    Err(DslError { kind, span, message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ident {
    pub name: String,
    pub span: Span,
}

impl Ident {
    pub fn new(n: &str) -> Ident {
        Ident { name: n.to_string(), span: Span::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFile {
    pub name: String,
    pub granularity: u32,
    pub vars: Vec<VarDecl>,
    pub sensors: Vec<SensorDecl>,
    pub actuators: Vec<ActDecl>,
    pub channels: Vec<ChanDecl>,
    pub evolution: Vec<EvolDecl>,
    pub procs: Vec<ProcDef>,
    pub main: PExpr,
    pub main_span: Span,
}

impl ModelFile {
    /// A model with no declarations and `main nil`.
    pub fn empty(name: &str, granularity: u32) -> ModelFile {
        ModelFile {
            name: name.into(),
            granularity,
            vars: vec![],
            sensors: vec![],
            actuators: vec![],
            channels: vec![],
            evolution: vec![],
            procs: vec![],
            main: PExpr::Nil,
            main_span: Span::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub init: Decimal,
    pub lo: Decimal,
    pub hi: Decimal,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorDecl {
    pub name: String,
    pub source: Ident,
    pub noise: (Decimal, Decimal),
    pub mode: SensorMode,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActDecl {
    pub name: String,
    /// Symbolic values with optional numeric codes.
    pub values: Vec<(String, Option<Decimal>)>,
    pub init: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChanDecl {
    pub name: String,
    pub alphabet: Vec<Value>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsDecl {
    Uniform(Decimal, Decimal),
    Const(Decimal),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvolDecl {
    pub guard: GExpr,
    pub var: Ident,
    pub op: UpdOp,
    pub rhs: RhsDecl,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcDef {
    pub name: String,
    pub body: PExpr,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VExpr {
    Num(Decimal),
    Ident(Ident),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GExpr {
    True,
    False,
    Cmp(CmpOp, VExpr, VExpr),
    Not(Box<GExpr>),
    And(Box<GExpr>, Box<GExpr>),
    Or(Box<GExpr>, Box<GExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    One(Box<PExpr>),
    Many(Vec<(Prob, PExpr)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PExpr {
    Nil,
    Tick(Choice),
    Out { chan: Ident, value: VExpr, cont: Choice, alt: Choice },
    In { chan: Ident, var: String, cont: Choice, alt: Choice },
    Read { sensor: Ident, var: String, cont: Choice },
    Write { act: Ident, value: VExpr, cont: Choice },
    Par(Vec<PExpr>),
    If(GExpr, Box<PExpr>, Box<PExpr>),
    Restrict(Box<PExpr>, Ident),
    Fix(String, Box<PExpr>),
    Ref(Ident),
}

impl PExpr {
    pub fn reference(n: &str) -> PExpr {
        PExpr::Ref(Ident::new(n))
    }

    pub fn tick(p: PExpr) -> PExpr {
        PExpr::Tick(Choice::One(Box::new(p)))
    }

    /// `tick.tick. … .p` with `k` ticks.
    pub fn ticks(k: usize, p: PExpr) -> PExpr {
        (0..k).fold(p, |acc, _| PExpr::tick(acc))
    }
}

impl Choice {
    pub fn one(p: PExpr) -> Choice {
        Choice::One(Box::new(p))
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Sym(&'static str),
    Eof,
}

const SYMBOLS: &[&str] = &[
    "||", "<=", ">=", "!=", "+=", "-=", ":=", "{", "}", "(", ")", "[", "]", ";", ":", ",", ".", "=", "<", ">", "\\",
    "-", "/", "|",
];

const RESERVED: &[&str] = &[
    "nil", "tick", "out", "in", "read", "write", "if", "then", "else", "fix", "timeout", "and", "or", "not", "true",
    "false",
];

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, DslError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), span));
        } else if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.push((Tok::Num(chars[start..i].iter().collect()), span));
        } else {
            let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let Some(sym) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) else {
                return err(DslErrorKind::Syntax, span, format!("unexpected character `{c}`"));
            };
            i += sym.len();
            out.push((Tok::Sym(sym), span));
        }
        col += (i - start) as u32;
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, what: &str) -> Result<T, DslError> {
        let found = match self.peek() {
            Tok::Ident(s) | Tok::Num(s) => format!("`{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        };
        err(DslErrorKind::Syntax, self.span(), format!("expected {what}, found {found}"))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn sym(&mut self, s: &str) -> Result<(), DslError> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            self.fail(&format!("`{s}`"))
        }
    }

    fn kw(&mut self, k: &str) -> Result<(), DslError> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.fail(&format!("`{k}`"))
        }
    }

    fn ident(&mut self) -> Result<Ident, DslError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                self.bump();
                Ok(Ident { name: s, span })
            }
            _ => self.fail("an identifier"),
        }
    }

    fn decimal(&mut self) -> Result<Decimal, DslError> {
        let span = self.span();
        let neg = if self.is_sym("-") {
            self.bump();
            true
        } else {
            false
        };
        match self.bump() {
            Tok::Num(s) => {
                let d: Decimal = s
                    .parse()
                    .or_else(|_| err(DslErrorKind::Syntax, span, format!("decimal `{s}` has too many digits")))?;
                Ok(if neg { -d } else { d })
            }
            _ => {
                self.pos -= 1;
                self.fail("a decimal number")
            }
        }
    }

    fn integer(&mut self) -> Result<u32, DslError> {
        let span = self.span();
        match self.bump() {
            Tok::Num(s) if !s.contains('.') => {
                s.parse().or_else(|_| err(DslErrorKind::Syntax, span, format!("integer `{s}` out of range")))
            }
            _ => {
                self.pos -= 1;
                self.fail("an integer")
            }
        }
    }

    fn weight(&mut self) -> Result<Prob, DslError> {
        let span = self.span();
        if let Tok::Num(s) = self.peek().clone() {
            if !s.contains('.') && matches!(self.toks.get(self.pos + 1), Some((Tok::Sym("/"), _))) {
                self.bump();
                self.bump();
                let d = self.integer()?;
                if d == 0 {
                    return err(DslErrorKind::Syntax, span, "zero denominator");
                }
                let n: BigInt = s.parse().expect("digits");
                return Ok(Prob::new(n, BigInt::from(d)));
            }
        }
        Ok(self.decimal()?.to_rational())
    }

    fn value(&mut self) -> Result<VExpr, DslError> {
        match self.peek() {
            Tok::Num(_) | Tok::Sym("-") => Ok(VExpr::Num(self.decimal()?)),
            _ => Ok(VExpr::Ident(self.ident()?)),
        }
    }

    fn literal(&mut self) -> Result<Value, DslError> {
        Ok(match self.value()? {
            VExpr::Num(d) => Value::Num(d),
            VExpr::Ident(i) => Value::Atom(name(&i.name)),
        })
    }

    fn guard(&mut self) -> Result<GExpr, DslError> {
        let mut g = self.guard_and()?;
        while self.is_kw("or") {
            self.bump();
            g = GExpr::Or(Box::new(g), Box::new(self.guard_and()?));
        }
        Ok(g)
    }

    fn guard_and(&mut self) -> Result<GExpr, DslError> {
        let mut g = self.guard_not()?;
        while self.is_kw("and") {
            self.bump();
            g = GExpr::And(Box::new(g), Box::new(self.guard_not()?));
        }
        Ok(g)
    }

    fn guard_not(&mut self) -> Result<GExpr, DslError> {
        if self.is_kw("not") {
            self.bump();
            return Ok(GExpr::Not(Box::new(self.guard_not()?)));
        }
        if self.is_kw("true") {
            self.bump();
            return Ok(GExpr::True);
        }
        if self.is_kw("false") {
            self.bump();
            return Ok(GExpr::False);
        }
        if self.is_sym("(") {
            self.bump();
            let g = self.guard()?;
            self.sym(")")?;
            return Ok(g);
        }
        let a = self.value()?;
        let op = match self.peek() {
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            _ => return self.fail("a comparison operator"),
        };
        self.bump();
        Ok(GExpr::Cmp(op, a, self.value()?))
    }

    fn process(&mut self) -> Result<PExpr, DslError> {
        let first = self.restricted()?;
        if !self.is_sym("||") {
            return Ok(first);
        }
        let mut parts = vec![first];
        while self.is_sym("||") {
            self.bump();
            parts.push(self.restricted()?);
        }
        Ok(PExpr::Par(parts))
    }

    fn restricted(&mut self) -> Result<PExpr, DslError> {
        let mut p = self.unary()?;
        while self.is_sym("\\") {
            self.bump();
            p = PExpr::Restrict(Box::new(p), self.ident()?);
        }
        Ok(p)
    }

    fn choice(&mut self) -> Result<Choice, DslError> {
        if !self.is_sym("{") {
            return Ok(Choice::One(Box::new(self.unary()?)));
        }
        self.bump();
        let mut branches = Vec::new();
        loop {
            let w = self.weight()?;
            self.sym(":")?;
            branches.push((w, self.process()?));
            if self.is_sym("|") {
                self.bump();
            } else {
                break;
            }
        }
        self.sym("}")?;
        Ok(Choice::Many(branches))
    }

    fn binder(&mut self) -> Result<String, DslError> {
        self.sym("(")?;
        let x = self.ident()?.name;
        self.sym(")")?;
        Ok(x)
    }

    fn unary(&mut self) -> Result<PExpr, DslError> {
        let Tok::Ident(word) = self.peek().clone() else {
            if self.is_sym("(") {
                self.bump();
                let p = self.process()?;
                self.sym(")")?;
                return Ok(p);
            }
            return self.fail("a process");
        };
        match word.as_str() {
            "nil" => {
                self.bump();
                Ok(PExpr::Nil)
            }
            "tick" => {
                self.bump();
                self.sym(".")?;
                Ok(PExpr::Tick(self.choice()?))
            }
            "out" => {
                self.bump();
                let chan = self.ident()?;
                self.sym("(")?;
                let value = self.value()?;
                self.sym(")")?;
                self.sym(".")?;
                let cont = self.choice()?;
                self.kw("timeout")?;
                Ok(PExpr::Out { chan, value, cont, alt: self.choice()? })
            }
            "in" => {
                self.bump();
                let chan = self.ident()?;
                let var = self.binder()?;
                self.sym(".")?;
                let cont = self.choice()?;
                self.kw("timeout")?;
                Ok(PExpr::In { chan, var, cont, alt: self.choice()? })
            }
            "read" => {
                self.bump();
                let sensor = self.ident()?;
                let var = self.binder()?;
                self.sym(".")?;
                Ok(PExpr::Read { sensor, var, cont: self.choice()? })
            }
            "write" => {
                self.bump();
                let act = self.ident()?;
                self.sym("(")?;
                let value = self.value()?;
                self.sym(")")?;
                self.sym(".")?;
                Ok(PExpr::Write { act, value, cont: self.choice()? })
            }
            "if" => {
                self.bump();
                let g = self.guard()?;
                self.kw("then")?;
                let a = self.unary()?;
                self.kw("else")?;
                Ok(PExpr::If(g, Box::new(a), Box::new(self.unary()?)))
            }
            "fix" => {
                self.bump();
                let x = self.ident()?.name;
                self.sym(".")?;
                Ok(PExpr::Fix(x, Box::new(self.unary()?)))
            }
            _ => Ok(PExpr::Ref(self.ident()?)),
        }
    }

    fn model(&mut self) -> Result<ModelFile, DslError> {
        self.kw("model")?;
        let name = self.ident()?.name;
        self.sym("{")?;
        let mut granularity = None;
        let mut main: Option<(PExpr, Span)> = None;
        let mut mf = ModelFile {
            name,
            granularity: 0,
            vars: vec![],
            sensors: vec![],
            actuators: vec![],
            channels: vec![],
            evolution: vec![],
            procs: vec![],
            main: PExpr::Nil,
            main_span: Span::default(),
        };
        while !self.is_sym("}") {
            let span = self.span();
            let Tok::Ident(word) = self.bump() else {
                self.pos -= 1;
                return self.fail("a declaration");
            };
            match word.as_str() {
                "granularity" => {
                    if granularity.is_some() {
                        return err(DslErrorKind::Duplicate, span, "granularity declared twice");
                    }
                    granularity = Some(self.integer()?);
                    self.sym(";")?;
                }
                "var" => {
                    let n = self.ident()?.name;
                    self.sym("=")?;
                    let init = self.decimal()?;
                    self.kw("in")?;
                    self.sym("[")?;
                    let lo = self.decimal()?;
                    self.sym(",")?;
                    let hi = self.decimal()?;
                    self.sym("]")?;
                    self.sym(";")?;
                    mf.vars.push(VarDecl { name: n, init, lo, hi, span });
                }
                "sensor" => {
                    let n = self.ident()?.name;
                    self.kw("on")?;
                    let source = self.ident()?;
                    self.kw("noise")?;
                    self.kw("uniform")?;
                    self.sym("[")?;
                    let lo = self.decimal()?;
                    self.sym(",")?;
                    let hi = self.decimal()?;
                    self.sym("]")?;
                    let mode = if self.is_kw("attick") {
                        self.bump();
                        SensorMode::AtTick
                    } else if self.is_kw("atread") {
                        self.bump();
                        SensorMode::AtRead
                    } else {
                        SensorMode::AtTick
                    };
                    self.sym(";")?;
                    mf.sensors.push(SensorDecl { name: n, source, noise: (lo, hi), mode, span });
                }
                "actuator" => {
                    let n = self.ident()?.name;
                    self.kw("values")?;
                    self.sym("{")?;
                    let mut values = Vec::new();
                    loop {
                        let v = self.ident()?.name;
                        let code = if self.is_sym("=") {
                            self.bump();
                            Some(self.decimal()?)
                        } else {
                            None
                        };
                        values.push((v, code));
                        if self.is_sym(",") {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    self.sym("}")?;
                    self.kw("init")?;
                    let init = self.ident()?.name;
                    self.sym(";")?;
                    mf.actuators.push(ActDecl { name: n, values, init, span });
                }
                "channel" => {
                    let n = self.ident()?.name;
                    self.kw("alphabet")?;
                    self.sym("{")?;
                    let mut alphabet = Vec::new();
                    while !self.is_sym("}") {
                        alphabet.push(self.literal()?);
                        if self.is_sym(",") {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    self.sym("}")?;
                    self.sym(";")?;
                    mf.channels.push(ChanDecl { name: n, alphabet, span });
                }
                "evolution" => {
                    self.sym("{")?;
                    while self.is_kw("when") {
                        let span = self.span();
                        self.bump();
                        let guard = self.guard()?;
                        self.sym(":")?;
                        let var = self.ident()?;
                        let op = match self.bump() {
                            Tok::Sym("+=") => UpdOp::Add,
                            Tok::Sym("-=") => UpdOp::Sub,
                            Tok::Sym(":=") => UpdOp::Set,
                            _ => {
                                self.pos -= 1;
                                return self.fail("`+=`, `-=` or `:=`");
                            }
                        };
                        let rhs = if self.is_kw("uniform") {
                            self.bump();
                            self.sym("[")?;
                            let lo = self.decimal()?;
                            self.sym(",")?;
                            let hi = self.decimal()?;
                            self.sym("]")?;
                            RhsDecl::Uniform(lo, hi)
                        } else {
                            RhsDecl::Const(self.decimal()?)
                        };
                        self.sym(";")?;
                        mf.evolution.push(EvolDecl { guard, var, op, rhs, span });
                    }
                    self.sym("}")?;
                }
                "proc" => {
                    let n = self.ident()?.name;
                    self.sym("=")?;
                    let body = self.process()?;
                    self.sym(";")?;
                    mf.procs.push(ProcDef { name: n, body, span });
                }
                "main" => {
                    if main.is_some() {
                        return err(DslErrorKind::Duplicate, span, "main declared twice");
                    }
                    main = Some((self.process()?, span));
                    if self.is_sym(";") {
                        self.bump();
                    }
                }
                _ => {
                    self.pos -= 1;
                    return self.fail("a declaration");
                }
            }
        }
        let close = self.span();
        self.sym("}")?;
        if !matches!(self.peek(), Tok::Eof) {
            return self.fail("end of input");
        }
        mf.granularity = granularity.ok_or(()).or_else(|_| err(DslErrorKind::Syntax, close, "missing granularity"))?;
        let (main, main_span) = main.ok_or(()).or_else(|_| err(DslErrorKind::Syntax, close, "missing main process"))?;
        mf.main = main;
        mf.main_span = main_span;
        Ok(mf)
    }
}

/// Parses and validates a model.
pub fn parse_model(text: &str) -> Result<ModelFile, DslError> {
    let mf = parse_unchecked(text)?;
    build_model(&mf)?;
    Ok(mf)
}

/// Parses without semantic validation.
pub fn parse_unchecked(text: &str) -> Result<ModelFile, DslError> {
    Parser { toks: lex(text)?, pos: 0 }.model()
}

/// Parses, validates and builds the system in one go.
pub fn load_model(text: &str) -> Result<Cps, DslError> {
    build_model(&parse_unchecked(text)?)
}

// ---------------------------------------------------------------------------
// Renderer

struct Render {
    g: u32,
}

impl Render {
    fn dec(&self, d: Decimal) -> String {
        d.render(self.g)
    }

    fn weight(&self, w: &Prob) -> String {
        // Decimal if exactly representable, otherwise a fraction.
        let scaled = w * Prob::from_integer(BigInt::from(10u64.pow(SCALE_DIGITS)));
        if scaled.is_integer() {
            if let Ok(units) = i64::try_from(scaled.to_integer()) {
                let d = Decimal::from_units(units);
                return d.render(d.digits_needed());
            }
        }
        format!("{}/{}", w.numer(), w.denom())
    }

    fn value(&self, v: &VExpr) -> String {
        match v {
            VExpr::Num(d) => self.dec(*d),
            VExpr::Ident(i) => i.name.clone(),
        }
    }

    fn literal(&self, v: &Value) -> String {
        v.render(self.g)
    }

    fn guard(&self, g: &GExpr, min_level: u8) -> String {
        let (level, s) = match g {
            GExpr::True => (4, "true".to_string()),
            GExpr::False => (4, "false".to_string()),
            GExpr::Cmp(op, a, b) => (4, format!("{} {} {}", self.value(a), op.symbol(), self.value(b))),
            GExpr::Not(x) => (3, format!("not {}", self.guard(x, 3))),
            GExpr::And(a, b) => (2, format!("{} and {}", self.guard(a, 2), self.guard(b, 3))),
            GExpr::Or(a, b) => (1, format!("{} or {}", self.guard(a, 1), self.guard(b, 2))),
        };
        if level < min_level {
            format!("({s})")
        } else {
            s
        }
    }

    fn choice(&self, c: &Choice) -> String {
        match c {
            Choice::One(p) => self.unary(p),
            Choice::Many(bs) => {
                let parts: Vec<String> =
                    bs.iter().map(|(w, p)| format!("{}: {}", self.weight(w), self.process(p))).collect();
                format!("{{{}}}", parts.join(" | "))
            }
        }
    }

    fn process(&self, p: &PExpr) -> String {
        match p {
            PExpr::Par(ps) => ps.iter().map(|q| self.restricted(q)).collect::<Vec<_>>().join(" || "),
            _ => self.restricted(p),
        }
    }

    fn restricted(&self, p: &PExpr) -> String {
        match p {
            PExpr::Restrict(body, c) => format!("{} \\ {}", self.restricted(body), c.name),
            PExpr::Par(_) => format!("({})", self.process(p)),
            _ => self.unary(p),
        }
    }

    fn unary(&self, p: &PExpr) -> String {
        match p {
            PExpr::Nil => "nil".into(),
            PExpr::Tick(c) => format!("tick.{}", self.choice(c)),
            PExpr::Out { chan, value, cont, alt } => {
                format!("out {}({}).{} timeout {}", chan.name, self.value(value), self.choice(cont), self.choice(alt))
            }
            PExpr::In { chan, var, cont, alt } => {
                format!("in {}({}).{} timeout {}", chan.name, var, self.choice(cont), self.choice(alt))
            }
            PExpr::Read { sensor, var, cont } => format!("read {}({}).{}", sensor.name, var, self.choice(cont)),
            PExpr::Write { act, value, cont } => {
                format!("write {}({}).{}", act.name, self.value(value), self.choice(cont))
            }
            PExpr::If(g, a, b) => format!("if {} then {} else {}", self.guard(g, 1), self.unary(a), self.unary(b)),
            PExpr::Fix(x, b) => format!("fix {}. {}", x, self.unary(b)),
            PExpr::Ref(i) => i.name.clone(),
            PExpr::Par(_) | PExpr::Restrict(..) => format!("({})", self.process(p)),
        }
    }
}

/// Canonical text of a model; `parse_unchecked(render_model(m)) == m`.
pub fn render_model(mf: &ModelFile) -> String {
    let r = Render { g: mf.granularity };
    let mut out = format!("model {} {{\n  granularity {};\n", mf.name, mf.granularity);
    for v in &mf.vars {
        out += &format!("  var {} = {} in [{}, {}];\n", v.name, r.dec(v.init), r.dec(v.lo), r.dec(v.hi));
    }
    for s in &mf.sensors {
        let mode = match s.mode {
            SensorMode::AtTick => "attick",
            SensorMode::AtRead => "atread",
        };
        out += &format!(
            "  sensor {} on {} noise uniform[{}, {}] {};\n",
            s.name,
            s.source.name,
            r.dec(s.noise.0),
            r.dec(s.noise.1),
            mode
        );
    }
    for a in &mf.actuators {
        let vals: Vec<String> = a
            .values
            .iter()
            .map(|(v, c)| match c {
                Some(c) => format!("{} = {}", v, r.dec(*c)),
                None => v.clone(),
            })
            .collect();
        out += &format!("  actuator {} values {{{}}} init {};\n", a.name, vals.join(", "), a.init);
    }
    for c in &mf.channels {
        let vals: Vec<String> = c.alphabet.iter().map(|v| r.literal(v)).collect();
        out += &format!("  channel {} alphabet {{{}}};\n", c.name, vals.join(", "));
    }
    if !mf.evolution.is_empty() {
        out += "  evolution {\n";
        for e in &mf.evolution {
            let op = match e.op {
                UpdOp::Add => "+=",
                UpdOp::Sub => "-=",
                UpdOp::Set => ":=",
            };
            let rhs = match e.rhs {
                RhsDecl::Uniform(lo, hi) => format!("uniform[{}, {}]", r.dec(lo), r.dec(hi)),
                RhsDecl::Const(c) => r.dec(c),
            };
            out += &format!("    when {}: {} {} {};\n", r.guard(&e.guard, 1), e.var.name, op, rhs);
        }
        out += "  }\n";
    }
    for p in &mf.procs {
        out += &format!("  proc {} = {};\n", p.name, r.process(&p.body));
    }
    out += &format!("  main {};\n}}\n", r.process(&mf.main));
    out
}

// ---------------------------------------------------------------------------
// Validation and lowering

#[derive(Clone, PartialEq, Eq, Hash)]
enum Binder {
    User(String),
    Proc(String),
    /// Start of a definition body: user binders below are out of scope.
    Barrier,
}

struct Lower<'a> {
    mf: &'a ModelFile,
    env: &'a PhysEnv,
    procs: HashMap<&'a str, &'a ProcDef>,
    fix: Vec<Binder>,
    vals: Vec<String>,
    memo: HashMap<(String, Vec<Binder>), Proc>,
}

impl<'a> Lower<'a> {
    fn value(&self, v: &VExpr) -> ValExpr {
        match v {
            VExpr::Num(d) => ValExpr::Lit(Value::Num(*d)),
            VExpr::Ident(i) => match self.vals.iter().rev().position(|x| *x == i.name) {
                Some(k) => ValExpr::Var(k as u32),
                None => ValExpr::Lit(Value::atom(&i.name)),
            },
        }
    }

    fn guard(&self, g: &GExpr) -> Guard {
        match g {
            GExpr::True => Guard::True,
            GExpr::False => Guard::False,
            GExpr::Cmp(op, a, b) => Guard::Cmp(*op, self.value(a), self.value(b)),
            GExpr::Not(x) => Guard::Not(Box::new(self.guard(x))),
            GExpr::And(a, b) => Guard::And(Box::new(self.guard(a)), Box::new(self.guard(b))),
            GExpr::Or(a, b) => Guard::Or(Box::new(self.guard(a)), Box::new(self.guard(b))),
        }
    }

    fn choice(&mut self, c: &Choice, span: Span) -> Result<PChoice, DslError> {
        match c {
            Choice::One(p) => Ok(PChoice::single(self.process(p, span)?)),
            Choice::Many(bs) => {
                let mut out = Vec::new();
                for (w, p) in bs {
                    out.push((w.clone(), self.process(p, span)?));
                }
                PChoice::new(out).or_else(|e| err(DslErrorKind::WeightSum, span, e.to_string()))
            }
        }
    }

    fn channel(&self, c: &Ident, v: Option<&ValExpr>) -> Result<(), DslError> {
        let Some(decl) = self.mf.channels.iter().find(|d| d.name == c.name) else {
            return err(DslErrorKind::Undeclared, c.span, format!("undeclared channel `{}`", c.name));
        };
        if let Some(ValExpr::Lit(v)) = v {
            if !decl.alphabet.contains(v) {
                return err(DslErrorKind::Invalid, c.span, format!("value {v} not in the alphabet of `{}`", c.name));
            }
        }
        Ok(())
    }

    fn reference(&mut self, id: &Ident) -> Result<Proc, DslError> {
        let mut idx = 0u32;
        let mut barrier = false;
        for b in self.fix.iter().rev() {
            match b {
                Binder::Barrier => barrier = true,
                Binder::User(n) => {
                    if !barrier && *n == id.name {
                        return Ok(Proc::var(idx));
                    }
                    idx += 1;
                }
                Binder::Proc(n) => {
                    if *n == id.name {
                        return Ok(Proc::var(idx));
                    }
                    idx += 1;
                }
            }
        }
        let Some(def) = self.procs.get(id.name.as_str()).copied() else {
            return err(DslErrorKind::Undeclared, id.span, format!("unknown process `{}`", id.name));
        };
        let key = (id.name.clone(), self.fix.clone());
        if let Some(p) = self.memo.get(&key) {
            return Ok(p.clone());
        }
        self.fix.push(Binder::Barrier);
        self.fix.push(Binder::Proc(id.name.clone()));
        let saved = std::mem::take(&mut self.vals);
        let body = self.process(&def.body, def.span);
        self.vals = saved;
        self.fix.pop();
        self.fix.pop();
        let p = wrap_fix(body?);
        self.memo.insert(key, p.clone());
        Ok(p)
    }

    fn process(&mut self, p: &PExpr, span: Span) -> Result<Proc, DslError> {
        Ok(match p {
            PExpr::Nil => Proc::nil(),
            PExpr::Tick(c) => Proc::tick(self.choice(c, span)?),
            PExpr::Out { chan, value, cont, alt } => {
                let v = self.value(value);
                self.channel(chan, Some(&v))?;
                Proc::out(name(&chan.name), v, self.choice(cont, chan.span)?, self.choice(alt, chan.span)?)
            }
            PExpr::In { chan, var, cont, alt } => {
                self.channel(chan, None)?;
                self.vals.push(var.clone());
                let c = self.choice(cont, chan.span);
                self.vals.pop();
                Proc::inp(name(&chan.name), c?, self.choice(alt, chan.span)?)
            }
            PExpr::Read { sensor, var, cont } => {
                if self.env.sensor_index(&sensor.name).is_none() {
                    return err(DslErrorKind::Undeclared, sensor.span, format!("undeclared sensor `{}`", sensor.name));
                }
                self.vals.push(var.clone());
                let c = self.choice(cont, sensor.span);
                self.vals.pop();
                Proc::read(name(&sensor.name), c?)
            }
            PExpr::Write { act, value, cont } => {
                let Some(i) = self.env.act_index(&act.name) else {
                    return err(DslErrorKind::Undeclared, act.span, format!("undeclared actuator `{}`", act.name));
                };
                let v = self.value(value);
                if let ValExpr::Lit(lit) = &v {
                    if !self.env.actuators[i].admits(lit) {
                        return err(
                            DslErrorKind::Invalid,
                            act.span,
                            format!("value {lit} is not a value of actuator `{}`", act.name),
                        );
                    }
                }
                Proc::write(name(&act.name), v, self.choice(cont, act.span)?)
            }
            PExpr::Par(ps) => Proc::par(ps.iter().map(|q| self.process(q, span)).collect::<Result<_, _>>()?),
            PExpr::If(g, a, b) => Proc::if_(self.guard(g), self.process(a, span)?, self.process(b, span)?),
            PExpr::Restrict(b, c) => {
                self.channel(c, None)?;
                Proc::restrict(self.process(b, span)?, name(&c.name))
            }
            PExpr::Fix(x, b) => {
                self.fix.push(Binder::User(x.clone()));
                let body = self.process(b, span);
                self.fix.pop();
                wrap_fix(body?)
            }
            PExpr::Ref(id) => self.reference(id)?,
        })
    }
}

/// `fix` around a body whose binder has index 0; dropped when unused.
fn wrap_fix(body: Proc) -> Proc {
    let f = Proc::fix(body.clone());
    if body.mentions_proc_var(0) {
        f
    } else {
        f.unfold()
    }
}

/// Names referenced outside any tick or timeout alternative.
fn unguarded_refs(p: &PExpr, out: &mut Vec<Ident>) -> Result<(), DslError> {
    let choice = |c: &Choice, out: &mut Vec<Ident>| -> Result<(), DslError> {
        match c {
            Choice::One(p) => unguarded_refs(p, out),
            Choice::Many(bs) => bs.iter().try_for_each(|(_, p)| unguarded_refs(p, out)),
        }
    };
    let guarded = |c: &Choice| -> Result<(), DslError> { choice(c, &mut Vec::new()) };
    match p {
        PExpr::Nil => Ok(()),
        PExpr::Tick(c) => guarded(c),
        PExpr::Out { cont, alt, .. } | PExpr::In { cont, alt, .. } => {
            choice(cont, out)?;
            guarded(alt)
        }
        PExpr::Read { cont, .. } | PExpr::Write { cont, .. } => choice(cont, out),
        PExpr::Par(ps) => ps.iter().try_for_each(|q| unguarded_refs(q, out)),
        PExpr::If(_, a, b) => {
            unguarded_refs(a, out)?;
            unguarded_refs(b, out)
        }
        PExpr::Restrict(b, _) => unguarded_refs(b, out),
        PExpr::Fix(x, b) => {
            let mut inner = Vec::new();
            unguarded_refs(b, &mut inner)?;
            if let Some(bad) = inner.iter().find(|i| i.name == *x) {
                return err(
                    DslErrorKind::Unguarded,
                    bad.span,
                    format!("recursion variable `{x}` is not under a tick or timeout alternative"),
                );
            }
            out.extend(inner.into_iter().filter(|i| i.name != *x));
            Ok(())
        }
        PExpr::Ref(i) => {
            out.push(i.clone());
            Ok(())
        }
    }
}

fn check_recursion(mf: &ModelFile) -> Result<(), DslError> {
    let names: BTreeSet<&str> = mf.procs.iter().map(|p| p.name.as_str()).collect();
    let mut graph: HashMap<&str, Vec<Ident>> = HashMap::new();
    for p in &mf.procs {
        let mut refs = Vec::new();
        unguarded_refs(&p.body, &mut refs)?;
        refs.retain(|i| names.contains(i.name.as_str()));
        graph.insert(p.name.as_str(), refs);
    }
    unguarded_refs(&mf.main, &mut Vec::new())?;
    // Depth-first search for a cycle of unguarded references.
    fn visit<'a>(
        n: &'a str,
        graph: &'a HashMap<&'a str, Vec<Ident>>,
        state: &mut HashMap<&'a str, u8>,
    ) -> Result<(), DslError> {
        state.insert(n, 1);
        for r in graph.get(n).into_iter().flatten() {
            match state.get(r.name.as_str()) {
                Some(1) => {
                    return err(
                        DslErrorKind::Unguarded,
                        r.span,
                        format!("recursive reference to `{}` is not under a tick or timeout alternative", r.name),
                    )
                }
                Some(_) => {}
                None => visit(r.name.as_str(), graph, state)?,
            }
        }
        state.insert(n, 2);
        Ok(())
    }
    let mut state = HashMap::new();
    for p in &mf.procs {
        if !state.contains_key(p.name.as_str()) {
            visit(p.name.as_str(), &graph, &mut state)?;
        }
    }
    Ok(())
}

fn check_unique<'a>(items: impl Iterator<Item = (&'a str, Span)>, what: &str) -> Result<(), DslError> {
    let mut seen = BTreeSet::new();
    for (n, span) in items {
        if !seen.insert(n) {
            return err(DslErrorKind::Duplicate, span, format!("{what} `{n}` declared twice"));
        }
    }
    Ok(())
}

fn on_grid(d: Decimal, g: u32, span: Span) -> Result<(), DslError> {
    if d.on_grid(g) {
        Ok(())
    } else {
        err(DslErrorKind::OffGrid, span, format!("{d} is not on the 10^-{g} grid"))
    }
}

/// The physical environment and initial state declared by a model.
pub fn build_physics(mf: &ModelFile) -> Result<(PhysEnv, PhysState), DslError> {
    let g = mf.granularity;
    if g == 0 || g > SCALE_DIGITS {
        return err(DslErrorKind::Invalid, mf.main_span, format!("granularity must be in 1..={SCALE_DIGITS}"));
    }
    check_unique(mf.vars.iter().map(|v| (v.name.as_str(), v.span)), "variable")?;
    check_unique(mf.sensors.iter().map(|v| (v.name.as_str(), v.span)), "sensor")?;
    check_unique(mf.actuators.iter().map(|v| (v.name.as_str(), v.span)), "actuator")?;
    check_unique(mf.channels.iter().map(|v| (v.name.as_str(), v.span)), "channel")?;
    check_unique(mf.procs.iter().map(|v| (v.name.as_str(), v.span)), "process")?;

    let mut vars = Vec::new();
    let mut xs = Vec::new();
    for v in &mf.vars {
        for d in [v.init, v.lo, v.hi] {
            on_grid(d, g, v.span)?;
        }
        if v.lo > v.hi {
            return err(DslErrorKind::Invalid, v.span, format!("empty range for `{}`", v.name));
        }
        vars.push(VarSpec { name: name(&v.name), lo: v.lo, hi: v.hi });
        xs.push(v.init);
    }
    let var_index = |i: &Ident| -> Result<usize, DslError> {
        mf.vars
            .iter()
            .position(|v| v.name == i.name)
            .ok_or(())
            .or_else(|_| err(DslErrorKind::Undeclared, i.span, format!("undeclared variable `{}`", i.name)))
    };
    let mut sensors = Vec::new();
    let mut ss = Vec::new();
    for s in &mf.sensors {
        let source = var_index(&s.source)?;
        on_grid(s.noise.0, g, s.span)?;
        on_grid(s.noise.1, g, s.span)?;
        let noise = GridInterval::closed(s.noise.0, s.noise.1, g)
            .or_else(|e| err(DslErrorKind::Invalid, s.span, e.to_string()))?;
        sensors.push(SensorSpec { name: name(&s.name), source, noise, mode: s.mode });
        ss.push(xs[source]);
    }
    let mut actuators = Vec::new();
    let mut acts = Vec::new();
    for a in &mf.actuators {
        check_unique(a.values.iter().map(|(v, _)| (v.as_str(), a.span)), "actuator value")?;
        if !a.values.iter().any(|(v, _)| *v == a.init) {
            return err(DslErrorKind::Invalid, a.span, format!("initial value `{}` not among the values", a.init));
        }
        let values = a
            .values
            .iter()
            .enumerate()
            .map(|(k, (v, c))| (name(v), c.unwrap_or_else(|| Decimal::from_int(k as i64))))
            .collect();
        actuators.push(ActSpec { name: name(&a.name), values });
        acts.push(Value::atom(&a.init));
    }
    let mut channels: Vec<(crate::value::Name, Vec<Value>)> = Vec::new();
    for c in &mf.channels {
        let mut alpha = c.alphabet.clone();
        for v in &alpha {
            if let Value::Num(d) = v {
                on_grid(*d, g, c.span)?;
            }
        }
        alpha.sort();
        alpha.dedup();
        channels.push((name(&c.name), alpha));
    }
    channels.sort();

    let term = |v: &VExpr| -> PTerm {
        match v {
            VExpr::Num(d) => PTerm::Lit(Value::Num(*d)),
            VExpr::Ident(i) => {
                if let Some(k) = mf.vars.iter().position(|x| x.name == i.name) {
                    PTerm::Var(k)
                } else if let Some(k) = mf.actuators.iter().position(|x| x.name == i.name) {
                    PTerm::Act(k)
                } else {
                    PTerm::Lit(Value::atom(&i.name))
                }
            }
        }
    };
    fn cond(g: &GExpr, term: &dyn Fn(&VExpr) -> PTerm) -> Cond {
        match g {
            GExpr::True => Cond::True,
            GExpr::False => Cond::False,
            GExpr::Cmp(op, a, b) => Cond::Cmp(*op, term(a), term(b)),
            GExpr::Not(x) => Cond::Not(Box::new(cond(x, term))),
            GExpr::And(a, b) => Cond::And(Box::new(cond(a, term)), Box::new(cond(b, term))),
            GExpr::Or(a, b) => Cond::Or(Box::new(cond(a, term)), Box::new(cond(b, term))),
        }
    }
    let mut evol = vec![Vec::new(); vars.len()];
    for e in &mf.evolution {
        let k = var_index(&e.var)?;
        let rhs = match e.rhs {
            RhsDecl::Uniform(lo, hi) => {
                on_grid(lo, g, e.span)?;
                on_grid(hi, g, e.span)?;
                Rhs::Uniform(
                    GridInterval::closed(lo, hi, g).or_else(|x| err(DslErrorKind::Invalid, e.span, x.to_string()))?,
                )
            }
            RhsDecl::Const(c) => {
                on_grid(c, g, e.span)?;
                Rhs::Const(c)
            }
        };
        evol[k].push(EvolRule { guard: cond(&e.guard, &term), op: e.op, rhs });
    }
    for (k, rules) in evol.iter().enumerate() {
        if rules.is_empty() {
            return err(DslErrorKind::Invalid, mf.vars[k].span, format!("no evolution rule for `{}`", mf.vars[k].name));
        }
    }
    Ok((PhysEnv { granularity: g, vars, sensors, actuators, evol, channels }, PhysState { xs, ss, acts }))
}

/// Validates a model and builds its initial system.
pub fn build_model(mf: &ModelFile) -> Result<Cps, DslError> {
    let (env, state) = build_physics(mf)?;
    check_recursion(mf)?;
    let mut low = Lower {
        mf,
        env: &env,
        procs: mf.procs.iter().map(|p| (p.name.as_str(), p)).collect(),
        fix: Vec::new(),
        vals: Vec::new(),
        memo: HashMap::new(),
    };
    let proc = low.process(&mf.main, mf.main_span)?;
    proc.check_time_guarded().or_else(|e| err(DslErrorKind::Unguarded, mf.main_span, e.to_string()))?;
    Ok(Cps::live(Env::new(env), state, proc))
}

/// A weight written as a decimal, e.g. `0.5`.
pub fn weight(d: &str) -> Prob {
    d.parse::<Decimal>().map(|d| d.to_rational()).unwrap_or_else(|_| Prob::zero())
}
