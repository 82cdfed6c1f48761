//! Acceptance runner. Prints one line per criterion; pass criterion numbers as
//! arguments to run a subset. Known deviations are reported but do not fail
//! the run.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use num_traits::Zero;
use rand::Rng;

use common::*;
use pccps::casestudy::*;
use pccps::dist::{prob, Dist, Prob};
use pccps::explore::{
    check_time_properties, find_barb, output_channels, reachable, run_seed, sample_trace_with, BarbResult, Limits,
};
use pccps::gen::{corpus_model, rng};
use pccps::metric::{d_n, MetricEngine, MetricOptions, MetricSpace, MetricTable};
use pccps::modeldsl::{parse_model, render_model};
use pccps::semantics::{compose_logic, declare_channels, restrict, Action, Cps, Stepper};
use pccps::transport::{kantorovich, matchings_oracle};
use pccps::value::{name, Decimal};

enum Outcome {
    Pass(String),
    /// A documented deviation: reported, but not a failure of the run.
    Known(String),
    Fail(String),
}

use Outcome::*;

fn dec(s: &str) -> Decimal {
    s.parse().expect("decimal literal")
}

fn c1() -> Outcome {
    let plts = reachable(&build_engine(1, Variant::Standard), Limits::default()).expect("explores");
    let r = check_time_properties(&plts);
    let detail = format!("{} states, longest untimed run {:?}", plts.len(), r.untimed_bound);
    if r.all_pass() && !plts.truncated {
        Pass(detail)
    } else {
        Fail(format!("{detail}: {r:?}"))
    }
}

fn c2() -> Outcome {
    let plts = reachable(&build_engine(1, Variant::Standard), Limits::default()).expect("explores");
    let warnings = output_channels(&plts).into_iter().filter(|(c, _)| &**c == "warning").count();
    let dead = plts.dead().is_some();
    let detail = format!("{} states, {warnings} warning outputs, Dead reachable: {dead}", plts.len());
    if warnings == 0 && !dead && !plts.truncated {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn c3() -> Outcome {
    let plts = reachable(&build_engine(1, Variant::Standard), Limits::default()).expect("explores");
    let t = switch_temperatures(&plts, "temp", "cool");
    let span = |s: &std::collections::BTreeSet<Decimal>| match (s.first(), s.last()) {
        (Some(a), Some(b)) => format!("[{a}, {b}]"),
        _ => "none".into(),
    };
    let detail = format!("on at {}, off at {}", span(&t.on), span(&t.off));
    if !t.on.is_empty() && !t.off.is_empty() && t.within((dec("9.9"), dec("11.5")), (dec("2.9"), dec("8.5"))) {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn c4() -> Outcome {
    match find_barb(&build_engine(1, Variant::Hat), "warning", Some(17), Limits::default()) {
        Ok(BarbResult::Found(t)) => Pass(format!("warning in slot {}", t.slots())),
        other => Fail(format!("{other:?}")),
    }
}

/// Rooted engine for the pair of roots of `a` and `b`.
fn rooted_pair(a: &Cps, b: &Cps) -> (MetricSpace, (u32, u32)) {
    let space = MetricSpace::build(&[a.clone(), b.clone()], &MetricOptions::default()).expect("space");
    let roots = (space.roots[0], space.roots[1]);
    (space, roots)
}

fn c5() -> Outcome {
    let (space, (x, y)) = rooted_pair(&build_engine(1, Variant::Standard), &build_engine(1, Variant::Tilde));
    let engine = MetricEngine::<Q>::rooted(&space, &[(x, y)]);
    let mut bad = None;
    engine
        .iterate(25, |t: &MetricTable<Q>| {
            if bad.is_none() && !t.get(x, y).is_zero() {
                bad = Some((t.n, t.get(x, y)));
            }
        })
        .expect("metric");
    let detail = format!("{} classes, {} pairs", space.classes(), engine.pairs_computed());
    match bad {
        None => Pass(format!("d_n = 0 for n <= 25; {detail}")),
        Some((n, v)) => Fail(format!("d_{n} = {v}; {detail}")),
    }
}

fn c6() -> Outcome {
    let (space, (x, y)) = rooted_pair(&build_engine(1, Variant::Standard), &build_engine(1, Variant::Hat));
    let engine = MetricEngine::<Q>::rooted(&space, &[(x, y)]);
    let mut over = None;
    let mut last = Q::zero();
    engine
        .iterate(10, |t| {
            let v = t.get(x, y);
            if t.n > 0 && over.is_none() && v > engine_bound(1, t.n as u32) {
                over = Some(t.n);
            }
            last = v;
        })
        .expect("metric");
    let mut first = None;
    let mut at60 = false;
    engine
        .iterate_pattern(60, |t| {
            let pos = !t.get(x, y).is_zero();
            if pos && first.is_none() {
                first = Some(t.n);
            }
            at60 = pos && t.n == 60;
        })
        .expect("metric");
    let detail = format!(
        "d_10 = {last} within the bound for n <= 10; first positive iterate n = {first:?}, d_60 > 0: {at60}; {} pairs",
        engine.pairs_computed()
    );
    if over.is_none() && at60 {
        Pass(detail)
    } else {
        Fail(format!("{detail}; bound exceeded at {over:?}"))
    }
}

fn eighths<R: Rng>(r: &mut R, len: usize) -> Vec<Prob> {
    let raw: Vec<i64> = (0..len).map(|_| r.random_range(1..=6)).collect();
    let sum: i64 = raw.iter().sum();
    raw.iter().map(|x| prob(*x, sum)).collect()
}

fn dist(w: &[Prob]) -> Dist<usize> {
    Dist::from_weights(w.iter().cloned().enumerate())
}

fn c7() -> Outcome {
    let mut r = rng(70);
    for i in 0..500 {
        let (m, n) = (r.random_range(1..=4), r.random_range(1..=4));
        let (a, b) = (eighths(&mut r, m), eighths(&mut r, n));
        let cost: Vec<Prob> = (0..m * n).map(|_| prob(r.random_range(0..=8), 8)).collect();
        let (k, _) = kantorovich(|x: &usize, y: &usize| cost[x * n + y].clone(), &dist(&a), &dist(&b)).expect("solves");
        let best = matchings_oracle(&a, &b)
            .expect("small")
            .iter()
            .map(|v| v.iter().map(|(i, j, f)| f * &cost[i * n + j]).sum::<Prob>())
            .min()
            .expect("a vertex exists");
        if k != best {
            return Fail(format!("instance {i}: kantorovich {k}, oracle {best}"));
        }
    }
    Pass("500 instances agree".into())
}

/// A random pseudometric on `k` points: shortest paths over random weights.
fn pseudometric<R: Rng>(r: &mut R, k: usize) -> Vec<Vec<Prob>> {
    let mut d = vec![vec![Prob::zero(); k]; k];
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    for (i, j) in pairs {
        let w = prob(r.random_range(0..=8), 8);
        (d[i][j], d[j][i]) = (w.clone(), w);
    }
    for via in 0..k {
        let row = d[via].clone();
        for line in d.iter_mut() {
            let to_via = line[via].clone();
            for (cell, from_via) in line.iter_mut().zip(&row) {
                let through = &to_via + from_via;
                if through < *cell {
                    *cell = through;
                }
            }
        }
    }
    d
}

fn c8() -> Outcome {
    let mut r = rng(80);
    for i in 0..200 {
        let k = r.random_range(2..=6);
        let d = pseudometric(&mut r, k);
        let g: Vec<Dist<usize>> = (0..3)
            .map(|_| {
                let mut pts: Vec<usize> = (0..k).collect();
                let take = r.random_range(1..=k.min(4));
                for s in 0..take {
                    let t = r.random_range(s..k);
                    pts.swap(s, t);
                }
                let w = eighths(&mut r, take);
                Dist::from_weights(pts[..take].iter().copied().zip(w))
            })
            .collect();
        let lift = |a: &Dist<usize>, b: &Dist<usize>| {
            kantorovich(|x: &usize, y: &usize| d[*x][*y].clone(), a, b).expect("solves").0
        };
        let kk: Vec<Vec<Prob>> = g.iter().map(|a| g.iter().map(|b| lift(a, b)).collect()).collect();
        for a in 0..3 {
            if !kk[a][a].is_zero() {
                return Fail(format!("table {i}: K(g, g) = {}", kk[a][a]));
            }
            for b in 0..3 {
                if kk[a][b] != kk[b][a] {
                    return Fail(format!("table {i}: asymmetric"));
                }
                for c in 0..3 {
                    if kk[a][b] > &kk[a][c] + &kk[c][b] {
                        return Fail(format!("table {i}: triangle fails"));
                    }
                }
            }
        }
    }
    Pass("200 tables and triples".into())
}

fn c9() -> Outcome {
    let mut r = rng(90);
    let (mut iterates, mut broken, mut settled) = (0, 0, 0);
    let mut broken_models = 0;
    for i in 0..100 {
        let (m, n) = (small_cps(&mut r, "", 25), small_cps(&mut r, "", 25));
        // Symmetry, range, monotonicity and the settled limit.
        match pseudometric_suite(&m, &n, 4, 200) {
            Ok((_, s)) => settled += s as usize,
            Err(e) => return Fail(format!("model {i}: {e}")),
        }
        let space = MetricSpace::build(&[m, n], &MetricOptions::plain_full()).expect("space");
        let classes = space.classes() as u32;
        let mut here = 0;
        MetricEngine::<Q>::full(&space)
            .iterate(4, |t| {
                iterates += 1;
                if triangle_violation(t, classes).is_some() {
                    here += 1;
                }
            })
            .expect("metric");
        broken += here;
        broken_models += (here > 0) as usize;
    }
    let detail = format!(
        "{iterates} iterates symmetric, zero-diagonal and monotone; {settled} limits settled and are pseudometrics; \
         triangle fails on {broken} finite iterates of {broken_models} models"
    );
    if broken == 0 {
        Pass(detail)
    } else {
        Known(format!("{detail} (finite iterates need not satisfy it)"))
    }
}

fn c10() -> Outcome {
    let mut r = rng(100);
    for i in 0..100 {
        let (m, n, o) = (small_cps(&mut r, "", 12), small_cps(&mut r, "", 12), small_cps(&mut r, "o", 8));
        if let Err(e) = congruence(&mut r, &m, &n, &o, 3) {
            return Fail(format!("triple {i}: {e}"));
        }
    }
    for i in 0..50 {
        let (m, n) = (small_cps(&mut r, "", 10), small_cps(&mut r, "", 10));
        let (m2, n2) = (small_cps(&mut r, "q", 10), small_cps(&mut r, "q", 10));
        if let Err(e) = non_expansive(&m, &n, &m2, &n2, 3) {
            return Fail(format!("quadruple {i}: {e}"));
        }
    }
    Pass("100 triples, 50 quadruples".into())
}

/// `(Eng^L || Check) \ warning` on reduced parameters.
fn engine_with_check(v: Variant) -> Cps {
    let e = build_engine_with(&EngineParams::reduced(v).side("L"));
    let chans: Vec<_> = check_channels().into_iter().map(|c| (name(&c.name), c.alphabet)).collect();
    let e = declare_channels(&e, &chans);
    restrict(&compose_logic(&e, &check_process()).expect("Check is pure logical"), &name("warning"))
}

fn c11() -> Outcome {
    // (a) The parallel and restriction steps with the real Check on reduced
    // engines; the disjoint-union steps are the ones exercised by criterion 10.
    let opts = MetricOptions::default();
    let side = |v| build_engine_with(&EngineParams::reduced(v).side("L"));
    let (std, hat) = (side(Variant::Standard), side(Variant::Hat));
    let (cs, ch) = (engine_with_check(Variant::Standard), engine_with_check(Variant::Hat));
    let mut chain = Vec::new();
    for n in [11, 13] {
        let p = d_n::<Q>(&std, &hat, n, &opts).expect("metric");
        let q = d_n::<Q>(&cs, &ch, n, &opts).expect("metric");
        if q > p {
            return Fail(format!("n = {n}: with Check {q} > {p}"));
        }
        chain.push(format!("n = {n}: p = {p}, with Check {q} <= p <= 2p = {}", &p + &p));
    }
    // (b) Sampled runs of the standard airplane.
    let plane = build_airplane(Variant::Standard, 1);
    let stepper = Stepper::new();
    for i in 0..10_000 {
        let t = sample_trace_with(&stepper, &plane, 100, run_seed(11, i)).expect("samples");
        let bad =
            t.steps.iter().find(|s| matches!(&s.action, Action::Out(c, _) if &**c == "alarm" || &**c == "failure"));
        if let Some(s) = bad {
            return Fail(format!("run {i}: {:?} in slot {}", s.action, s.slot));
        }
        if t.slots() < 100 {
            return Fail(format!("run {i} stopped in slot {}", t.slots()));
        }
    }
    Pass(format!("{}; 10000 airplane runs of 100 slots without alarm or failure", chain.join("; ")))
}

fn c12() -> Outcome {
    let mut r = rng(120);
    for i in 0..1000 {
        let mf = corpus_model(&mut r);
        let text = render_model(&mf);
        match parse_model(&text) {
            Ok(again) if again == mf && render_model(&again) == text => {}
            Ok(_) => return Fail(format!("model {i} changes on round trip")),
            Err(e) => return Fail(format!("model {i}: {e}")),
        }
    }
    Pass("1000 models".into())
}

fn c13() -> Outcome {
    let limit = engine_bound_limit(3000);
    // Every bound lies below the limit, so the gap shrinks exactly when the
    // bounds grow.
    let bounds: Vec<Prob> = (1..=6).map(|g| engine_bound(g, 3000)).collect();
    let shrinking = bounds.windows(2).all(|w| w[0] < w[1]) && bounds[5] < limit;
    let b6 = bounds[5].clone();
    let detail =
        format!("g = 6: {:.6}, limit {:.6}, gap to the limit shrinking in g: {shrinking}", to_f64(&b6), to_f64(&limit));
    if shrinking && b6 < prob(12, 1000) {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn to_f64(p: &Prob) -> f64 {
    use num_traits::ToPrimitive;
    p.to_f64().unwrap_or(f64::NAN)
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 13] = [
        ("time properties of Eng", c1),
        ("Eng never warns nor deadlocks", c2),
        ("cooling switch temperatures", c3),
        ("warning barb of the weak-cooling engine", c4),
        ("Eng and the unreliable-sensor engine at distance 0", c5),
        ("distance bound for the weak-cooling engine", c6),
        ("transport against vertex enumeration", c7),
        ("Kantorovich lifting of pseudometrics", c8),
        ("iterates on random models", c9),
        ("congruence and non-expansiveness", c10),
        ("airplane chain and sampled runs", c11),
        ("model round trip", c12),
        ("bound for growing granularity", c13),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let k = i + 1;
        if !wanted.is_empty() && !wanted.contains(&k) {
            continue;
        }
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Known(d) => ("FAIL (known)", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{k:>2} {status} {title}: {detail} [{secs:.1} s]");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
