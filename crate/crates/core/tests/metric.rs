mod common;

use common::*;
use num_traits::{One, Zero};

use pccps::casestudy::{build_engine_with, EngineParams, Variant};
use pccps::gen::rng;
use pccps::metric::*;
use pccps::modeldsl::load_model;
use pccps::semantics::Cps;

fn model(main: &str) -> Cps {
    let src =
        format!("model t {{ granularity 1; channel c alphabet {{a, b}}; channel d alphabet {{a}}; main {main}; }}");
    load_model(&src).unwrap_or_else(|e| panic!("{e}\n{src}"))
}

#[test]
fn output_without_weak_answer_is_at_distance_one() {
    let m = model("fix X. out c(a).tick.X timeout X");
    let n = model("fix X. tick.X");
    assert_eq!(dn(&m, &n, 1), Q::one());
}

#[test]
fn zeroth_iterate_is_zero() {
    let m = model("fix X. out c(a).tick.X timeout X");
    assert!(dn(&m, &Cps::Dead, 0).is_zero());
}

#[test]
fn silent_tick_only_systems_converge_to_zero() {
    let m = model("fix X. tick.X");
    let n = model("fix X. tick.tick.X");
    // Lumped together the roots share a class and the rooted table is empty.
    let r = d_limit::<Q>(&m, &n, 10, &MetricOptions::default()).unwrap();
    assert_eq!((r.value.as_str(), r.converged, r.n), ("0/1", true, 1));
    // The full table also holds the entries against Dead, which reach 1 at
    // n = 1, so it is first seen unchanged at n = 2.
    let r = d_limit::<Q>(&m, &n, 10, &MetricOptions::plain_full()).unwrap();
    assert_eq!((r.value.as_str(), r.converged, r.n), ("0/1", true, 2));
}

#[test]
fn output_against_dead_is_one_and_converged() {
    let m = model("fix X. out c(a).tick.X timeout X");
    let r = d_limit::<Q>(&m, &Cps::Dead, 10, &MetricOptions::default()).unwrap();
    assert_eq!(r.value, "1/1");
    assert!(r.converged);
}

#[test]
fn tau_steps_are_absorbed_by_weak_answers() {
    let m = model("fix X. out c(a).tick.X timeout X");
    let n = model("(out d(a).nil timeout nil || in d(y).fix X. out c(a).tick.X timeout X timeout nil) \\ d");
    for k in 0..6 {
        assert!(dn(&m, &n, k).is_zero(), "n = {k}");
    }
    // Without the restriction the handshake partners are observable.
    let open = model("out d(a).nil timeout nil || in d(y).fix X. out c(a).tick.X timeout X timeout nil");
    assert_eq!(dn(&m, &open, 1), Q::one());
}

#[test]
fn finite_iterates_can_break_the_triangle_inequality() {
    // O only moves silently to O', which outputs. Dead matches O's silent
    // step by staying put, so d¹(O, Dead) = 0 and d¹(O, O') = 0, yet
    // d¹(O', Dead) = 1.
    let o = model("(out d(a).nil timeout nil || in d(y).fix X. out c(a).tick.X timeout X timeout nil) \\ d");
    let space = MetricSpace::build(&[o], &MetricOptions::plain_full()).unwrap();
    let root = space.roots[0];
    let (_, g) = &space.lts.edges[root as usize][0];
    let next = *g.as_dirac().unwrap();
    let engine = MetricEngine::<Q>::full(&space);
    let d1 = engine.iterate(1, |_| {}).unwrap();
    assert_eq!(d1.get(root, DEAD), Q::zero());
    assert_eq!(d1.get(root, next), Q::zero());
    assert_eq!(d1.get(next, DEAD), Q::one());
    assert!(triangle_violation(&d1, space.classes() as u32).is_some());
    let (limit, settled) = engine.limit(50).unwrap();
    assert!(settled);
    assert_eq!(triangle_violation(&limit, space.classes() as u32), None);
}

#[test]
fn probabilistic_branches_give_fractional_distance() {
    let m = model("fix X. tick.{1/4: out c(a).tick.X timeout X | 3/4: X}");
    let n = model("fix X. tick.X");
    assert_eq!(dn(&m, &n, 1), Q::zero());
    assert_eq!(dn(&m, &n, 2), Q::new(1.into(), 4.into()));
}

#[test]
fn verdicts() {
    let m = model("fix X. tick.{1/4: out c(a).tick.X timeout X | 3/4: X}");
    let n = model("fix X. tick.X");
    assert_eq!(check_bisimilar::<Q>(&m, &m, 5, &MetricOptions::default()).unwrap(), Verdict::BisimilarUpTo(5));
    match check_bisimilar::<Q>(&m, &n, 5, &MetricOptions::default()).unwrap() {
        Verdict::Distinct { n, value, witness } => {
            assert_eq!((n, value.as_str()), (2, "1/4"));
            assert_eq!(witness.unwrap().action, "tick");
        }
        v => panic!("{v:?}"),
    }
}

#[test]
fn report_serializes() {
    let m = model("fix X. tick.{1/4: out c(a).tick.X timeout X | 3/4: X}");
    let n = model("fix X. tick.X");
    let r = metric_report::<Q>(&m, &n, 2, &MetricOptions::default()).unwrap();
    assert_eq!(r.value, "1/4");
    let js = serde_json::to_value(&r).unwrap();
    for k in ["n", "value", "converged", "pairs_computed", "witness"] {
        assert!(js.get(k).is_some(), "{k}");
    }
}

#[test]
fn random_models_are_pseudometric_and_monotone() {
    let mut r = rng(7);
    let mut settled = 0;
    for _ in 0..12 {
        let m = small_cps(&mut r, "", 25);
        let n = small_cps(&mut r, "", 25);
        settled += pseudometric_suite(&m, &n, 4, 200).unwrap().1 as usize;
    }
    assert!(settled >= 6, "only {settled} runs settled");
}

#[test]
fn reduced_space_matches_plain_space() {
    let mut r = rng(11);
    for _ in 0..25 {
        let m = small_cps(&mut r, "", 40);
        let n = small_cps(&mut r, "", 40);
        reductions_agree(&m, &n, 5).unwrap();
        assert!(dn(&m, &m, 3).is_zero());
    }
}

#[test]
fn zero_patterns_match_exact_iterates() {
    let mut r = rng(23);
    for _ in 0..15 {
        let m = small_cps(&mut r, "", 30);
        let n = small_cps(&mut r, "", 30);
        let space = MetricSpace::build(&[m.clone(), n.clone()], &MetricOptions::plain_full()).unwrap();
        let engine = MetricEngine::<Q>::full(&space);
        let mut exact = Vec::new();
        engine.iterate(6, |t| exact.push(t.clone())).unwrap();
        let mut k = 0;
        engine
            .iterate_pattern(6, |t| {
                for (v, w) in t.values().iter().zip(exact[k].values()) {
                    assert_eq!(v.is_zero(), w.is_zero(), "n = {k}");
                }
                k += 1;
            })
            .unwrap();
        let depth = separation_depth::<Q>(&m, &n, 6, &MetricOptions::default()).unwrap();
        let verdict = check_bisimilar::<Q>(&m, &n, 6, &MetricOptions::default()).unwrap();
        match verdict {
            Verdict::BisimilarUpTo(_) => assert_eq!(depth, None),
            Verdict::Distinct { n, .. } => assert_eq!(depth, Some(n)),
        }
    }
}

#[test]
fn congruence_on_random_triples() {
    let mut r = rng(13);
    for _ in 0..4 {
        let m = small_cps(&mut r, "", 12);
        let n = small_cps(&mut r, "", 12);
        let o = small_cps(&mut r, "o", 8);
        congruence(&mut r, &m, &n, &o, 3).unwrap();
    }
}

#[test]
fn non_expansiveness_on_random_quadruples() {
    let mut r = rng(17);
    for _ in 0..3 {
        let (m, n) = (small_cps(&mut r, "", 10), small_cps(&mut r, "", 10));
        let (m2, n2) = (small_cps(&mut r, "q", 10), small_cps(&mut r, "q", 10));
        non_expansive(&m, &n, &m2, &n2, 3).unwrap();
    }
}

#[test]
fn reduced_engines() {
    let std = build_engine_with(&EngineParams::reduced(Variant::Standard));
    let tilde = build_engine_with(&EngineParams::reduced(Variant::Tilde));
    let hat = build_engine_with(&EngineParams::reduced(Variant::Hat));
    assert!(dn(&std, &tilde, 8).is_zero());
    // The weaker cooling is eventually told apart; the zero-pattern search
    // and the exact iteration agree on when.
    let depth = separation_depth::<Q>(&std, &hat, 40, &MetricOptions::default()).unwrap();
    match check_bisimilar::<Q>(&std, &hat, 40, &MetricOptions::default()).unwrap() {
        Verdict::Distinct { n, .. } => assert_eq!(depth, Some(n)),
        v => panic!("{v:?}"),
    }
}
