use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pccps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pccps")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit status")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, main: &str) -> PathBuf {
    let p = dir.join(name);
    let src = format!("model t {{ granularity 1; channel c alphabet {{a, b}}; main {main}; }}");
    std::fs::write(&p, src).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn emitted_engine_passes_timecheck() {
    let dir = tempfile::tempdir().unwrap();
    let eng = dir.path().join("eng.pccps");
    assert_eq!(code(&pccps(&["casestudy", "engine", "--g", "1", "--emit", s(&eng)])), 0);
    let o = pccps(&["timecheck", s(&eng)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).matches(": pass").count(), 4);
    let o = pccps(&["parse", s(&eng)]);
    assert_eq!(code(&o), 0);
}

#[test]
fn barb_search() {
    let dir = tempfile::tempdir().unwrap();
    let hat = dir.path().join("hat.pccps");
    let eng = dir.path().join("eng.pccps");
    pccps(&["casestudy", "engine-hat", "--emit", s(&hat)]);
    pccps(&["casestudy", "engine", "--emit", s(&eng)]);
    let o = pccps(&["barb", s(&hat), "--channel", "warning", "--max-slots", "20"]);
    assert_eq!(code(&o), 0);
    let first = stdout(&o).lines().next().unwrap().to_string();
    let slot: u64 = first.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(slot <= 17, "{first}");
    let o = pccps(&["barb", s(&eng), "--channel", "warning"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("in any slot"));
}

#[test]
fn metric_json_and_modes() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.pccps", "fix X. tick.{1/4: out c(a).tick.X timeout X | 3/4: X}");
    let n = write(dir.path(), "n.pccps", "fix X. tick.X");
    let out = dir.path().join("d.json");
    assert_eq!(code(&pccps(&["metric", s(&m), s(&n), "--n", "2", "--out", s(&out)])), 0);
    let js: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(js["value"], "1/4");
    assert_eq!(js["n"], 2);
    let o = pccps(&["metric", s(&m), s(&n), "--n", "2", "--float", "--tol", "1e-12"]);
    let js: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(js["value"].as_str().unwrap().parse::<f64>().unwrap(), 0.25);
    let o = pccps(&["metric", s(&m), s(&m), "--n", "5", "--limit"]);
    let js: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((js["value"].as_str(), js["converged"].as_bool()), (Some("0/1"), Some(true)));
}

#[test]
fn bisim_verdicts_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.pccps", "fix X. tick.{1/4: out c(a).tick.X timeout X | 3/4: X}");
    let n = write(dir.path(), "n.pccps", "fix X. tick.X");
    let o = pccps(&["bisim", s(&m), s(&n), "--n-max", "5", "--expect-bisimilar"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("d^2 = 1/4"));
    assert_eq!(code(&pccps(&["bisim", s(&m), s(&n), "--n-max", "5"])), 0);
    assert_eq!(code(&pccps(&["bisim", s(&m), s(&m), "--n-max", "5", "--expect-bisimilar"])), 0);
}

#[test]
fn simulation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let eng = dir.path().join("eng.pccps");
    pccps(&["casestudy", "engine", "--emit", s(&eng)]);
    let run = |seed: &str| stdout(&pccps(&["simulate", s(&eng), "--slots", "30", "--runs", "3", "--seed", seed]));
    let a = run("5");
    assert_eq!(a, run("5"));
    assert_ne!(a, run("6"));
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some("# seed=5"));
    assert_eq!(lines.next(), Some("slot,action,temp,cool,sensed"));
}

#[test]
fn usage_and_resource_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pccps(&["frobnicate"])), 2);
    assert_eq!(code(&pccps(&["metric", "a", "b"])), 2);
    assert_eq!(code(&pccps(&["lts", s(&dir.path().join("missing.pccps"))])), 2);
    let bad = dir.path().join("bad.pccps");
    std::fs::write(&bad, "model t { granularity 1; main tick.; }").unwrap();
    assert_eq!(code(&pccps(&["parse", s(&bad)])), 1);
    assert_eq!(code(&pccps(&["lts", s(&bad)])), 2);
    let eng = dir.path().join("eng.pccps");
    pccps(&["casestudy", "engine", "--emit", s(&eng)]);
    let o = pccps(&["lts", s(&eng), "--max-states", "50"]);
    assert_eq!(code(&o), 3);
    let dot = dir.path().join("g.dot");
    let m = write(dir.path(), "m.pccps", "fix X. tick.X");
    assert_eq!(code(&pccps(&["lts", s(&m), "--dot", s(&dot)])), 0);
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("digraph"));
    assert_eq!(code(&pccps(&["--jobs", "0", "lts", s(&m)])), 2);
}
