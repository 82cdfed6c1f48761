//! Reachable pLTS construction, time-property checks, barb search and
//! seeded trace sampling.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dist::{Dist, Prob};
use crate::physics;
use crate::semantics::{Action, Cause, Cps, SemError, Stepper};
use crate::value::{Name, Value};

pub type StateId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_states: usize,
    pub max_tau_depth: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_states: 2_000_000, max_tau_depth: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExploreError {
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error("not well-timed: {reason} at state {witness}")]
    NotWellTimed { witness: String, reason: String },
    #[error(transparent)]
    Syntax(#[from] crate::syntax::SyntaxError),
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub action: Action,
    pub cause: Cause,
    pub target: Dist<StateId>,
}

/// An explored probabilistic labelled transition system.
#[derive(Debug, Clone)]
pub struct Plts {
    pub states: Vec<Cps>,
    pub edges: Vec<Vec<Edge>>,
    pub root: StateId,
    /// Set when `max_states` stopped the exploration early.
    pub truncated: bool,
}

impl Plts {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn dead(&self) -> Option<StateId> {
        self.states.iter().position(Cps::is_dead).map(|i| i as StateId)
    }

    /// Length of the longest chain of non-tick transitions, or the state on a
    /// cycle of such transitions.
    pub fn longest_untimed_chain(&self) -> Result<usize, StateId> {
        let n = self.len();
        let mut depth = vec![0usize; n];
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut color = vec![0u8; n];
        for start in 0..n {
            if color[start] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
            color[start] = 1;
            while let Some(&mut (s, ref mut next)) = stack.last_mut() {
                let succ: Option<usize> = loop {
                    let Some((ei, k)) = flat_index(&self.edges[s], *next) else { break None };
                    *next += 1;
                    let e = &self.edges[s][ei];
                    if e.action.is_tick() {
                        continue;
                    }
                    break e.target.support().nth(k).map(|t| *t as usize);
                };
                match succ {
                    Some(t) => match color[t] {
                        0 => {
                            color[t] = 1;
                            stack.push((t, 0));
                        }
                        1 => return Err(t as StateId),
                        _ => depth[s] = depth[s].max(depth[t] + 1),
                    },
                    None => {
                        color[s] = 2;
                        stack.pop();
                        if let Some(&(p, _)) = stack.last() {
                            depth[p] = depth[p].max(depth[s] + 1);
                        }
                    }
                }
            }
        }
        Ok(depth.into_iter().max().unwrap_or(0))
    }

    /// Graphviz rendering; probabilistic branches go through small point nodes.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph plts {\n  node [shape=box,fontsize=9];\n");
        for (i, s) in self.states.iter().enumerate() {
            let label = format!("{s:?}").replace('"', "'");
            let _ = writeln!(out, "  s{i} [label=\"{i}: {label}\"];");
        }
        for (i, es) in self.edges.iter().enumerate() {
            for (k, e) in es.iter().enumerate() {
                if let Some(t) = e.target.as_dirac() {
                    let _ = writeln!(out, "  s{i} -> s{t} [label=\"{}\"];", e.action);
                    continue;
                }
                let _ = writeln!(out, "  d{i}_{k} [shape=point];");
                let _ = writeln!(out, "  s{i} -> d{i}_{k} [label=\"{}\"];", e.action);
                for (t, p) in e.target.iter() {
                    let _ = writeln!(out, "  d{i}_{k} -> s{t} [label=\"{p}\",style=dashed];");
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Position of the `k`-th successor across a state's edges: (edge, support index).
fn flat_index(edges: &[Edge], mut k: usize) -> Option<(usize, usize)> {
    for (i, e) in edges.iter().enumerate() {
        if k < e.target.len() {
            return Some((i, k));
        }
        k -= e.target.len();
    }
    None
}

/// Breadth-first closure of `m` under system transitions.
///
/// Frontier levels are expanded in parallel; identifiers are assigned in a
/// fixed order so the result does not depend on the number of workers.
pub fn reachable(m: &Cps, limits: Limits) -> Result<Plts, ExploreError> {
    reachable_with(&Stepper::new(), m, limits)
}

pub fn reachable_with(stepper: &Stepper, m: &Cps, limits: Limits) -> Result<Plts, ExploreError> {
    if let Some(l) = m.as_live() {
        l.proc.check_finite_control()?;
    }
    let mut index: HashMap<Cps, StateId> = HashMap::new();
    let mut states = vec![m.clone()];
    let mut edges: Vec<Vec<Edge>> = vec![Vec::new()];
    index.insert(m.clone(), 0);
    let mut frontier: Vec<StateId> = vec![0];
    let mut truncated = false;
    while !frontier.is_empty() && !truncated {
        let expanded: Vec<Result<Vec<(Action, Cause, Dist<Cps>)>, SemError>> = frontier
            .par_iter()
            .map(|&s| {
                let m = &states[s as usize];
                stepper
                    .moves(m)?
                    .into_iter()
                    .map(|mv| Ok((mv.action.clone(), mv.cause.clone(), mv.target(m)?)))
                    .collect()
            })
            .collect();
        let mut next = Vec::new();
        for (&s, res) in frontier.iter().zip(expanded) {
            let mut out = Vec::new();
            for (action, cause, target) in res? {
                let mut ids: Vec<(StateId, Prob)> = Vec::with_capacity(target.len());
                for (t, p) in target.into_entries() {
                    let id = match index.get(&t) {
                        Some(id) => *id,
                        None => {
                            if states.len() >= limits.max_states {
                                truncated = true;
                                continue;
                            }
                            let id = states.len() as StateId;
                            index.insert(t.clone(), id);
                            states.push(t);
                            edges.push(Vec::new());
                            next.push(id);
                            id
                        }
                    };
                    ids.push((id, p));
                }
                out.push(Edge { action, cause, target: Dist::from_weights(ids) });
            }
            edges[s as usize] = out;
        }
        frontier = next;
    }
    let plts = Plts { states, edges, root: 0, truncated };
    match plts.longest_untimed_chain() {
        Err(s) => Err(ExploreError::NotWellTimed {
            witness: format!("{:?}", plts.states[s as usize]),
            reason: "cycle of untimed transitions".into(),
        }),
        Ok(d) if d > limits.max_tau_depth => Err(ExploreError::NotWellTimed {
            witness: format!("{:?}", plts.states[plts.root as usize]),
            reason: format!("untimed chain of length {d} exceeds {}", limits.max_tau_depth),
        }),
        Ok(_) => Ok(plts),
    }
}

/// Outcome of one clause of the time-properties check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clause {
    Pass,
    Fail { witness: StateId, detail: String },
}

impl Clause {
    pub fn passed(&self) -> bool {
        matches!(self, Clause::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeReport {
    pub determinism: Clause,
    pub maximal_progress: Clause,
    pub patience: Clause,
    pub well_timedness: Clause,
    /// Longest run of untimed transitions, when finite.
    pub untimed_bound: Option<usize>,
}

impl TimeReport {
    pub fn all_pass(&self) -> bool {
        [&self.determinism, &self.maximal_progress, &self.patience, &self.well_timedness].iter().all(|c| c.passed())
    }
}

/// Evaluates time determinism, maximal progress, patience and well-timedness
/// over every state of `plts`.
pub fn check_time_properties(plts: &Plts) -> TimeReport {
    let first = |f: &dyn Fn(usize) -> Option<String>| -> Clause {
        (0..plts.len())
            .find_map(|s| f(s).map(|detail| Clause::Fail { witness: s as StateId, detail }))
            .unwrap_or(Clause::Pass)
    };
    let ticks = |s: usize| plts.edges[s].iter().filter(|e| e.action.is_tick()).count();
    let has_tau = |s: usize| plts.edges[s].iter().any(|e| e.action.is_tau());
    let determinism = first(&|s| {
        let t: Vec<&Dist<StateId>> = plts.edges[s].iter().filter(|e| e.action.is_tick()).map(|e| &e.target).collect();
        (t.len() > 1 && t.iter().any(|d| *d != t[0])).then(|| format!("{} distinct tick distributions", t.len()))
    });
    let maximal_progress =
        first(&|s| (has_tau(s) && ticks(s) > 0).then(|| "tick enabled together with tau".to_string()));
    let patience = first(&|s| {
        let l = plts.states[s].as_live()?;
        let inv = physics::check_inv(&l.env, &l.state);
        (ticks(s) == 0 && !has_tau(s) && inv).then(|| "no tick, no tau and invariant holds".to_string())
    });
    let (well_timedness, untimed_bound) = match plts.longest_untimed_chain() {
        Ok(d) => (Clause::Pass, Some(d)),
        Err(s) => (Clause::Fail { witness: s, detail: "cycle of untimed transitions".into() }, None),
    };
    TimeReport { determinism, maximal_progress, patience, well_timedness, untimed_bound }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    /// One-based time slot in which the action happens.
    pub slot: u64,
    pub action: Action,
    pub cause: Cause,
    pub state: Cps,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub seed: Option<u64>,
    pub start: Cps,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// Number of the slot in which the last action happens.
    pub fn slots(&self) -> u64 {
        self.steps.last().map_or(1, |s| s.slot)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BarbResult {
    Found(Trace),
    /// No barb within the bound; `exhaustive` is set when the whole reachable
    /// space was covered, so absence holds for every slot count.
    Absent {
        exhaustive: bool,
    },
    /// The state limit was hit before the search finished.
    Inconclusive,
}

/// Shortest (by number of ticks) trace from `m` whose last action is an output
/// on `chan`, exploring on the fly up to `max_slots` slots.
pub fn find_barb(m: &Cps, chan: &str, max_slots: Option<u64>, limits: Limits) -> Result<BarbResult, ExploreError> {
    let stepper = Stepper::new();
    let mut index: HashMap<Cps, usize> = HashMap::new();
    let mut nodes: Vec<(Cps, u64, Option<(usize, Action, Cause)>)> = vec![(m.clone(), 0, None)];
    index.insert(m.clone(), 0);
    let mut queue: VecDeque<usize> = VecDeque::from([0]);
    let mut done = vec![false];
    let mut cut = false;
    while let Some(i) = queue.pop_front() {
        if done[i] {
            continue;
        }
        done[i] = true;
        let (state, ticks) = (nodes[i].0.clone(), nodes[i].1);
        for mv in stepper.moves(&state)? {
            if let Action::Out(c, _) = &mv.action {
                if &**c == chan {
                    let mut steps = vec![TraceStep {
                        slot: ticks + 1,
                        action: mv.action.clone(),
                        cause: mv.cause.clone(),
                        state: mv.target(&state)?.support().next().cloned().unwrap_or(Cps::Dead),
                    }];
                    let mut k = i;
                    while let Some((p, a, c)) = nodes[k].2.clone() {
                        let slot = nodes[p].1 + 1;
                        steps.push(TraceStep { slot, action: a, cause: c, state: nodes[k].0.clone() });
                        k = p;
                    }
                    steps.reverse();
                    return Ok(BarbResult::Found(Trace { seed: None, start: m.clone(), steps }));
                }
            }
            let dt = mv.action.is_tick() as u64;
            let nt = ticks + dt;
            if max_slots.is_some_and(|k| nt >= k) {
                cut = true;
                continue;
            }
            for t in mv.target(&state)?.support() {
                match index.get(t) {
                    Some(&j) if done[j] || nodes[j].1 <= nt => {}
                    Some(&j) => {
                        nodes[j].1 = nt;
                        nodes[j].2 = Some((i, mv.action.clone(), mv.cause.clone()));
                        if dt == 0 {
                            queue.push_front(j)
                        } else {
                            queue.push_back(j)
                        }
                    }
                    None => {
                        if nodes.len() >= limits.max_states {
                            return Ok(BarbResult::Inconclusive);
                        }
                        index.insert(t.clone(), nodes.len());
                        nodes.push((t.clone(), nt, Some((i, mv.action.clone(), mv.cause.clone()))));
                        done.push(false);
                        let j = nodes.len() - 1;
                        if dt == 0 {
                            queue.push_front(j)
                        } else {
                            queue.push_back(j)
                        }
                    }
                }
            }
        }
    }
    Ok(BarbResult::Absent { exhaustive: !cut })
}

/// Samples a run of `slots` time slots. Nondeterministic choices are resolved
/// uniformly and probabilistic ones by the seeded generator.
pub fn sample_trace(m: &Cps, slots: u64, seed: u64) -> Result<Trace, SemError> {
    sample_trace_with(&Stepper::new(), m, slots, seed)
}

pub fn sample_trace_with(stepper: &Stepper, m: &Cps, slots: u64, seed: u64) -> Result<Trace, SemError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = m.clone();
    let mut ticks = 0u64;
    let mut steps = Vec::new();
    while ticks < slots {
        let moves = stepper.moves(&cur)?;
        if moves.is_empty() {
            break;
        }
        let mv = &moves[rng.random_range(0..moves.len())];
        let next = mv.sample(&cur, &mut rng)?;
        steps.push(TraceStep {
            slot: ticks + 1,
            action: mv.action.clone(),
            cause: mv.cause.clone(),
            state: next.clone(),
        });
        if mv.action.is_tick() {
            ticks += 1;
        }
        cur = next;
    }
    Ok(Trace { seed: Some(seed), start: m.clone(), steps })
}

/// Action column text: the action, with the physical cause of silent steps.
pub fn action_text(action: &Action, cause: &Cause) -> String {
    match (action, cause) {
        (Action::Tau, Cause::Proc) => "tau".into(),
        (Action::Tau, c) => format!("tau({c})"),
        (a, _) => a.to_string(),
    }
}

pub const CSV_HEADER: &str = "slot,action,temp,cool,sensed";

/// CSV rows of a trace (no header). The physical columns show the first
/// declared variable, actuator and sensor after the step.
pub fn trace_csv_rows(trace: &Trace) -> String {
    let mut out = String::new();
    for st in &trace.steps {
        let (temp, cool, sensed) = match st.state.as_live() {
            None => (String::new(), String::new(), String::new()),
            Some(l) => {
                let g = l.env.granularity;
                (
                    l.state.xs.first().map(|x| x.render(g)).unwrap_or_default(),
                    l.state.acts.first().map(|v| v.render(g)).unwrap_or_default(),
                    l.state.ss.first().map(|x| x.render(g)).unwrap_or_default(),
                )
            }
        };
        let _ = writeln!(out, "{},{},{},{},{}", st.slot, action_text(&st.action, &st.cause), temp, cool, sensed);
    }
    out
}

/// A full CSV document for one or more traces.
pub fn traces_csv(traces: &[Trace]) -> String {
    let mut out = String::new();
    let seed = traces.first().and_then(|t| t.seed).unwrap_or(0);
    let _ = writeln!(out, "# seed={seed}");
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, t) in traces.iter().enumerate() {
        if traces.len() > 1 {
            let _ = writeln!(out, "# run={} seed={}", i, t.seed.unwrap_or(0));
        }
        out.push_str(&trace_csv_rows(t));
    }
    out
}

/// Seed of run `i` in a campaign started from `seed`.
pub fn run_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Channels on which `plts` has an output edge.
pub fn output_channels(plts: &Plts) -> Vec<(Name, Value)> {
    let mut out: Vec<(Name, Value)> = plts
        .edges
        .iter()
        .flatten()
        .filter_map(|e| match &e.action {
            Action::Out(c, v) => Some((c.clone(), v.clone())),
            _ => None,
        })
        .collect();
    out.sort();
    out.dedup();
    out
}
