//! Couplings and the Kantorovich lifting, solved as exact transportation problems.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::dist::Dist;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("cost {0} outside [0,1]")]
    CostRange(String),
    #[error("marginals have different mass")]
    Unbalanced,
    #[error("oracle limited to |supp|·|supp'| ≤ 20, got {0}")]
    OracleTooLarge(usize),
}

/// Optimal transportation plan between two weight vectors.
#[derive(Debug, Clone)]
pub struct Plan<S> {
    pub value: S,
    /// Positive flows `(row, column, amount)` in row-major order.
    pub flow: Vec<(usize, usize, S)>,
    /// Optimal dual potentials `(u, v)` with `u_i + v_j ≤ cost_ij`.
    pub potentials: (Vec<S>, Vec<S>),
}

/// A coupling between two distributions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching<T: Ord> {
    pub omega: BTreeMap<(T, T), crate::dist::Prob>,
}

/// Minimum-cost transportation by the network simplex method on the bipartite
/// graph, with Bland's smallest-index rule for entering and leaving cells.
///
/// `supply` and `demand` must have equal totals; `cost` is row-major `m × n`.
pub fn solve<S: Scalar>(supply: &[S], demand: &[S], cost: &[S]) -> Result<Plan<S>, TransportError> {
    let (m, n) = (supply.len(), demand.len());
    assert_eq!(cost.len(), m * n, "cost matrix shape");
    let total_s = supply.iter().fold(S::zero(), |a, x| a.add(x));
    let total_d = demand.iter().fold(S::zero(), |a, x| a.add(x));
    if !total_s.sub(&total_d).is_zero() {
        return Err(TransportError::Unbalanced);
    }
    if m == 0 || n == 0 {
        return Ok(Plan { value: S::zero(), flow: Vec::new(), potentials: (vec![S::zero(); m], vec![S::zero(); n]) });
    }
    let mut flow: Vec<S> = vec![S::zero(); m * n];
    let mut basic = vec![false; m * n];

    // Northwest-corner start: exactly m+n-1 basic cells forming a spanning tree.
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].clone().min_of(d[j].clone());
        flow[i * n + j] = x.clone();
        basic[i * n + j] = true;
        s[i] = s[i].sub(&x);
        d[j] = d[j].sub(&x);
        if i == m - 1 && j == n - 1 {
            break;
        }
        if (s[i].is_zero() && i < m - 1) || j == n - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }

    let mut u = vec![S::zero(); m];
    let mut v = vec![S::zero(); n];
    loop {
        // Tree adjacency over nodes 0..m (rows) and m..m+n (columns).
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
        for cell in (0..m * n).filter(|&c| basic[c]) {
            let (r, c) = (cell / n, cell % n);
            adj[r].push(m + c);
            adj[m + c].push(r);
        }
        // Potentials with u_0 = 0.
        let mut seen = vec![false; m + n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        u[0] = S::zero();
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if seen[y] {
                    continue;
                }
                seen[y] = true;
                if x < m {
                    v[y - m] = cost[x * n + (y - m)].sub(&u[x]);
                } else {
                    u[y] = cost[y * n + (x - m)].sub(&v[x - m]);
                }
                queue.push_back(y);
            }
        }
        let entering = (0..m * n).find(|&c| !basic[c] && cost[c].sub(&u[c / n]).sub(&v[c % n]).is_negative());
        let Some(enter) = entering else { break };
        let (ei, ej) = (enter / n, enter % n);

        // Tree path from column ej to row ei.
        let mut parent = vec![usize::MAX; m + n];
        let mut queue = VecDeque::from([ei]);
        parent[ei] = ei;
        while let Some(x) = queue.pop_front() {
            if x == m + ej {
                break;
            }
            for &y in &adj[x] {
                if parent[y] == usize::MAX {
                    parent[y] = x;
                    queue.push_back(y);
                }
            }
        }
        let mut path_cells = Vec::new();
        let mut node = m + ej;
        while node != ei {
            let p = parent[node];
            let cell = if node < m { node * n + (p - m) } else { p * n + (node - m) };
            path_cells.push(cell);
            node = p;
        }
        // Along the path signs alternate starting with minus.
        let minus: Vec<usize> = path_cells.iter().step_by(2).copied().collect();
        let plus: Vec<usize> = path_cells.iter().skip(1).step_by(2).copied().collect();
        let mut leave = minus[0];
        for &c in &minus[1..] {
            match flow[c].compare(&flow[leave]) {
                std::cmp::Ordering::Less => leave = c,
                std::cmp::Ordering::Equal if c < leave => leave = c,
                _ => {}
            }
        }
        let theta = flow[leave].clone();
        for &c in &minus {
            flow[c] = flow[c].sub(&theta);
        }
        for &c in &plus {
            flow[c] = flow[c].add(&theta);
        }
        flow[enter] = theta;
        basic[enter] = true;
        basic[leave] = false;
        flow[leave] = S::zero();
    }

    let mut value = S::zero();
    let mut out = Vec::new();
    for c in 0..m * n {
        if basic[c] && flow[c].is_positive() {
            value = value.add(&flow[c].mul(&cost[c]));
            out.push((c / n, c % n, flow[c].clone()));
        }
    }
    Ok(Plan { value, flow: out, potentials: (u, v) })
}

/// Kantorovich lifting of `cost` evaluated on two full distributions, with an
/// optimal coupling as witness.
pub fn kantorovich<T: Ord + Clone, S: Scalar>(
    cost: impl Fn(&T, &T) -> S,
    g1: &Dist<T>,
    g2: &Dist<T>,
) -> Result<(S, Matching<T>), TransportError> {
    let xs: Vec<&T> = g1.support().collect();
    let ys: Vec<&T> = g2.support().collect();
    let mut c = Vec::with_capacity(xs.len() * ys.len());
    for x in &xs {
        for y in &ys {
            let v = cost(x, y);
            if v.is_negative() || S::one().compare(&v) == std::cmp::Ordering::Less {
                return Err(TransportError::CostRange(v.render()));
            }
            c.push(v);
        }
    }
    let a: Vec<S> = g1.iter().map(|(_, p)| S::from_prob(p)).collect();
    let b: Vec<S> = g2.iter().map(|(_, p)| S::from_prob(p)).collect();
    let plan = solve(&a, &b, &c)?;
    // The witness is reported with exact weights recomputed from the plan's support.
    let omega = exact_witness(g1, g2, &plan);
    Ok((plan.value, Matching { omega }))
}

fn exact_witness<T: Ord + Clone, S: Scalar>(
    g1: &Dist<T>,
    g2: &Dist<T>,
    plan: &Plan<S>,
) -> BTreeMap<(T, T), crate::dist::Prob> {
    // Re-solve the flows on the plan's support exactly via leaf elimination,
    // so the witness has exact marginals in every numeric mode.
    let xs: Vec<(T, crate::dist::Prob)> = g1.iter().map(|(x, p)| (x.clone(), p.clone())).collect();
    let ys: Vec<(T, crate::dist::Prob)> = g2.iter().map(|(x, p)| (x.clone(), p.clone())).collect();
    let cells: Vec<usize> = plan.flow.iter().map(|(i, j, _)| i * ys.len() + j).collect();
    let mut out = BTreeMap::new();
    if let Some(flows) = tree_flows(
        &xs.iter().map(|(_, p)| p.clone()).collect::<Vec<_>>(),
        &ys.iter().map(|(_, p)| p.clone()).collect::<Vec<_>>(),
        &cells,
    ) {
        for (cell, f) in cells.iter().zip(flows) {
            if !num_traits::Zero::is_zero(&f) {
                let (i, j) = (cell / ys.len(), cell % ys.len());
                out.insert((xs[i].0.clone(), ys[j].0.clone()), f);
            }
        }
    }
    out
}

/// Flows on a forest of cells determined by the marginals, or `None` if the
/// cells do not determine a feasible flow.
fn tree_flows<S: Scalar>(a: &[S], b: &[S], cells: &[usize]) -> Option<Vec<S>> {
    let (m, n) = (a.len(), b.len());
    let mut rem_a = a.to_vec();
    let mut rem_b = b.to_vec();
    let mut done = vec![false; cells.len()];
    let mut flows = vec![S::zero(); cells.len()];
    let mut degree = vec![0usize; m + n];
    for &c in cells {
        degree[c / n] += 1;
        degree[m + c % n] += 1;
    }
    for _ in 0..cells.len() {
        let mut progressed = false;
        for (k, &c) in cells.iter().enumerate() {
            if done[k] {
                continue;
            }
            let (i, j) = (c / n, c % n);
            let f = if degree[i] == 1 {
                rem_a[i].clone()
            } else if degree[m + j] == 1 {
                rem_b[j].clone()
            } else {
                continue;
            };
            rem_a[i] = rem_a[i].sub(&f);
            rem_b[j] = rem_b[j].sub(&f);
            degree[i] -= 1;
            degree[m + j] -= 1;
            flows[k] = f;
            done[k] = true;
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    let ok = done.iter().all(|d| *d)
        && rem_a.iter().chain(&rem_b).all(|r| r.is_zero())
        && flows.iter().all(|f| !f.is_negative());
    ok.then_some(flows)
}

/// All vertices of the transportation polytope, by enumerating spanning trees
/// of the bipartite graph. Intended as a test oracle for [`solve`].
pub fn matchings_oracle<S: Scalar>(a: &[S], b: &[S]) -> Result<Vec<Vec<(usize, usize, S)>>, TransportError> {
    let (m, n) = (a.len(), b.len());
    if m * n > 20 {
        return Err(TransportError::OracleTooLarge(m * n));
    }
    let k = m + n - 1;
    let mut out: Vec<Vec<(usize, usize, S)>> = Vec::new();
    let mut chosen = Vec::with_capacity(k);
    #[allow(clippy::too_many_arguments)]
    fn rec<S: Scalar>(
        start: usize,
        total: usize,
        k: usize,
        m: usize,
        n: usize,
        a: &[S],
        b: &[S],
        chosen: &mut Vec<usize>,
        out: &mut Vec<Vec<(usize, usize, S)>>,
    ) {
        if chosen.len() == k {
            if !is_spanning_tree(m, n, chosen) {
                return;
            }
            if let Some(f) = tree_flows(a, b, chosen) {
                let v: Vec<(usize, usize, S)> =
                    chosen.iter().zip(f).filter(|(_, x)| !x.is_zero()).map(|(c, x)| (c / n, c % n, x)).collect();
                if !out.contains(&v) {
                    out.push(v);
                }
            }
            return;
        }
        for c in start..total {
            if total - c < k - chosen.len() {
                break;
            }
            chosen.push(c);
            rec(c + 1, total, k, m, n, a, b, chosen, out);
            chosen.pop();
        }
    }
    rec(0, m * n, k, m, n, a, b, &mut chosen, &mut out);
    Ok(out)
}

fn is_spanning_tree(m: usize, n: usize, cells: &[usize]) -> bool {
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for &c in cells {
        let (x, y) = (find(&mut parent, c / n), find(&mut parent, m + c % n));
        if x == y {
            return false;
        }
        parent[x] = y;
    }
    cells.len() == m + n - 1
}

/// Minimum over the convex hull of `vertices` of the transportation cost from
/// `supply`. Each vertex is a full distribution over the `k` columns; `cost`
/// is row-major `m × k`.
pub fn solve_hull<S: Scalar>(supply: &[S], vertices: &[Vec<S>], cost: &[S]) -> S {
    let m = supply.len();
    assert!(!vertices.is_empty());
    let k = vertices[0].len();
    if vertices.len() == 1 {
        return solve(supply, &vertices[0], cost).expect("balanced hull vertex").value;
    }
    // Variables: ω (m·k) then λ (|V|).
    let nv = m * k + vertices.len();
    let mut rows: Vec<(Vec<S>, S)> = Vec::new();
    for i in 0..m {
        let mut r = vec![S::zero(); nv];
        for j in 0..k {
            r[i * k + j] = S::one();
        }
        rows.push((r, supply[i].clone()));
    }
    for j in 0..k {
        let mut r = vec![S::zero(); nv];
        for i in 0..m {
            r[i * k + j] = S::one();
        }
        for (v, vert) in vertices.iter().enumerate() {
            r[m * k + v] = S::zero().sub(&vert[j]);
        }
        rows.push((r, S::zero()));
    }
    let mut obj = vec![S::zero(); nv];
    obj[..m * k].clone_from_slice(cost);
    simplex::minimize(&obj, rows).expect("hull problem is feasible and bounded")
}

/// Rounds of vertex hopping tried before the column-generation LP.
const HOPS: usize = 4;

/// Minimum transportation cost from `supply` to the convex hull of a vertex
/// set known only through an oracle, by column generation. Vertices are
/// sub-distributions whose missing mass goes to `sink`. `price(h)` must return
/// a vertex minimising `Σ_t v(t)·h(t)`, missing mass contributing zero, or
/// `None` when the set is empty.
pub fn hull_by_oracle<S: Scalar>(
    supply: &Dist<u32>,
    cost: &dyn Fn(u32, u32) -> S,
    sink: u32,
    price: &mut dyn FnMut(&dyn Fn(u32) -> S) -> Option<Dist<u32>>,
) -> Option<S> {
    let rows: Vec<(u32, S)> = supply.iter().map(|(x, p)| (*x, S::from_prob(p))).collect();
    let m = rows.len();
    let start = |t: u32| rows.iter().fold(S::zero(), |acc, (x, p)| acc.add(&p.mul(&cost(*x, t).sub(&cost(*x, sink)))));
    let mut verts: Vec<Dist<u32>> = vec![price(&start)?.pad(sink)];
    let supply_w: Vec<S> = rows.iter().map(|(_, p)| p.clone()).collect();
    // Cheap rounds first: the optimal potentials of the transport problem to
    // the latest vertex give a lower bound over the whole hull (their
    // c-transform is priced exactly), and every vertex gives an upper bound.
    let mut upper: Option<S> = None;
    let mut lower = S::zero();
    for _ in 0..HOPS {
        let v = verts.last().expect("a vertex");
        let cols: Vec<(u32, S)> = v.iter().map(|(t, p)| (*t, S::from_prob(p))).collect();
        let c: Vec<S> = rows.iter().flat_map(|(x, _)| cols.iter().map(|(t, _)| cost(*x, *t))).collect();
        let demand: Vec<S> = cols.iter().map(|(_, p)| p.clone()).collect();
        let plan = solve(&supply_w, &demand, &c).expect("balanced vertex");
        if upper.as_ref().is_none_or(|u| plan.value.compare(u) == Ordering::Less) {
            upper = Some(plan.value.clone());
        }
        let phi = &plan.potentials.0;
        let psi = |t: u32| {
            rows.iter().zip(phi).map(|((x, _), f)| cost(*x, t).sub(f)).reduce(|a, b| a.min_of(b)).expect("non-empty")
        };
        let base = psi(sink);
        let h = |t: u32| psi(t).sub(&base);
        let next = price(&h).expect("non-empty vertex set");
        let bound = rows
            .iter()
            .zip(phi)
            .fold(base.clone(), |acc, ((_, p), f)| acc.add(&p.mul(f)))
            .add(&next.iter().fold(S::zero(), |acc, (t, p)| acc.add(&S::from_prob(p).mul(&h(*t)))));
        lower = lower.max_of(bound);
        let up = upper.as_ref().expect("set above");
        if lower.compare(up) != Ordering::Less {
            return upper;
        }
        let next = next.pad(sink);
        if verts.contains(&next) {
            break;
        }
        verts.push(next);
    }
    loop {
        let cols: Vec<u32> =
            verts.iter().flat_map(|v| v.support().copied()).collect::<BTreeSet<_>>().into_iter().collect();
        let k = cols.len();
        let nv = m * k + verts.len();
        let mut lp: Vec<(Vec<S>, S)> = Vec::with_capacity(m + k);
        for (i, (_, p)) in rows.iter().enumerate() {
            let mut r = vec![S::zero(); nv];
            for x in r[i * k..(i + 1) * k].iter_mut() {
                *x = S::one();
            }
            lp.push((r, p.clone()));
        }
        for (j, y) in cols.iter().enumerate() {
            let mut r = vec![S::zero(); nv];
            for i in 0..m {
                r[i * k + j] = S::one();
            }
            for (v, vert) in verts.iter().enumerate() {
                r[m * k + v] = S::zero().sub(&S::from_prob(&vert.weight(y)));
            }
            lp.push((r, S::zero()));
        }
        let mut obj = vec![S::zero(); nv];
        for (i, (x, _)) in rows.iter().enumerate() {
            for (j, y) in cols.iter().enumerate() {
                obj[i * k + j] = cost(*x, *y);
            }
        }
        let (value, duals) = simplex::minimize_with_duals(&obj, lp).expect("hull problem is feasible and bounded");
        let phi = &duals[..m];
        let pi = |t: u32| match cols.binary_search(&t) {
            Ok(j) => duals[m + j].clone(),
            // Rows absent from the restricted problem take the largest
            // value keeping the dual feasible.
            Err(_) => rows
                .iter()
                .zip(phi)
                .map(|((x, _), f)| cost(*x, t).sub(f))
                .reduce(|a, b| a.min_of(b))
                .expect("non-empty supply"),
        };
        let base = pi(sink);
        let h = |t: u32| pi(t).sub(&base);
        let Some(v) = price(&h) else { return Some(value) };
        let reduced = v.iter().fold(base.clone(), |acc, (t, p)| acc.add(&S::from_prob(p).mul(&h(*t))));
        let v = v.pad(sink);
        if !reduced.is_negative() || verts.contains(&v) {
            return Some(value);
        }
        verts.push(v);
    }
}

mod simplex {
    //! Dense two-phase simplex with Bland's rule, for small exact problems.

    use crate::scalar::Scalar;

    /// Minimises `c·x` subject to `A x = b`, `x ≥ 0`. Rows are `(A_r, b_r)`.
    pub fn minimize<S: Scalar>(c: &[S], rows: Vec<(Vec<S>, S)>) -> Option<S> {
        minimize_with_duals(c, rows).map(|(v, _)| v)
    }

    /// Like [`minimize`], also returning an optimal dual solution, one value
    /// per row.
    pub fn minimize_with_duals<S: Scalar>(c: &[S], mut rows: Vec<(Vec<S>, S)>) -> Option<(S, Vec<S>)> {
        let nv = c.len();
        let mut flipped = vec![false; rows.len()];
        for (r, (a, b)) in rows.iter_mut().enumerate() {
            if b.is_negative() {
                flipped[r] = true;
                for x in a.iter_mut() {
                    *x = S::zero().sub(x);
                }
                *b = S::zero().sub(b);
            }
        }
        let nr = rows.len();
        let width = nv + nr + 1;
        let mut t: Vec<Vec<S>> = Vec::with_capacity(nr);
        for (r, (a, b)) in rows.into_iter().enumerate() {
            let mut row = a;
            row.extend((0..nr).map(|q| if q == r { S::one() } else { S::zero() }));
            row.push(b);
            t.push(row);
        }
        let mut basis: Vec<usize> = (nv..nv + nr).collect();

        // Phase 1: minimise the sum of artificials.
        let mut phase1 = vec![S::zero(); nv + nr];
        for x in phase1.iter_mut().skip(nv) {
            *x = S::one();
        }
        run(&mut t, &mut basis, &phase1, nv + nr, width)?;
        let infeas =
            basis.iter().zip(&t).filter(|(b, _)| **b >= nv).fold(S::zero(), |acc, (_, row)| acc.add(&row[width - 1]));
        if !infeas.is_zero() {
            return None;
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < t.len() {
            if basis[r] >= nv {
                match (0..nv).find(|&j| !t[r][j].is_zero()) {
                    Some(j) => pivot(&mut t, &mut basis, r, j),
                    None => {
                        t.remove(r);
                        basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
        let mut cost = c.to_vec();
        cost.extend((0..nr).map(|_| S::zero()));
        run(&mut t, &mut basis, &cost, nv, width)?;
        let value = basis.iter().zip(&t).fold(S::zero(), |acc, (b, row)| acc.add(&cost[*b].mul(&row[width - 1])));
        // The artificial columns hold the row operations applied so far, so
        // `c_B` times them gives the simplex multipliers.
        let duals = (0..nr)
            .map(|r| {
                let y = basis.iter().zip(&t).fold(S::zero(), |acc, (b, row)| acc.add(&cost[*b].mul(&row[nv + r])));
                if flipped[r] {
                    S::zero().sub(&y)
                } else {
                    y
                }
            })
            .collect();
        Some((value, duals))
    }

    fn pivot<S: Scalar>(t: &mut [Vec<S>], basis: &mut [usize], r: usize, j: usize) {
        let p = t[r][j].clone();
        for x in t[r].iter_mut() {
            *x = x.div(&p);
        }
        let prow = t[r].clone();
        for (q, row) in t.iter_mut().enumerate() {
            if q == r || row[j].is_zero() {
                continue;
            }
            let f = row[j].clone();
            for (x, y) in row.iter_mut().zip(&prow) {
                if !y.is_zero() {
                    *x = x.sub(&f.mul(y));
                }
            }
        }
        basis[r] = j;
    }

    /// Simplex iterations; columns `>= allowed` may not enter.
    fn run<S: Scalar>(t: &mut [Vec<S>], basis: &mut [usize], c: &[S], allowed: usize, width: usize) -> Option<()> {
        loop {
            let entering = (0..allowed).find(|&j| {
                if basis.contains(&j) {
                    return false;
                }
                let z = basis.iter().zip(t.iter()).fold(S::zero(), |acc, (b, row)| acc.add(&c[*b].mul(&row[j])));
                c[j].sub(&z).is_negative()
            });
            let Some(j) = entering else { return Some(()) };
            let mut best: Option<(usize, S)> = None;
            for (r, row) in t.iter().enumerate() {
                if !row[j].is_positive() {
                    continue;
                }
                let ratio = row[width - 1].div(&row[j]);
                best = match best {
                    None => Some((r, ratio)),
                    Some((br, bv)) => match ratio.compare(&bv) {
                        std::cmp::Ordering::Less => Some((r, ratio)),
                        std::cmp::Ordering::Equal if basis[r] < basis[br] => Some((r, ratio)),
                        _ => Some((br, bv)),
                    },
                };
            }
            let (r, _) = best?;
            pivot(t, basis, r, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{prob, Prob};

    fn p(n: i64, d: i64) -> Prob {
        prob(n, d)
    }

    #[test]
    fn dirac_against_dirac() {
        let (v, w) = kantorovich(|_: &char, _: &char| p(3, 10), &Dist::dirac('M'), &Dist::dirac('N')).unwrap();
        assert_eq!(v, p(3, 10));
        assert_eq!(w.omega.len(), 1);
    }

    #[test]
    fn forced_matching() {
        let g = Dist::uniform(['A', 'B']);
        let cost = |x: &char, y: &char| if x == y { p(0, 1) } else { p(1, 1) };
        let (v, _) = kantorovich(cost, &g, &Dist::dirac('A')).unwrap();
        assert_eq!(v, p(1, 2));
    }

    #[test]
    fn two_by_two_example() {
        let g = Dist::uniform(['A', 'B']);
        let h = Dist::uniform(['C', 'D']);
        let cost = |x: &char, y: &char| match (x, y) {
            ('A', 'C') => p(2, 10),
            ('A', 'D') => p(4, 10),
            ('B', 'C') => p(6, 10),
            _ => p(1, 10),
        };
        let (v, w) = kantorovich(cost, &g, &h).unwrap();
        assert_eq!(v, p(15, 100));
        assert_eq!(w.omega.get(&('A', 'C')), Some(&p(1, 2)));
        assert_eq!(w.omega.get(&('B', 'D')), Some(&p(1, 2)));
    }

    #[test]
    fn cost_range_checked() {
        let r = kantorovich(|_: &char, _: &char| p(3, 2), &Dist::dirac('M'), &Dist::dirac('N'));
        assert!(matches!(r, Err(TransportError::CostRange(_))));
    }

    #[test]
    fn oracle_vertex_counts() {
        let one = vec![p(1, 1)];
        assert_eq!(matchings_oracle(&one, &one).unwrap().len(), 1);
        let half = vec![p(1, 2), p(1, 2)];
        assert_eq!(matchings_oracle(&half, &half).unwrap().len(), 2);
        assert!(matchings_oracle(&vec![p(1, 5); 5], &vec![p(1, 5); 5]).is_err());
    }

    #[test]
    fn degenerate_shared_support() {
        // Identical distributions with zero diagonal cost transport at zero.
        let g: Dist<u8> = Dist::from_weights([(0u8, p(1, 3)), (1, p(1, 3)), (2, p(1, 3))]);
        let (v, w) = kantorovich(|x: &u8, y: &u8| if x == y { p(0, 1) } else { p(1, 1) }, &g, &g).unwrap();
        assert_eq!(v, p(0, 1));
        assert_eq!(w.omega.len(), 3);
    }

    fn weights(raw: &[u8], total: i64) -> Vec<Prob> {
        // `total / 8` split in parts proportional to `raw + 1`.
        let sum: i64 = raw.iter().map(|x| *x as i64 + 1).sum();
        raw.iter().map(|x| p((*x as i64 + 1) * total, sum * 8)).collect()
    }

    proptest::proptest! {
        #[test]
        fn potentials_are_optimal_duals(
            a in proptest::collection::vec(0u8..5, 1..5),
            b in proptest::collection::vec(0u8..5, 1..5),
            c in proptest::collection::vec(0i64..=8, 16),
        ) {
            let (sa, sb) = (weights(&a, 8), weights(&b, 8));
            let cost: Vec<Prob> = (0..sa.len() * sb.len()).map(|k| p(c[k % 16], 8)).collect();
            let plan = solve(&sa, &sb, &cost).unwrap();
            let (u, v) = &plan.potentials;
            let dual = sa.iter().zip(u).map(|(x, y)| x * y).sum::<Prob>() + sb.iter().zip(v).map(|(x, y)| x * y).sum::<Prob>();
            proptest::prop_assert_eq!(dual, plan.value);
            for i in 0..sa.len() {
                for j in 0..sb.len() {
                    proptest::prop_assert!(&u[i] + &v[j] <= cost[i * sb.len() + j]);
                }
            }
        }

        #[test]
        fn oracle_hull_matches_explicit_hull(
            a in proptest::collection::vec(0u8..5, 1..4),
            verts in proptest::collection::vec((proptest::collection::vec(0u8..5, 4), 1i64..=8), 1..6),
            c in proptest::collection::vec(0i64..=8, 20),
        ) {
            // Columns 0..4 are live targets, 4 is the sink.
            let supply: Vec<Prob> = weights(&a, 8);
            let rows: Vec<u32> = (10..10 + supply.len() as u32).collect();
            let sub: Vec<Dist<u32>> = verts
                .iter()
                .map(|(w, mass)| Dist::from_weights((0..4u32).zip(weights(w, *mass))))
                .collect();
            let cost = |x: u32, y: u32| p(c[((x - 10) * 5 + y) as usize % 20], 8);
            let padded: Vec<Vec<Prob>> = sub.iter().map(|v| (0..5u32).map(|t| v.pad(4).weight(&t)).collect()).collect();
            let flat: Vec<Prob> = rows.iter().flat_map(|x| (0..5u32).map(move |y| cost(*x, y))).collect();
            let explicit = solve_hull(&supply, &padded, &flat);
            let g = Dist::from_weights(rows.iter().copied().zip(supply.iter().cloned()));
            let mut price = |h: &dyn Fn(u32) -> Prob| {
                sub.iter()
                    .min_by_key(|v| v.iter().map(|(t, w)| w * h(*t)).sum::<Prob>())
                    .cloned()
            };
            proptest::prop_assert_eq!(hull_by_oracle(&g, &cost, 4, &mut price), Some(explicit));
        }
    }

    #[test]
    fn hull_beats_each_vertex() {
        // Supply ½A + ½B; vertices δ_A and δ_B. The hull contains the supply itself.
        let supply = vec![p(1, 2), p(1, 2)];
        let verts = vec![vec![p(1, 1), p(0, 1)], vec![p(0, 1), p(1, 1)]];
        let cost = vec![p(0, 1), p(1, 1), p(1, 1), p(0, 1)];
        assert_eq!(solve_hull(&supply, &verts, &cost), p(0, 1));
        assert_eq!(solve(&supply, &verts[0], &cost).unwrap().value, p(1, 2));
    }

    #[test]
    fn float_mode_agrees() {
        let supply = vec![0.5, 0.25, 0.25];
        let demand = vec![0.25, 0.75];
        let cost = vec![0.1, 0.9, 0.5, 0.2, 0.3, 0.0];
        let f = solve(&supply, &demand, &cost).unwrap().value;
        let q = |x: f64| p((x * 100.0).round() as i64, 100);
        let e = solve(
            &supply.iter().map(|x| q(*x)).collect::<Vec<_>>(),
            &demand.iter().map(|x| q(*x)).collect::<Vec<_>>(),
            &cost.iter().map(|x| q(*x)).collect::<Vec<_>>(),
        )
        .unwrap()
        .value;
        assert!((f - crate::scalar::Scalar::to_f64(&e)).abs() < 1e-9);
    }
}
