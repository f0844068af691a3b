//! Independent reference implementations used by the property tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lokrisk_core::calibration::CalibrationProblem;
use lokrisk_core::comparison::{ComparisonGraph, Relation, RelationKind};
use lokrisk_core::consensus::{ConsensusRelations, PairEntry, PairWeights};
use rand::rngs::StdRng;
use rand::Rng;

pub type Pair = (String, String);

/// Rule saturation: symmetric equality, and `<`/`=` composed in every
/// combination until nothing new appears. `Err` when some `x < x` appears.
pub fn naive_closure(rels: &[Relation]) -> Result<(BTreeSet<Pair>, BTreeSet<Pair>), ()> {
    let mut lt: BTreeSet<Pair> = BTreeSet::new();
    let mut eq: BTreeSet<Pair> = BTreeSet::new();
    for r in rels {
        match r.kind {
            RelationKind::Lt => {
                lt.insert((r.a.clone(), r.b.clone()));
            }
            RelationKind::Eq => {
                eq.insert((r.a.clone(), r.b.clone()));
                eq.insert((r.b.clone(), r.a.clone()));
            }
        }
    }
    loop {
        let mut new_lt = Vec::new();
        let mut new_eq = Vec::new();
        for (a, b) in &lt {
            for (c, d) in lt.iter().chain(eq.iter()) {
                if b == c {
                    new_lt.push((a.clone(), d.clone()));
                }
            }
        }
        for (a, b) in &eq {
            for (c, d) in &lt {
                if b == c {
                    new_lt.push((a.clone(), d.clone()));
                }
            }
            for (c, d) in &eq {
                if b == c && a != d {
                    new_eq.push((a.clone(), d.clone()));
                }
            }
        }
        let before = lt.len() + eq.len();
        lt.extend(new_lt);
        eq.extend(new_eq);
        if lt.iter().any(|(a, b)| a == b) {
            return Err(());
        }
        if lt.len() + eq.len() == before {
            break;
        }
    }
    let eq = eq.into_iter().filter(|(a, b)| a < b).collect();
    Ok((lt, eq))
}

pub fn random_relations(rng: &mut StdRng, max_nodes: usize, max_rels: usize) -> Vec<Relation> {
    let n = rng.random_range(2..=max_nodes);
    let count = rng.random_range(0..=max_rels);
    let name = |i: usize| format!("n{i}");
    (0..count)
        .filter_map(|_| {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                return None;
            }
            Some(if rng.random_bool(0.25) {
                Relation::eq(name(a), name(b))
            } else {
                Relation::lt(name(a), name(b))
            })
        })
        .collect()
}

/// Builds a consistent graph by adding relations in order and skipping
/// those that would contradict the ones already accepted.
pub fn consistent_graph(nodes: &[String], rels: &[Relation]) -> ComparisonGraph {
    let mut g = ComparisonGraph::new(nodes.iter().cloned());
    for r in rels {
        if let Ok((next, _)) = g.add_comparison(r.clone()) {
            g = next;
        }
    }
    g
}

const GRID: i64 = 1000;

fn nearest_in(r: f64, lo: i64, hi: i64) -> Option<f64> {
    if lo > hi {
        return None;
    }
    let x = (r.round() as i64).clamp(lo, hi);
    Some((x as f64 - r).abs())
}

/// Best objective over grid points `k/1000` satisfying the constraints, in
/// LOK units. Exhaustive over all but the last two variables; the last two
/// are minimized exactly using convexity of the remaining one-dimensional
/// problem. Needs `t` on the grid and at most four ids.
pub fn grid_optimum(p: &CalibrationProblem) -> Option<f64> {
    let n = p.ids.len();
    assert!(n <= 4);
    let idx: BTreeMap<&str, usize> = p.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let t = (p.t * GRID as f64).round() as i64;
    assert!(((t as f64) / GRID as f64 - p.t).abs() < 1e-12, "t must lie on the grid");
    let r: Vec<f64> = p.ids.iter().map(|id| p.reference[id] * GRID as f64).collect();
    // d[i][j] = (lo, hi) on x_j - x_i
    let mut d = vec![vec![(i64::MIN / 4, i64::MAX / 4); n]; n];
    let mut tighten = |i: usize, j: usize, lo: i64, hi: i64| {
        d[i][j].0 = d[i][j].0.max(lo);
        d[i][j].1 = d[i][j].1.min(hi);
        d[j][i].0 = d[j][i].0.max(-hi);
        d[j][i].1 = d[j][i].1.min(-lo);
    };
    for (a, b) in &p.gt {
        // x_a - x_b >= t  <=>  x_b - x_a <= -t
        tighten(idx[a.as_str()], idx[b.as_str()], i64::MIN / 4, -t);
    }
    for (a, b) in &p.eq {
        tighten(idx[a.as_str()], idx[b.as_str()], 0, 0);
    }

    let mut best: Option<f64> = None;
    let mut fixed: Vec<i64> = Vec::new();
    search(&r, &d, &mut fixed, 0.0, &mut best);
    best.map(|b| b / GRID as f64)
}

fn bounds(var: usize, fixed: &[i64], d: &[Vec<(i64, i64)>]) -> (i64, i64) {
    let (mut lo, mut hi) = (0, GRID);
    for (i, &x) in fixed.iter().enumerate() {
        lo = lo.max(x + d[i][var].0);
        hi = hi.min(x + d[i][var].1);
    }
    (lo, hi)
}

fn search(r: &[f64], d: &[Vec<(i64, i64)>], fixed: &mut Vec<i64>, cost: f64, best: &mut Option<f64>) {
    let n = r.len();
    let k = fixed.len();
    let remaining = n - k;
    if remaining <= 2 {
        if let Some(c) = solve_tail(r, d, fixed) {
            let total = cost + c;
            if best.is_none_or(|b| total < b) {
                *best = Some(total);
            }
        }
        return;
    }
    let (lo, hi) = bounds(k, fixed, d);
    for x in lo..=hi {
        fixed.push(x);
        search(r, d, fixed, cost + (x as f64 - r[k]).abs(), best);
        fixed.pop();
    }
}

fn solve_tail(r: &[f64], d: &[Vec<(i64, i64)>], fixed: &[i64]) -> Option<f64> {
    let n = r.len();
    let k = fixed.len();
    match n - k {
        0 => Some(0.0),
        1 => {
            let (lo, hi) = bounds(k, fixed, d);
            nearest_in(r[k], lo, hi)
        }
        2 => {
            let (p, q) = (k, k + 1);
            let (lo_p, hi_p) = bounds(p, fixed, d);
            let (lo_q, hi_q) = bounds(q, fixed, d);
            let (dlo, dhi) = d[p][q];
            if dlo > dhi || lo_q > hi_q {
                return None;
            }
            let lo = lo_p.max(lo_q - dhi);
            let hi = hi_p.min(hi_q - dlo);
            if lo > hi {
                return None;
            }
            let h = |x: i64| -> f64 {
                (x as f64 - r[p]).abs()
                    + nearest_in(r[q], lo_q.max(x + dlo), hi_q.min(x + dhi)).expect("x in feasible range")
            };
            let (mut a, mut b) = (lo, hi);
            while a < b {
                let mid = a + (b - a) / 2;
                if h(mid + 1) < h(mid) {
                    a = mid + 1;
                } else {
                    b = mid;
                }
            }
            Some(h(a))
        }
        _ => unreachable!(),
    }
}

/// Random problem over at most `max_ids` ids with a consistent comparison set.
pub fn random_calibration_problem(rng: &mut StdRng, max_ids: usize) -> CalibrationProblem {
    let n = rng.random_range(1..=max_ids);
    let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    let mut reference = BTreeMap::new();
    for id in &ids {
        let v = match rng.random_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            2 => rng.random_range(0..=1000) as f64 / 1000.0,
            _ => rng.random::<f64>(),
        };
        reference.insert(id.clone(), v);
    }
    let t = rng.random_range(10..=300) as f64 / 1000.0;
    let rels = if n >= 2 {
        let count = rng.random_range(0..=n * 2);
        (0..count)
            .filter_map(|_| {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                (a != b).then(|| {
                    if rng.random_bool(0.2) {
                        Relation::eq(ids[a].clone(), ids[b].clone())
                    } else {
                        Relation::lt(ids[a].clone(), ids[b].clone())
                    }
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    let g = consistent_graph(&ids, &rels);
    // either the full closure or only the asserted relations
    let constraints = if rng.random_bool(0.5) {
        g.extract_gt_eq()
    } else {
        let mut c = lokrisk_core::OrderConstraints::default();
        for r in g.asserted_relations() {
            match r.kind {
                RelationKind::Lt => {
                    c.gt.insert((r.b.clone(), r.a.clone()));
                }
                RelationKind::Eq => {
                    c.eq.insert((r.a.clone(), r.b.clone()));
                }
            }
        }
        c
    };
    CalibrationProblem::new(reference, &constraints, t)
}

/// Weights aggregated from up to `max_experts` random consistent experts,
/// or (one time in four) arbitrary counts obeying the weight invariant.
pub fn random_pair_weights(rng: &mut StdRng, max_ids: usize, max_experts: usize) -> PairWeights {
    let n = rng.random_range(1..=max_ids);
    let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    if rng.random_range(0..4) == 0 {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w_le_ab = rng.random_range(0..=max_experts as u32);
                let w_le_ba = rng.random_range(0..=max_experts as u32);
                let w_eq = rng.random_range(0..=w_le_ab.min(w_le_ba));
                if w_le_ab + w_le_ba > 0 {
                    pairs.push(PairEntry {
                        a: ids[i].clone(),
                        b: ids[j].clone(),
                        w_le_ab,
                        w_le_ba,
                        w_eq,
                    });
                }
            }
        }
        return PairWeights { ids, pairs };
    }
    let experts = rng.random_range(1..=max_experts);
    let graphs: Vec<ComparisonGraph> = (0..experts)
        .map(|_| {
            let count = rng.random_range(0..=n * 2);
            let rels: Vec<Relation> = (0..count)
                .filter_map(|_| {
                    let a = rng.random_range(0..n);
                    let b = rng.random_range(0..n);
                    (a != b).then(|| {
                        if rng.random_bool(0.25) {
                            Relation::eq(ids[a].clone(), ids[b].clone())
                        } else {
                            Relation::lt(ids[a].clone(), ids[b].clone())
                        }
                    })
                })
                .collect();
            consistent_graph(&ids, &rels)
        })
        .collect();
    let set: BTreeSet<String> = ids.iter().cloned().collect();
    lokrisk_core::consensus::aggregate_weights(graphs.iter().map(|g| &g.closure), &set)
}

/// 0/1 variables read back from the relation list.
pub struct Assignment {
    pub ids: Vec<String>,
    pub le: BTreeMap<(String, String), i64>,
    pub eq: BTreeMap<(String, String), i64>,
}

pub fn assignment(c: &ConsensusRelations) -> Result<Assignment, String> {
    let mut le = BTreeMap::new();
    let mut eq = BTreeMap::new();
    for a in &c.ids {
        for b in &c.ids {
            if a != b {
                le.insert((a.clone(), b.clone()), 0);
                eq.insert((a.clone(), b.clone()), 0);
            }
        }
    }
    let mut seen = BTreeSet::new();
    for r in &c.relations {
        let key = if r.a < r.b { (r.a.clone(), r.b.clone()) } else { (r.b.clone(), r.a.clone()) };
        if !seen.insert(key.clone()) {
            return Err(format!("pair {key:?} listed twice"));
        }
        match r.kind {
            RelationKind::Lt => {
                le.insert((r.a.clone(), r.b.clone()), 1);
            }
            RelationKind::Eq => {
                le.insert((r.a.clone(), r.b.clone()), 1);
                le.insert((r.b.clone(), r.a.clone()), 1);
                eq.insert((r.a.clone(), r.b.clone()), 1);
                eq.insert((r.b.clone(), r.a.clone()), 1);
            }
        }
    }
    let n = c.ids.len();
    if seen.len() != n * n.saturating_sub(1) / 2 {
        return Err(format!("{} of {} pairs decided", seen.len(), n * n.saturating_sub(1) / 2));
    }
    Ok(Assignment {
        ids: c.ids.clone(),
        le,
        eq,
    })
}

/// Completeness, the equality biconditional, symmetry and transitivity.
pub fn check_ip_constraints(x: &Assignment) -> Result<(), String> {
    let le = |a: &String, b: &String| x.le[&(a.clone(), b.clone())];
    let eq = |a: &String, b: &String| x.eq[&(a.clone(), b.clone())];
    for a in &x.ids {
        for b in &x.ids {
            if a == b {
                continue;
            }
            if -le(a, b) - le(b, a) > -1 {
                return Err(format!("no relation on ({a}, {b})"));
            }
            if 2 * eq(a, b) - le(a, b) - le(b, a) > 0 {
                return Err(format!("equality without both directions on ({a}, {b})"));
            }
            if le(a, b) + le(b, a) - eq(a, b) > 1 {
                return Err(format!("both directions without equality on ({a}, {b})"));
            }
            if eq(a, b) != eq(b, a) {
                return Err(format!("asymmetric equality on ({a}, {b})"));
            }
            for c in &x.ids {
                if c == a || c == b {
                    continue;
                }
                if le(a, c) + le(c, b) - le(a, b) > 1 {
                    return Err(format!("transitivity fails on ({a}, {c}, {b})"));
                }
            }
        }
    }
    Ok(())
}

/// Objective of an assignment, summed over unordered pairs.
pub fn ip_objective(w: &PairWeights, x: &Assignment) -> i64 {
    let mut total = 0;
    for (i, a) in x.ids.iter().enumerate() {
        for b in &x.ids[i + 1..] {
            let (le_ab, le_ba, w_eq) = w.get(a, b);
            total += i64::from(le_ab) * x.le[&(b.clone(), a.clone())] + i64::from(le_ba) * x.le[&(a.clone(), b.clone())]
                - 2 * i64::from(w_eq) * x.eq[&(a.clone(), b.clone())];
        }
    }
    total
}

/// Plain double loop over the grid; two ids at most. Cross-checks
/// [`grid_optimum`].
pub fn exhaustive_grid(p: &CalibrationProblem) -> Option<f64> {
    let n = p.ids.len();
    assert!(n <= 2);
    let t = (p.t * GRID as f64).round() as i64;
    let value = |x: &[i64]| -> Option<f64> {
        let at = |id: &String| x[p.ids.iter().position(|i| i == id).unwrap()];
        let ok = p.gt.iter().all(|(a, b)| at(a) - at(b) >= t) && p.eq.iter().all(|(a, b)| at(a) == at(b));
        ok.then(|| {
            p.ids
                .iter()
                .zip(x)
                .map(|(id, &v)| (v as f64 - p.reference[id] * GRID as f64).abs())
                .sum::<f64>()
        })
    };
    let mut best: Option<f64> = None;
    let mut consider = |x: &[i64]| {
        if let Some(v) = value(x) {
            if best.is_none_or(|b| v < b) {
                best = Some(v);
            }
        }
    };
    match n {
        1 => (0..=GRID).for_each(|a| consider(&[a])),
        2 => (0..=GRID).for_each(|a| (0..=GRID).for_each(|b| consider(&[a, b]))),
        _ => consider(&[]),
    }
    best.map(|b| b / GRID as f64)
}
