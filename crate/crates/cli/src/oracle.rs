//! Slow reference solvers used by the `oracle` subcommands to check the
//! fast ones on small instances.

use std::collections::{BTreeMap, BTreeSet};

use lokrisk_core::calibration::{calibrate, CalibrationProblem, NUMERIC_TOLERANCE};
use lokrisk_core::comparison::{ComparisonGraph, Relation};
use lokrisk_core::consensus::{
    aggregate_weights, brute_force_consensus, enumerate_weak_orderings, solve_consensus, ConsensusRelations,
    PairWeights,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

/// Grid resolution: LOK values `k / GRID`.
pub const GRID: i64 = 1000;
pub const GRID_MAX_IDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    pub problem: CalibrationProblem,
    pub scores: BTreeMap<String, f64>,
    pub lp_objective: f64,
    /// Best objective over feasible grid points.
    pub grid_objective: f64,
    /// Lowest LP objective the grid result allows.
    pub lower_bound: f64,
    pub max_violation: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusCheck {
    pub weights: PairWeights,
    pub orderings_enumerated: usize,
    pub solver_objective: i64,
    pub brute_force_objective: i64,
    pub relations_agree: bool,
    pub agree: bool,
    pub consensus: ConsensusRelations,
}

fn nearest_in(r: f64, lo: i64, hi: i64) -> Option<f64> {
    if lo > hi {
        return None;
    }
    let best = (r.round() as i64).clamp(lo, hi);
    Some((best as f64 - r).abs())
}

type Bounds = Vec<Vec<(i64, i64)>>;

/// Minimum total deviation over grid points meeting the constraints, or
/// `None` when no grid point does. `t` must be a multiple of the step.
pub fn grid_optimum(p: &CalibrationProblem) -> Result<Option<f64>, AppError> {
    p.validate()?;
    let n = p.ids.len();
    if n > GRID_MAX_IDS {
        return Err(AppError::BadRequest(format!(
            "grid search handles at most {GRID_MAX_IDS} ids, got {n}"
        )));
    }
    let t = (p.t * GRID as f64).round() as i64;
    if ((t as f64) / GRID as f64 - p.t).abs() > 1e-12 {
        return Err(AppError::BadRequest(format!("t = {} is not a multiple of 1/{GRID}", p.t)));
    }
    let idx: BTreeMap<&str, usize> = p.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let r: Vec<f64> = p.ids.iter().map(|id| p.reference[id] * GRID as f64).collect();
    // d[i][j] bounds x_j - x_i
    let mut d: Bounds = vec![vec![(i64::MIN / 4, i64::MAX / 4); n]; n];
    let mut tighten = |i: usize, j: usize, lo: i64, hi: i64| {
        d[i][j].0 = d[i][j].0.max(lo);
        d[i][j].1 = d[i][j].1.min(hi);
        d[j][i].0 = d[j][i].0.max(-hi);
        d[j][i].1 = d[j][i].1.min(-lo);
    };
    for (a, b) in &p.gt {
        tighten(idx[a.as_str()], idx[b.as_str()], i64::MIN / 4, -t);
    }
    for (a, b) in &p.eq {
        tighten(idx[a.as_str()], idx[b.as_str()], 0, 0);
    }
    let mut best = None;
    search(&r, &d, &mut Vec::new(), 0.0, &mut best);
    Ok(best.map(|b| b / GRID as f64))
}

fn bounds(var: usize, fixed: &[i64], d: &Bounds) -> (i64, i64) {
    let (mut lo, mut hi) = (0, GRID);
    for (i, &x) in fixed.iter().enumerate() {
        lo = lo.max(x + d[i][var].0);
        hi = hi.min(x + d[i][var].1);
    }
    (lo, hi)
}

fn search(r: &[f64], d: &Bounds, fixed: &mut Vec<i64>, cost: f64, best: &mut Option<f64>) {
    let k = fixed.len();
    if r.len() - k <= 2 {
        if let Some(c) = last_two(r, d, fixed) {
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

/// Exact minimum over the remaining (at most two) variables. With two left,
/// the cost as a function of the first is convex, so a binary search on its
/// slope finds the minimum.
fn last_two(r: &[f64], d: &Bounds, fixed: &[i64]) -> Option<f64> {
    let k = fixed.len();
    match r.len() - k {
        0 => Some(0.0),
        1 => {
            let (lo, hi) = bounds(k, fixed, d);
            nearest_in(r[k], lo, hi)
        }
        _ => {
            let (p, q) = (k, k + 1);
            let (lo_p, hi_p) = bounds(p, fixed, d);
            let (lo_q, hi_q) = bounds(q, fixed, d);
            let (dlo, dhi) = d[p][q];
            if dlo > dhi || lo_q > hi_q {
                return None;
            }
            let (lo, hi) = (lo_p.max(lo_q - dhi), hi_p.min(hi_q - dlo));
            if lo > hi {
                return None;
            }
            let h = |x: i64| {
                (x as f64 - r[p]).abs() + nearest_in(r[q], lo_q.max(x + dlo), hi_q.min(x + dhi)).unwrap_or(f64::INFINITY)
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
    }
}

/// Compares the LP against the grid: the LP may not be worse than the best
/// grid point, nor better by more than the rounding error `2·|P|·step`.
pub fn check_calibration(p: &CalibrationProblem) -> Result<GridCheck, AppError> {
    let grid = grid_optimum(p)?.ok_or_else(|| AppError::BadRequest("no grid point satisfies the constraints".into()))?;
    let scale = calibrate(p)?;
    let slack = 2.0 * p.ids.len() as f64 / GRID as f64;
    let max_violation = p.max_violation(&scale.scores);
    let agree = scale.objective <= grid + 1e-9
        && scale.objective >= grid - slack - 1e-9
        && max_violation <= NUMERIC_TOLERANCE;
    Ok(GridCheck {
        problem: p.clone(),
        scores: scale.scores,
        lp_objective: scale.objective,
        grid_objective: grid,
        lower_bound: grid - slack,
        max_violation,
        agree,
    })
}

pub fn check_consensus(w: &PairWeights) -> Result<ConsensusCheck, AppError> {
    let slow = brute_force_consensus(w)?;
    let fast = solve_consensus(w)?;
    Ok(ConsensusCheck {
        weights: w.clone(),
        orderings_enumerated: enumerate_weak_orderings(w.ids.len()).len(),
        solver_objective: fast.objective,
        brute_force_objective: slow.objective,
        relations_agree: fast.relations == slow.relations,
        agree: fast.objective == slow.objective,
        consensus: fast,
    })
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

/// Random consistent comparisons of `1..=max_experts` experts over `max_ids` ids.
pub fn random_weights(seed: u64, max_ids: usize, max_experts: usize) -> PairWeights {
    let mut rng = StdRng::seed_from_u64(seed);
    let nodes = ids(max_ids.max(1));
    let experts = rng.random_range(1..=max_experts.max(1));
    let mut graphs = Vec::new();
    for _ in 0..experts {
        let mut g = ComparisonGraph::new(nodes.iter().cloned());
        if nodes.len() >= 2 {
            for _ in 0..rng.random_range(0..=nodes.len() * 2) {
                let a = &nodes[rng.random_range(0..nodes.len())];
                let b = &nodes[rng.random_range(0..nodes.len())];
                if a == b {
                    continue;
                }
                let r = if rng.random_bool(0.3) { Relation::eq(a, b) } else { Relation::lt(a, b) };
                if let Ok((next, _)) = g.add_comparison(r) {
                    g = next;
                }
            }
        }
        graphs.push(g);
    }
    let set: BTreeSet<String> = nodes.into_iter().collect();
    aggregate_weights(graphs.iter().map(|g| &g.closure), &set)
}

/// Random problem over `max_ids` ids with `t` on the grid and consistent constraints.
pub fn random_problem(seed: u64, max_ids: usize) -> CalibrationProblem {
    let mut rng = StdRng::seed_from_u64(seed);
    let nodes = ids(max_ids.max(1));
    let reference = nodes
        .iter()
        .map(|id| (id.clone(), rng.random_range(0..=GRID) as f64 / GRID as f64))
        .collect();
    let t = rng.random_range(10..=300) as f64 / GRID as f64;
    let mut g = ComparisonGraph::new(nodes.iter().cloned());
    if nodes.len() >= 2 {
        for _ in 0..rng.random_range(0..=nodes.len() * 2) {
            let a = &nodes[rng.random_range(0..nodes.len())];
            let b = &nodes[rng.random_range(0..nodes.len())];
            if a == b {
                continue;
            }
            let r = if rng.random_bool(0.25) { Relation::eq(a, b) } else { Relation::lt(a, b) };
            if let Ok((next, _)) = g.add_comparison(r) {
                g = next;
            }
        }
    }
    CalibrationProblem::new(reference, &g.extract_gt_eq(), t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_instance_on_grid() {
        let reference = [("a".to_string(), 0.5), ("b".to_string(), 0.5)].into_iter().collect();
        let p = CalibrationProblem {
            ids: vec!["a".into(), "b".into()],
            reference,
            gt: vec![("a".into(), "b".into())],
            eq: vec![],
            t: 0.1,
        };
        assert!((grid_optimum(&p).unwrap().unwrap() - 0.1).abs() < 1e-12);
        assert!(check_calibration(&p).unwrap().agree);
    }

    #[test]
    fn random_instances_agree() {
        for seed in 0..20 {
            assert!(check_calibration(&random_problem(seed, 3)).unwrap().agree, "seed {seed}");
            let c = check_consensus(&random_weights(seed, 5, 4)).unwrap();
            assert!(c.agree && c.relations_agree, "seed {seed}");
            assert_eq!(c.orderings_enumerated, 541);
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        assert_eq!(random_weights(7, 4, 3), random_weights(7, 4, 3));
        assert_eq!(random_problem(7, 4), random_problem(7, 4));
    }
}
