//! LOK calibration: move reference LOK estimates as little as possible, in
//! total absolute deviation, so that a consistent set of comparisons holds.
//!
//! ```text
//! min  Σ_i |L_i − R_i|
//! s.t. L_i − L_j ≥ t   for (i, j) in GT
//!      L_i = L_j       for {i, j} in EQ
//!      0 ≤ L_i ≤ 1
//! ```
//!
//! Equal characterizations share one LP variable. The LP usually has a
//! whole face of optimal solutions; among them the solver returns the one
//! closest to the reference in squared distance. That second stage runs an
//! active-set method over the optimal face, which the LP reduced costs
//! describe exactly with bounds and difference constraints only.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparison::{sorted_pair, OrderConstraints};
use crate::lp::{self, LinearProgram, LpError, Sense};
use crate::model::{CharId, ExpertId};

pub const DEFAULT_THRESHOLD: f64 = 0.05;
/// Tolerance on constraint satisfaction of returned scales.
pub const NUMERIC_TOLERANCE: f64 = 1e-9;

const RC_TOL: f64 = 1e-7;
const TIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("malformed calibration problem: {0}")]
    MalformedProblem(String),
    #[error(
        "strict chain of length {} needs a span of {required_span} > 1: {}",
        .chain.len(),
        .chain.iter().map(|(a, b)| format!("{a}>{b}")).collect::<Vec<_>>().join(", ")
    )]
    InfeasibleComparisonChain {
        chain: Vec<(CharId, CharId)>,
        required_span: f64,
    },
    #[error("LP solver failed: {0}")]
    Solver(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProblem {
    pub ids: Vec<CharId>,
    pub reference: BTreeMap<CharId, f64>,
    /// `(i, j)`: `L_i ≥ L_j + t`.
    #[serde(default)]
    pub gt: Vec<(CharId, CharId)>,
    #[serde(default)]
    pub eq: Vec<(CharId, CharId)>,
    #[serde(default = "default_threshold")]
    pub t: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl CalibrationProblem {
    pub fn new(reference: BTreeMap<CharId, f64>, constraints: &OrderConstraints, t: f64) -> Self {
        Self {
            ids: reference.keys().cloned().collect(),
            reference,
            gt: constraints.gt.iter().cloned().collect(),
            eq: constraints.eq.iter().cloned().collect(),
            t,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let malformed = |m: String| Err(CalibrationError::MalformedProblem(m));
        if !(self.t > 0.0 && self.t <= 1.0) {
            return malformed(format!("threshold t = {} is outside (0, 1]", self.t));
        }
        let mut seen = BTreeSet::new();
        for id in &self.ids {
            if !seen.insert(id) {
                return malformed(format!("duplicate id `{id}`"));
            }
            match self.reference.get(id) {
                None => return malformed(format!("no reference LOK for `{id}`")),
                Some(v) if !(0.0..=1.0).contains(v) => {
                    return malformed(format!("reference LOK {v} for `{id}` is outside [0, 1]"))
                }
                _ => {}
            }
        }
        for (i, j) in self.gt.iter().chain(&self.eq) {
            for end in [i, j] {
                if !seen.contains(end) {
                    return malformed(format!("comparison mentions unknown id `{end}`"));
                }
            }
            if i == j {
                return malformed(format!("self comparison on `{i}`"));
            }
        }
        Ok(())
    }

    /// Largest violation of the comparison and domain constraints by `scores`.
    pub fn max_violation(&self, scores: &BTreeMap<CharId, f64>) -> f64 {
        let mut worst = 0.0f64;
        for v in scores.values() {
            worst = worst.max(-v).max(v - 1.0);
        }
        for (i, j) in &self.gt {
            worst = worst.max(self.t - (scores[i] - scores[j]));
        }
        for (i, j) in &self.eq {
            worst = worst.max((scores[i] - scores[j]).abs());
        }
        worst
    }

    pub fn deviation(&self, scores: &BTreeMap<CharId, f64>) -> f64 {
        self.ids
            .iter()
            .map(|id| (scores[id] - self.reference[id]).abs())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleKind {
    Reference,
    Expert { expert_id: ExpertId },
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LokScale {
    #[serde(flatten)]
    pub kind: ScaleKind,
    pub scores: BTreeMap<CharId, f64>,
    /// Total absolute deviation from the reference estimates.
    pub objective: f64,
}

/// Solver output in the problem/solution JSON exchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSolution {
    pub scores: BTreeMap<CharId, f64>,
    pub objective: f64,
    pub status: String,
}

impl From<&LokScale> for CalibrationSolution {
    fn from(s: &LokScale) -> Self {
        Self {
            scores: s.scores.clone(),
            objective: s.objective,
            status: "optimal".into(),
        }
    }
}

/// The LP with each absolute value split as `L_i − R_i = u_i − v_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardForm {
    /// `L[id]`, then `u[id]`, then `v[id]`, in problem id order.
    pub variables: Vec<String>,
    pub lp: LinearProgram,
}

impl StandardForm {
    pub fn num_rows(&self) -> usize {
        self.lp.rows.len()
    }

    /// Scores `L_i` read back from a solution vector.
    pub fn scores(&self, ids: &[CharId], x: &[f64]) -> BTreeMap<CharId, f64> {
        ids.iter().cloned().zip(x.iter().copied()).collect()
    }
}

/// Standard-form LP over the original ids: `3n` non-negative variables,
/// `n` deviation rows, one row per GT and per EQ pair, and `n` upper bounds.
pub fn to_standard_form(p: &CalibrationProblem) -> StandardForm {
    let n = p.ids.len();
    let index: BTreeMap<&str, usize> = p.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut lp = LinearProgram::new(3 * n);
    let mut variables = Vec::with_capacity(3 * n);
    for prefix in ["L", "u", "v"] {
        variables.extend(p.ids.iter().map(|id| format!("{prefix}[{id}]")));
    }
    for (i, id) in p.ids.iter().enumerate() {
        lp.costs[n + i] = 1.0;
        lp.costs[2 * n + i] = 1.0;
        lp.add_row(vec![(i, 1.0), (n + i, -1.0), (2 * n + i, 1.0)], Sense::Eq, p.reference[id]);
    }
    for (a, b) in &p.gt {
        lp.add_row(vec![(index[a.as_str()], 1.0), (index[b.as_str()], -1.0)], Sense::Ge, p.t);
    }
    for (a, b) in &p.eq {
        lp.add_row(vec![(index[a.as_str()], 1.0), (index[b.as_str()], -1.0)], Sense::Eq, 0.0);
    }
    for i in 0..n {
        lp.add_row(vec![(i, 1.0)], Sense::Le, 1.0);
    }
    StandardForm { variables, lp }
}

/// Longest strict chain after merging equal ids. `steps` are the GT pairs
/// along the chain, greatest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrictChain {
    pub length: usize,
    pub steps: Vec<(CharId, CharId)>,
}

impl StrictChain {
    /// Ids visited by the chain; consecutive steps joined through an
    /// equality contribute both endpoints.
    pub fn path(&self) -> Vec<CharId> {
        let mut out: Vec<CharId> = Vec::new();
        for (hi, lo) in &self.steps {
            if out.last() != Some(hi) {
                out.push(hi.clone());
            }
            out.push(lo.clone());
        }
        out
    }
}

/// Equality classes and the strict edges between them.
struct Contraction {
    ids: Vec<CharId>,
    class_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    /// class edge (greater, lesser) -> first GT pair that produced it
    edges: BTreeMap<(usize, usize), (CharId, CharId)>,
}

impl Contraction {
    fn build(ids: Vec<CharId>, gt: &[(CharId, CharId)], eq: &[(CharId, CharId)]) -> Result<Self, CalibrationError> {
        let index: BTreeMap<CharId, usize> = ids.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, b) in eq {
            let (ra, rb) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
        let mut class_of = vec![0; ids.len()];
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut root_class = BTreeMap::new();
        for (i, slot) in class_of.iter_mut().enumerate() {
            let r = find(&mut parent, i);
            let c = *root_class.entry(r).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[c].push(i);
            *slot = c;
        }
        let mut sorted_gt: Vec<&(CharId, CharId)> = gt.iter().collect();
        sorted_gt.sort();
        let mut edges = BTreeMap::new();
        for (a, b) in sorted_gt {
            let (ca, cb) = (class_of[index[a]], class_of[index[b]]);
            if ca == cb {
                return Err(CalibrationError::MalformedProblem(format!(
                    "`{a}` > `{b}` contradicts their equality"
                )));
            }
            edges.entry((ca, cb)).or_insert_with(|| (a.clone(), b.clone()));
        }
        Ok(Self {
            ids,
            class_of,
            members,
            edges,
        })
    }

    fn longest_chain(&self) -> Result<StrictChain, CalibrationError> {
        let k = self.members.len();
        let mut indegree = vec![0usize; k];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &(hi, lo) in self.edges.keys() {
            succ[hi].push(lo);
            indegree[lo] += 1;
        }
        let mut queue: VecDeque<usize> = (0..k).filter(|&c| indegree[c] == 0).collect();
        let mut order = Vec::with_capacity(k);
        while let Some(c) = queue.pop_front() {
            order.push(c);
            for &s in &succ[c] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        if order.len() < k {
            return Err(CalibrationError::MalformedProblem(
                "strict comparisons form a cycle".into(),
            ));
        }
        // longest path ending at each class, predecessor for reconstruction
        let mut best = vec![0usize; k];
        let mut pred: Vec<Option<usize>> = vec![None; k];
        for &c in &order {
            for &s in &succ[c] {
                if best[c] + 1 > best[s] {
                    best[s] = best[c] + 1;
                    pred[s] = Some(c);
                }
            }
        }
        let Some((end, &length)) = best.iter().enumerate().max_by_key(|&(c, l)| (*l, std::cmp::Reverse(c))) else {
            return Ok(StrictChain { length: 0, steps: Vec::new() });
        };
        let mut steps = Vec::with_capacity(length);
        let mut cur = end;
        while let Some(p) = pred[cur] {
            steps.push(self.edges[&(p, cur)].clone());
            cur = p;
        }
        steps.reverse();
        Ok(StrictChain { length, steps })
    }
}

fn ids_of(gt: &[(CharId, CharId)], eq: &[(CharId, CharId)]) -> Vec<CharId> {
    gt.iter()
        .chain(eq)
        .flat_map(|(a, b)| [a.clone(), b.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn longest_strict_chain(
    gt: &[(CharId, CharId)],
    eq: &[(CharId, CharId)],
) -> Result<StrictChain, CalibrationError> {
    Contraction::build(ids_of(gt, eq), gt, eq)?.longest_chain()
}

pub fn calibrate(p: &CalibrationProblem) -> Result<LokScale, CalibrationError> {
    p.validate()?;
    let contraction = Contraction::build(p.ids.clone(), &p.gt, &p.eq)?;
    let chain = contraction.longest_chain()?;
    let required_span = chain.length as f64 * p.t;
    if required_span > 1.0 + 1e-12 {
        return Err(CalibrationError::InfeasibleComparisonChain {
            chain: chain.steps,
            required_span,
        });
    }

    let k = contraction.members.len();
    let n = p.ids.len();
    let reference: Vec<f64> = p.ids.iter().map(|id| p.reference[id]).collect();

    // Merged LP: y_c (class scores), u_i, v_i.
    let mut lp = LinearProgram::new(k + 2 * n);
    for (i, &r) in reference.iter().enumerate() {
        lp.costs[k + i] = 1.0;
        lp.costs[k + n + i] = 1.0;
        lp.add_row(
            vec![(contraction.class_of[i], 1.0), (k + i, -1.0), (k + n + i, 1.0)],
            Sense::Eq,
            r,
        );
    }
    let edge_list: Vec<(usize, usize)> = contraction.edges.keys().copied().collect();
    let first_gt_row = lp.rows.len();
    for &(hi, lo) in &edge_list {
        lp.add_row(vec![(hi, 1.0), (lo, -1.0)], Sense::Ge, p.t);
    }
    let first_upper_row = lp.rows.len();
    for c in 0..k {
        lp.add_row(vec![(c, 1.0)], Sense::Le, 1.0);
    }
    let sol = lp::solve(&lp)?;
    let lp_scores: Vec<f64> = sol.x[..k].to_vec();

    // Optimal face in class space.
    let mut lower = vec![0.0f64; k];
    let mut upper = vec![1.0f64; k];
    for c in 0..k {
        if sol.reduced_costs[c] > RC_TOL {
            upper[c] = 0.0;
        }
        if sol.slack_reduced_costs[first_upper_row + c].is_some_and(|r| r > RC_TOL) {
            lower[c] = 1.0;
        }
    }
    for (i, &r) in reference.iter().enumerate() {
        let c = contraction.class_of[i];
        if sol.reduced_costs[k + i] > RC_TOL {
            upper[c] = upper[c].min(r);
        }
        if sol.reduced_costs[k + n + i] > RC_TOL {
            lower[c] = lower[c].max(r);
        }
    }
    for c in 0..k {
        if lower[c] > upper[c] {
            // rounding noise only: the LP point lies in this set
            let v = lp_scores[c].clamp(upper[c], lower[c]);
            lower[c] = v;
            upper[c] = v;
        }
    }
    let diffs: Vec<DiffConstraint> = edge_list
        .iter()
        .enumerate()
        .map(|(e, &(hi, lo))| DiffConstraint {
            hi,
            lo,
            gap: p.t,
            tight: sol.slack_reduced_costs[first_gt_row + e].is_some_and(|r| r > RC_TOL),
        })
        .collect();

    let weights: Vec<f64> = contraction.members.iter().map(|m| m.len() as f64).collect();
    let targets: Vec<f64> = contraction
        .members
        .iter()
        .map(|m| m.iter().map(|&i| reference[i]).sum::<f64>() / m.len() as f64)
        .collect();
    let face = Face {
        lower,
        upper,
        diffs,
    };

    let scores_of = |y: &[f64]| -> BTreeMap<CharId, f64> {
        (0..n)
            .map(|i| (contraction.ids[i].clone(), snap_unit(y[contraction.class_of[i]])))
            .collect()
    };
    let lp_result = scores_of(&lp_scores);
    let lp_objective = p.deviation(&lp_result);
    let mut scores = lp_result.clone();
    if let Some(y) = face.project(&weights, &targets, &lp_scores) {
        let candidate = scores_of(&y);
        if p.max_violation(&candidate) <= NUMERIC_TOLERANCE
            && p.deviation(&candidate) <= lp_objective + NUMERIC_TOLERANCE
        {
            scores = candidate;
        }
    }
    Ok(LokScale {
        kind: ScaleKind::Reference,
        objective: p.deviation(&scores),
        scores,
    })
}

fn snap_unit(v: f64) -> f64 {
    if v < 0.0 && v > -1e-12 {
        0.0
    } else if v > 1.0 && v < 1.0 + 1e-12 {
        1.0
    } else {
        v
    }
}

struct DiffConstraint {
    hi: usize,
    lo: usize,
    gap: f64,
    tight: bool,
}

/// `lower ≤ y ≤ upper`, `y_hi − y_lo ≥ gap` (or `= gap` when tight).
struct Face {
    lower: Vec<f64>,
    upper: Vec<f64>,
    diffs: Vec<DiffConstraint>,
}

/// A single constraint of the face written as `coef·(y_a − y_b) ≥ rhs`
/// where `b` may be the ground node (value 0).
#[derive(Clone, Copy, Debug)]
struct FaceRow {
    a: usize,
    b: Option<usize>,
    /// +1 for `y_a − y_b ≥ rhs`, −1 for `y_a − y_b ≤ rhs`
    sign: f64,
    rhs: f64,
    equality: bool,
}

impl FaceRow {
    fn diff(&self, y: &[f64]) -> f64 {
        y[self.a] - self.b.map_or(0.0, |b| y[b])
    }

    /// Signed slack `g(y) ≥ 0`.
    fn slack(&self, y: &[f64]) -> f64 {
        self.sign * (self.diff(y) - self.rhs)
    }
}

impl Face {
    fn rows(&self) -> Vec<FaceRow> {
        let mut rows = Vec::new();
        for c in 0..self.lower.len() {
            if self.lower[c] == self.upper[c] {
                rows.push(FaceRow { a: c, b: None, sign: 1.0, rhs: self.lower[c], equality: true });
            } else {
                rows.push(FaceRow { a: c, b: None, sign: 1.0, rhs: self.lower[c], equality: false });
                rows.push(FaceRow { a: c, b: None, sign: -1.0, rhs: self.upper[c], equality: false });
            }
        }
        for d in &self.diffs {
            rows.push(FaceRow { a: d.hi, b: Some(d.lo), sign: 1.0, rhs: d.gap, equality: d.tight });
        }
        rows
    }

    /// Minimizes `Σ w_c (y_c − target_c)²` over the face with a primal
    /// active-set method started from the feasible point `start`. The working
    /// set is kept as a forest over the class nodes plus a ground node, so
    /// each equality subproblem has a closed-form solution per tree.
    fn project(&self, weights: &[f64], targets: &[f64], start: &[f64]) -> Option<Vec<f64>> {
        let rows = self.rows();
        let k = weights.len();
        let mut y = start.to_vec();
        let mut working: Vec<usize> = Vec::new();
        let mut forest = Forest::new(k);
        let order = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.equality)
            .chain(rows.iter().enumerate().filter(|(_, r)| !r.equality));
        for (i, r) in order {
            if (r.equality || r.slack(&y).abs() <= TIGHT_TOL) && forest.try_link(r.a, r.b) {
                working.push(i);
            }
        }

        for _ in 0..(20 * rows.len() + 100) {
            let target = solve_working_set(&rows, &working, weights, targets, k)?;
            let step: Vec<f64> = target.iter().zip(&y).map(|(t, v)| t - v).collect();
            if step.iter().any(|d| d.abs() > 1e-14) {
                let mut alpha = 1.0;
                let mut blocking = None;
                for (i, r) in rows.iter().enumerate() {
                    if r.equality || working.contains(&i) {
                        continue;
                    }
                    let rate = r.sign * (step[r.a] - r.b.map_or(0.0, |b| step[b]));
                    if rate < -1e-15 {
                        let a = r.slack(&y).max(0.0) / -rate;
                        if a < alpha {
                            alpha = a;
                            blocking = Some(i);
                        }
                    }
                }
                for (v, d) in y.iter_mut().zip(&step) {
                    *v += alpha * d;
                }
                if let Some(i) = blocking {
                    let mut f = Forest::from_rows(k, &rows, &working);
                    if !f.try_link(rows[i].a, rows[i].b) {
                        return None;
                    }
                    working.push(i);
                }
                continue;
            }
            y = target;
            let multipliers = working_multipliers(&rows, &working, weights, targets, &y, k);
            let worst = working
                .iter()
                .zip(&multipliers)
                .filter(|(&i, _)| !rows[i].equality)
                .filter(|(_, &m)| m < -1e-10)
                .min_by(|a, b| a.1.total_cmp(b.1));
            match worst {
                None => return Some(y),
                Some((&i, _)) => working.retain(|&w| w != i),
            }
        }
        None
    }
}


struct Forest {
    parent: Vec<usize>,
}

impl Forest {
    fn new(k: usize) -> Self {
        Self {
            parent: (0..=k).collect(),
        }
    }

    fn from_rows(k: usize, rows: &[FaceRow], working: &[usize]) -> Self {
        let mut f = Self::new(k);
        for &i in working {
            f.try_link(rows[i].a, rows[i].b);
        }
        f
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    /// Links two nodes (`None` is ground); false if already connected.
    fn try_link(&mut self, a: usize, b: Option<usize>) -> bool {
        let ground = self.parent.len() - 1;
        let (ra, rb) = (self.find(a), self.find(b.unwrap_or(ground)));
        if ra == rb {
            return false;
        }
        self.parent[ra.min(rb)] = ra.max(rb);
        true
    }
}

/// Adjacency of the working forest: node -> (neighbour, row index, orientation).
/// Orientation is +1 when the node is the row's `a` end.
fn working_adjacency(rows: &[FaceRow], working: &[usize], k: usize) -> Vec<Vec<Link>> {
    let mut adj = vec![Vec::new(); k + 1];
    for &i in working {
        let r = rows[i];
        let b = r.b.unwrap_or(k);
        adj[r.a].push((b, i, 1.0));
        adj[b].push((r.a, i, -1.0));
    }
    adj
}

/// `(neighbour, constraint index, sign)`.
type Link = (usize, usize, f64);

/// Trees of the working forest, each as (nodes in BFS order, parent links).
fn working_trees(adj: &[Vec<Link>], k: usize) -> Vec<Vec<(usize, Option<Link>)>> {
    let mut seen = vec![false; k + 1];
    let mut trees = Vec::new();
    // ground first so that ground trees are rooted at ground
    for root in std::iter::once(k).chain(0..k) {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut nodes = vec![(root, None)];
        let mut head = 0;
        while head < nodes.len() {
            let (u, _) = nodes[head];
            head += 1;
            for &(v, row, orient) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    // orientation from v's point of view
                    nodes.push((v, Some((u, row, -orient))));
                }
            }
        }
        trees.push(nodes);
    }
    trees
}

/// Minimizer of the weighted squared distance with every working row held
/// as an equality.
fn solve_working_set(
    rows: &[FaceRow],
    working: &[usize],
    weights: &[f64],
    targets: &[f64],
    k: usize,
) -> Option<Vec<f64>> {
    let adj = working_adjacency(rows, working, k);
    let mut y = vec![0.0; k];
    for tree in working_trees(&adj, k) {
        // offsets relative to the root
        let mut offset = vec![0.0; k + 1];
        for &(v, link) in &tree {
            if let Some((u, row, orient)) = link {
                // orient = +1: v is the row's `a`, so y_v − y_u = rhs
                offset[v] = offset[u] + orient * rows[row].rhs;
            }
        }
        let root = tree[0].0;
        let base = if root == k {
            0.0
        } else {
            let (num, den) = tree.iter().fold((0.0, 0.0), |(n, d), &(v, _)| {
                (n + weights[v] * (targets[v] - offset[v]), d + weights[v])
            });
            if den <= 0.0 {
                return None;
            }
            num / den
        };
        for &(v, _) in &tree {
            if v < k {
                y[v] = base + offset[v];
            }
        }
    }
    Some(y)
}

/// Lagrange multipliers of the working rows at `y` (written as `g ≥ 0`).
fn working_multipliers(
    rows: &[FaceRow],
    working: &[usize],
    weights: &[f64],
    targets: &[f64],
    y: &[f64],
    k: usize,
) -> Vec<f64> {
    let adj = working_adjacency(rows, working, k);
    let mut residual = vec![0.0; k + 1];
    for v in 0..k {
        residual[v] = 2.0 * weights[v] * (y[v] - targets[v]);
    }
    let mut multiplier: BTreeMap<usize, f64> = BTreeMap::new();
    for tree in working_trees(&adj, k) {
        for &(v, link) in tree.iter().rev() {
            if let Some((u, row, orient)) = link {
                // gradient of g at node v is sign·orient
                let coef = rows[row].sign * orient;
                let lambda = residual[v] / coef;
                multiplier.insert(row, lambda);
                residual[u] -= lambda * rows[row].sign * -orient;
            }
        }
    }
    working.iter().map(|i| multiplier.get(i).copied().unwrap_or(0.0)).collect()
}

/// Calibrated scale for a set of comparisons, tagged with its kind.
pub fn calibrate_scale(
    kind: ScaleKind,
    reference: &BTreeMap<CharId, f64>,
    constraints: &OrderConstraints,
    t: f64,
) -> Result<LokScale, CalibrationError> {
    let problem = CalibrationProblem::new(reference.clone(), constraints, t);
    let mut scale = calibrate(&problem)?;
    scale.kind = kind;
    Ok(scale)
}

/// Drops comparison pairs whose ids are not part of the reference map.
pub fn restrict_constraints(c: &OrderConstraints, ids: &BTreeSet<CharId>) -> OrderConstraints {
    OrderConstraints {
        gt: c
            .gt
            .iter()
            .filter(|(a, b)| ids.contains(a) && ids.contains(b))
            .cloned()
            .collect(),
        eq: c
            .eq
            .iter()
            .filter(|(a, b)| ids.contains(a) && ids.contains(b))
            .map(|(a, b)| sorted_pair(a, b))
            .collect(),
    }
}
