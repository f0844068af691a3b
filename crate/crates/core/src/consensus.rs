//! Multi-expert consensus: the weak ordering of characterizations that
//! minimizes conflicts with every expert's comparisons.
//!
//! For each unordered pair `{a, b}` the objective charges
//!
//! ```text
//! w_le(a,b)·x_le(b,a) + w_le(b,a)·x_le(a,b) − 2·w_eq(a,b)·x_eq(a,b)
//! ```
//!
//! so adopting `a < b` costs `w_le(b,a)`, adopting `b < a` costs `w_le(a,b)`
//! and adopting `a = b` costs `w_le(a,b) + w_le(b,a) − 2·w_eq(a,b)`.
//!
//! The exact solver branches over pairs in sorted order, trying equality,
//! then `a < b`, then `b < a`. A branch is kept only if its exact lower bound
//! matches the optimum; the bound is a dynamic program over subsets that
//! builds the ordering block by block (`O(3^n)` per evaluation) and honours
//! every relation fixed so far. The first complete assignment reached is
//! therefore the lexicographically preferred optimal ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparison::{Closure, OrderConstraints, Relation};
use crate::model::CharId;

pub const DEFAULT_EXACT_BOUND: usize = 12;
pub const BRUTE_FORCE_BOUND: usize = 5;

const FORBIDDEN: i64 = 1 << 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("{size} characterizations exceed the exact-solve bound of {bound}")]
    SizeLimitExceeded { size: usize, bound: usize },
    #[error("consensus solve was cancelled")]
    Cancelled,
    #[error("malformed weights: {0}")]
    MalformedWeights(String),
}

/// Cooperative cancellation flag, checked between branch nodes.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, AtomicOrdering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(AtomicOrdering::SeqCst)
    }
}

/// Weights of one unordered pair, `a < b` in id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub a: CharId,
    pub b: CharId,
    pub w_le_ab: u32,
    pub w_le_ba: u32,
    pub w_eq: u32,
}

type Matrix = Vec<Vec<i64>>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairWeights {
    /// Characterizations taking part in the consensus, sorted.
    #[serde(default)]
    pub ids: Vec<CharId>,
    /// Pairs with at least one non-zero weight.
    pub pairs: Vec<PairEntry>,
}

impl PairWeights {
    /// Weight table indexed by position in `ids`: `le[i][j]` experts put
    /// `i ≤ j`, `eq[i][j]` experts put `i = j`.
    fn matrices(&self) -> Result<(Matrix, Matrix), ConsensusError> {
        let n = self.ids.len();
        let index: BTreeMap<&str, usize> = self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if index.len() != n || self.ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConsensusError::MalformedWeights("ids must be sorted and unique".into()));
        }
        let mut le = vec![vec![0i64; n]; n];
        let mut eq = vec![vec![0i64; n]; n];
        for p in &self.pairs {
            let (Some(&i), Some(&j)) = (index.get(p.a.as_str()), index.get(p.b.as_str())) else {
                return Err(ConsensusError::MalformedWeights(format!(
                    "pair ({}, {}) mentions an unknown id",
                    p.a, p.b
                )));
            };
            if i == j {
                return Err(ConsensusError::MalformedWeights(format!("self pair on `{}`", p.a)));
            }
            if p.w_eq > p.w_le_ab.min(p.w_le_ba) {
                return Err(ConsensusError::MalformedWeights(format!(
                    "pair ({}, {}): w_eq exceeds a lower-or-equal weight",
                    p.a, p.b
                )));
            }
            le[i][j] += i64::from(p.w_le_ab);
            le[j][i] += i64::from(p.w_le_ba);
            eq[i][j] += i64::from(p.w_eq);
            eq[j][i] += i64::from(p.w_eq);
        }
        Ok((le, eq))
    }

    /// Weights `(w_le(a,b), w_le(b,a), w_eq)` for any orientation.
    pub fn get(&self, a: &str, b: &str) -> (u32, u32, u32) {
        for p in &self.pairs {
            if p.a == a && p.b == b {
                return (p.w_le_ab, p.w_le_ba, p.w_eq);
            }
            if p.a == b && p.b == a {
                return (p.w_le_ba, p.w_le_ab, p.w_eq);
            }
        }
        (0, 0, 0)
    }

    pub fn is_supported(&self, a: &str, b: &str) -> bool {
        self.get(a, b) != (0, 0, 0)
    }
}

/// Counts expert opinions per pair of `ids`. A strict `a < b` counts toward
/// `w_le(a,b)`; an equality counts toward both directions and `w_eq`.
pub fn aggregate_weights<'a, I>(closures: I, ids: &BTreeSet<CharId>) -> PairWeights
where
    I: IntoIterator<Item = &'a Closure>,
{
    let mut table: BTreeMap<(CharId, CharId), (u32, u32, u32)> = BTreeMap::new();
    for closure in closures {
        for (lo, hi) in &closure.lt {
            if !(ids.contains(lo) && ids.contains(hi)) {
                continue;
            }
            if lo < hi {
                table.entry((lo.clone(), hi.clone())).or_default().0 += 1;
            } else {
                table.entry((hi.clone(), lo.clone())).or_default().1 += 1;
            }
        }
        for (a, b) in &closure.eq {
            if !(ids.contains(a) && ids.contains(b)) {
                continue;
            }
            let e = table.entry((a.clone(), b.clone())).or_default();
            e.0 += 1;
            e.1 += 1;
            e.2 += 1;
        }
    }
    PairWeights {
        ids: ids.iter().cloned().collect(),
        pairs: table
            .into_iter()
            .map(|((a, b), (w_le_ab, w_le_ba, w_eq))| PairEntry {
                a,
                b,
                w_le_ab,
                w_le_ba,
                w_eq,
            })
            .collect(),
    }
}

/// Relation adopted for a pair `(i, j)`, `i < j`: preference order of the
/// tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PairChoice {
    Equal,
    Below,
    Above,
}

const CHOICES: [PairChoice; 3] = [PairChoice::Equal, PairChoice::Below, PairChoice::Above];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub nodes_explored: u64,
    pub runtime_ms: u64,
}

/// A complete weak ordering over the consensus ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusRelations {
    pub ids: Vec<CharId>,
    /// Equality classes from lowest to highest LOK.
    pub levels: Vec<Vec<CharId>>,
    /// One relation per unordered pair: `lt` (lower first) or `eq`.
    pub relations: Vec<Relation>,
    pub objective: i64,
    #[serde(default)]
    pub stats: SolverStats,
}

impl ConsensusRelations {
    fn from_ranks(ids: &[CharId], rank: &[usize], objective: i64, stats: SolverStats) -> Self {
        let levels_count = rank.iter().copied().max().map_or(0, |m| m + 1);
        let mut levels = vec![Vec::new(); levels_count];
        for (i, &r) in rank.iter().enumerate() {
            levels[r].push(ids[i].clone());
        }
        let mut relations = Vec::new();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let (a, b) = (ids[i].clone(), ids[j].clone());
                relations.push(match rank[i].cmp(&rank[j]) {
                    std::cmp::Ordering::Equal => Relation::eq(a, b),
                    std::cmp::Ordering::Less => Relation::lt(a, b),
                    std::cmp::Ordering::Greater => Relation::lt(b, a),
                });
            }
        }
        Self {
            ids: ids.to_vec(),
            levels,
            relations,
            objective,
            stats,
        }
    }

    /// Level index of each id (0 = lowest).
    pub fn rank_of(&self) -> BTreeMap<&str, usize> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(r, lvl)| lvl.iter().map(move |id| (id.as_str(), r)))
            .collect()
    }

    /// Consensus relations restricted to pairs at least one expert compared.
    pub fn supported_constraints(&self, weights: &PairWeights) -> OrderConstraints {
        let all = consensus_to_gt_eq(self);
        OrderConstraints {
            gt: all.gt.into_iter().filter(|(a, b)| weights.is_supported(a, b)).collect(),
            eq: all.eq.into_iter().filter(|(a, b)| weights.is_supported(a, b)).collect(),
        }
    }
}

pub fn consensus_to_gt_eq(c: &ConsensusRelations) -> OrderConstraints {
    let mut out = OrderConstraints::default();
    for r in &c.relations {
        match r.kind {
            crate::comparison::RelationKind::Lt => {
                out.gt.insert((r.b.clone(), r.a.clone()));
            }
            crate::comparison::RelationKind::Eq => {
                out.eq.insert(crate::comparison::sorted_pair(&r.a, &r.b));
            }
        }
    }
    out
}

/// Cost of each choice for every pair `i < j`.
struct CostTable {
    n: usize,
    /// `cost[i][j]` for i != j: cost of placing i strictly below j.
    below: Vec<Vec<i64>>,
    /// `equal[i][j]`, symmetric.
    equal: Vec<Vec<i64>>,
}

impl CostTable {
    fn new(le: &[Vec<i64>], eq: &[Vec<i64>]) -> Self {
        let n = le.len();
        let mut below = vec![vec![0; n]; n];
        let mut equal = vec![vec![0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    // i < j contradicts the experts who put j ≤ i
                    below[i][j] = le[j][i];
                    equal[i][j] = le[i][j] + le[j][i] - 2 * eq[i][j];
                }
            }
        }
        Self { n, below, equal }
    }

    fn choice_cost(&self, i: usize, j: usize, c: PairChoice) -> i64 {
        match c {
            PairChoice::Equal => self.equal[i][j],
            PairChoice::Below => self.below[i][j],
            PairChoice::Above => self.below[j][i],
        }
    }

    /// Applies fixed choices by forbidding the alternatives.
    fn restricted(&self, fixed: &BTreeMap<(usize, usize), PairChoice>) -> Self {
        let mut t = Self {
            n: self.n,
            below: self.below.clone(),
            equal: self.equal.clone(),
        };
        for (&(i, j), &c) in fixed {
            if c != PairChoice::Equal {
                t.equal[i][j] = FORBIDDEN;
                t.equal[j][i] = FORBIDDEN;
            }
            if c != PairChoice::Below {
                t.below[i][j] = FORBIDDEN;
            }
            if c != PairChoice::Above {
                t.below[j][i] = FORBIDDEN;
            }
        }
        t
    }

    /// Minimum cost over all weak orderings (blocks built bottom-up over subsets).
    fn optimum(&self, cancel: &CancelToken) -> Result<i64, ConsensusError> {
        let n = self.n;
        if n == 0 {
            return Ok(0);
        }
        let full = (1usize << n) - 1;
        let size = 1usize << n;
        // within[B]: equality cost inside block B
        let mut within = vec![0i64; size];
        for set in 1..size {
            let low = set.trailing_zeros() as usize;
            let rest = set & (set - 1);
            let mut c = within[rest];
            let mut r = rest;
            while r != 0 {
                let x = r.trailing_zeros() as usize;
                c += self.equal[low][x];
                r &= r - 1;
            }
            within[set] = c.min(FORBIDDEN);
        }
        // under[b][S]: cost of every s in S strictly below b
        let mut under = vec![vec![0i64; size]; n];
        for (b, row) in under.iter_mut().enumerate() {
            for set in 1..size {
                let low = set.trailing_zeros() as usize;
                row[set] = (row[set & (set - 1)] + self.below[low][b]).min(FORBIDDEN);
            }
        }
        let mut best = vec![i64::MAX; size];
        best[0] = 0;
        for set in 0..full {
            if set & 0xfff == 0 && cancel.is_cancelled() {
                return Err(ConsensusError::Cancelled);
            }
            let base = best[set];
            if base >= FORBIDDEN {
                continue;
            }
            let rest = full & !set;
            let mut block = rest;
            while block != 0 {
                let mut c = base + within[block];
                let mut r = block;
                while r != 0 && c < FORBIDDEN {
                    let b = r.trailing_zeros() as usize;
                    c += under[b][set];
                    r &= r - 1;
                }
                let next = set | block;
                if c < best[next] {
                    best[next] = c;
                }
                block = (block - 1) & rest;
            }
        }
        Ok(best[full])
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub exact_bound: usize,
    pub cancel: CancelToken,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            exact_bound: DEFAULT_EXACT_BOUND,
            cancel: CancelToken::new(),
        }
    }
}

pub fn solve_consensus(w: &PairWeights) -> Result<ConsensusRelations, ConsensusError> {
    solve_consensus_with(w, &SolveOptions::default())
}

pub fn solve_consensus_with(w: &PairWeights, opts: &SolveOptions) -> Result<ConsensusRelations, ConsensusError> {
    let started = Instant::now();
    let n = w.ids.len();
    if n > opts.exact_bound {
        return Err(ConsensusError::SizeLimitExceeded {
            size: n,
            bound: opts.exact_bound,
        });
    }
    let (le, eq) = w.matrices()?;
    let table = CostTable::new(&le, &eq);
    let mut nodes = 1u64;
    let optimum = table.optimum(&opts.cancel)?;

    let mut fixed: BTreeMap<(usize, usize), PairChoice> = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let allowed: Vec<PairChoice> = CHOICES
                .into_iter()
                .filter(|&c| consistent(&fixed, i, j, c, n))
                .collect();
            let mut chosen = None;
            for (pos, &c) in allowed.iter().enumerate() {
                if pos + 1 == allowed.len() {
                    chosen = Some(c);
                    break;
                }
                if opts.cancel.is_cancelled() {
                    return Err(ConsensusError::Cancelled);
                }
                fixed.insert((i, j), c);
                nodes += 1;
                let bound = table.restricted(&fixed).optimum(&opts.cancel)?;
                fixed.remove(&(i, j));
                if bound == optimum {
                    chosen = Some(c);
                    break;
                }
            }
            let c = chosen.expect("an optimal completion exists");
            fixed.insert((i, j), c);
        }
    }

    let rank = ranks_from_choices(&fixed, n);
    let objective = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| table.choice_cost(i, j, fixed[&(i, j)]))
        .sum::<i64>();
    debug_assert_eq!(objective, optimum);
    Ok(ConsensusRelations::from_ranks(
        &w.ids,
        &rank,
        objective,
        SolverStats {
            nodes_explored: nodes,
            runtime_ms: started.elapsed().as_millis() as u64,
        },
    ))
}

/// Cheap necessary check: rejects `c` when a fixed triangle through a third
/// item already implies a different relation for `(i, j)`.
fn consistent(fixed: &BTreeMap<(usize, usize), PairChoice>, i: usize, j: usize, c: PairChoice, n: usize) -> bool {
    let mut trial = fixed.clone();
    trial.insert((i, j), c);
    let cmp = |a: usize, b: usize| -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        if a < b {
            trial.get(&(a, b)).map(|c| match c {
                PairChoice::Equal => Equal,
                PairChoice::Below => Less,
                PairChoice::Above => Greater,
            })
        } else {
            trial.get(&(b, a)).map(|c| match c {
                PairChoice::Equal => Equal,
                PairChoice::Below => Greater,
                PairChoice::Above => Less,
            })
        }
    };
    for k in 0..n {
        if k == i || k == j {
            continue;
        }
        let (Some(ik), Some(kj)) = (cmp(i, k), cmp(k, j)) else {
            continue;
        };
        let ij = cmp(i, j).expect("just inserted");
        use std::cmp::Ordering::*;
        let implied = match (ik, kj) {
            (Equal, x) | (x, Equal) => x,
            (Less, Less) => Less,
            (Greater, Greater) => Greater,
            _ => continue,
        };
        if implied != ij {
            return false;
        }
    }
    true
}

fn ranks_from_choices(fixed: &BTreeMap<(usize, usize), PairChoice>, n: usize) -> Vec<usize> {
    // rank = number of distinct levels strictly below
    let mut below_count: Vec<usize> = vec![0; n];
    for i in 0..n {
        let mut lower: BTreeSet<usize> = BTreeSet::new();
        for j in 0..n {
            if i == j {
                continue;
            }
            let j_below_i = if j < i {
                fixed[&(j, i)] == PairChoice::Below
            } else {
                fixed[&(i, j)] == PairChoice::Above
            };
            if j_below_i {
                lower.insert(j);
            }
        }
        below_count[i] = lower.len();
    }
    let mut distinct: Vec<usize> = below_count.clone();
    distinct.sort_unstable();
    distinct.dedup();
    below_count
        .iter()
        .map(|c| distinct.binary_search(c).expect("present"))
        .collect()
}

/// Every weak ordering of `n` items as a rank vector (ranks form `0..m`).
pub fn enumerate_weak_orderings(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut rank = vec![0usize; n];
    fn rec(pos: usize, n: usize, rank: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == n {
            let max = rank.iter().copied().max().map_or(0, |m| m + 1);
            if (0..max).all(|r| rank.contains(&r)) {
                out.push(rank.clone());
            }
            return;
        }
        for r in 0..n {
            rank[pos] = r;
            rec(pos + 1, n, rank, out);
        }
    }
    rec(0, n, &mut rank, &mut out);
    out
}

/// Exhaustive oracle: evaluates every weak ordering with the explicit 0/1
/// variables and keeps the cheapest (ties broken like the exact solver).
pub fn brute_force_consensus(w: &PairWeights) -> Result<ConsensusRelations, ConsensusError> {
    let n = w.ids.len();
    if n > BRUTE_FORCE_BOUND {
        return Err(ConsensusError::SizeLimitExceeded {
            size: n,
            bound: BRUTE_FORCE_BOUND,
        });
    }
    let (le, eq) = w.matrices()?;
    let mut best: Option<(i64, Vec<u8>, Vec<usize>)> = None;
    let mut count = 0u64;
    for rank in enumerate_weak_orderings(n) {
        count += 1;
        let x_le = |a: usize, b: usize| i64::from(rank[a] <= rank[b]);
        let x_eq = |a: usize, b: usize| i64::from(rank[a] == rank[b]);
        let mut objective = 0;
        let mut key = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                objective += le[a][b] * x_le(b, a) + le[b][a] * x_le(a, b) - 2 * eq[a][b] * x_eq(a, b);
                key.push(match rank[a].cmp(&rank[b]) {
                    std::cmp::Ordering::Equal => 0,
                    std::cmp::Ordering::Less => 1,
                    std::cmp::Ordering::Greater => 2,
                });
            }
        }
        let better = match &best {
            None => true,
            Some((obj, k, _)) => (objective, &key) < (*obj, k),
        };
        if better {
            best = Some((objective, key, rank));
        }
    }
    let (objective, _, rank) = best.expect("at least one ordering");
    Ok(ConsensusRelations::from_ranks(
        &w.ids,
        &rank,
        objective,
        SolverStats {
            nodes_explored: count,
            runtime_ms: 0,
        },
    ))
}
