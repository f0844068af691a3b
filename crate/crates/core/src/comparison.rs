//! Per-expert pairwise LOK comparisons kept consistent by rule-based inference.
//!
//! An expert states, for two characterizations `a` and `b`, either that `a`
//! has a lower level of knowledge than `b` (`Lt`) or that both are equal
//! (`Eq`). The closure applies three rules until a fixed point:
//!
//! * `a < b` and `b < c` give `a < c`
//! * `a = b` and `b = c` give `a = c`
//! * `a < b` and `b = c` give `a < c` (and the mirrored `a = b`, `b < c`)
//!
//! The closure is computed by contracting equality classes and running a
//! breadth-first reachability pass over the strict edges between classes,
//! which is `O(V·E)`. Inserting a relation that would contradict the closure
//! is rejected with the shortest chain of asserted relations that conflicts
//! with it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CharId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    /// `a` has a strictly lower LOK than `b`.
    Lt,
    /// `a` and `b` have the same LOK.
    Eq,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub a: CharId,
    pub b: CharId,
    #[serde(rename = "relation")]
    pub kind: RelationKind,
}

impl Relation {
    pub fn lt(a: impl Into<CharId>, b: impl Into<CharId>) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            kind: RelationKind::Lt,
        }
    }

    pub fn eq(a: impl Into<CharId>, b: impl Into<CharId>) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            kind: RelationKind::Eq,
        }
    }

    /// Same relation with equality endpoints sorted, so `eq(b, a)` and
    /// `eq(a, b)` compare equal.
    pub fn canonical(&self) -> Self {
        match self.kind {
            RelationKind::Eq if self.b < self.a => Self::eq(self.b.clone(), self.a.clone()),
            _ => self.clone(),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            RelationKind::Lt => "<",
            RelationKind::Eq => "=",
        };
        write!(f, "{} {} {}", self.a, op, self.b)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComparisonError {
    #[error("a characterization cannot be compared with itself (`{0}`)")]
    SelfComparison(CharId),
    #[error("unknown characterization `{0}`")]
    UnknownNode(CharId),
    #[error("no asserted comparison with id {0}")]
    UnknownComparison(u64),
    #[error("`{relation}` contradicts earlier comparisons: {}", format_chain(.witness))]
    Contradiction {
        relation: Relation,
        witness: Vec<Relation>,
    },
}

fn format_chain(chain: &[Relation]) -> String {
    chain
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Fixed point of the consistency rules. Strict pairs are stored as
/// `(lower, higher)`; equality pairs with their endpoints sorted. Reflexive
/// equalities are implicit and never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Closure {
    pub lt: BTreeSet<(CharId, CharId)>,
    pub eq: BTreeSet<(CharId, CharId)>,
}

impl Closure {
    pub fn contains(&self, r: &Relation) -> bool {
        match r.kind {
            RelationKind::Lt => self.lt.contains(&(r.a.clone(), r.b.clone())),
            RelationKind::Eq => self.eq.contains(&sorted_pair(&r.a, &r.b)),
        }
    }

    /// Known ordering of `a` relative to `b`, if any.
    pub fn compare(&self, a: &str, b: &str) -> Option<Ordering> {
        if a == b {
            return Some(Ordering::Equal);
        }
        let (a, b) = (a.to_string(), b.to_string());
        if self.lt.contains(&(a.clone(), b.clone())) {
            Some(Ordering::Less)
        } else if self.lt.contains(&(b.clone(), a.clone())) {
            Some(Ordering::Greater)
        } else if self.eq.contains(&sorted_pair(&a, &b)) {
            Some(Ordering::Equal)
        } else {
            None
        }
    }

    pub fn relations(&self) -> impl Iterator<Item = Relation> + '_ {
        self.lt
            .iter()
            .map(|(a, b)| Relation::lt(a.clone(), b.clone()))
            .chain(self.eq.iter().map(|(a, b)| Relation::eq(a.clone(), b.clone())))
    }

    pub fn len(&self) -> usize {
        self.lt.len() + self.eq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lt.is_empty() && self.eq.is_empty()
    }

    fn conflict_with(&self, r: &Relation) -> bool {
        match r.kind {
            RelationKind::Lt => matches!(
                self.compare(&r.a, &r.b),
                Some(Ordering::Greater | Ordering::Equal)
            ),
            RelationKind::Eq => matches!(
                self.compare(&r.a, &r.b),
                Some(Ordering::Less | Ordering::Greater)
            ),
        }
    }
}

pub(crate) fn sorted_pair(a: &str, b: &str) -> (CharId, CharId) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Consistent greater-than and equality pairs, the input format of the
/// calibration LP. `gt` holds `(greater, lesser)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderConstraints {
    pub gt: BTreeSet<(CharId, CharId)>,
    pub eq: BTreeSet<(CharId, CharId)>,
}

/// Computes the least fixed point of the consistency rules over `asserted`.
pub fn infer_closure(asserted: &[Relation]) -> Result<Closure, ComparisonError> {
    for r in asserted {
        if r.a == r.b {
            return Err(ComparisonError::SelfComparison(r.a.clone()));
        }
    }
    match try_closure(asserted) {
        Some(c) => Ok(c),
        None => Err(locate_contradiction(asserted)),
    }
}

/// Closure by equality contraction plus reachability; `None` when inconsistent.
fn try_closure(asserted: &[Relation]) -> Option<Closure> {
    let ids: Vec<&str> = asserted
        .iter()
        .flat_map(|r| [r.a.as_str(), r.b.as_str()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let n = ids.len();

    let mut uf = UnionFind::new(n);
    for r in asserted.iter().filter(|r| r.kind == RelationKind::Eq) {
        uf.union(index[r.a.as_str()], index[r.b.as_str()]);
    }
    let mut class_of = vec![0usize; n];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut root_to_class = BTreeMap::new();
    for (i, slot) in class_of.iter_mut().enumerate() {
        let root = uf.find(i);
        let c = *root_to_class.entry(root).or_insert_with(|| {
            classes.push(Vec::new());
            classes.len() - 1
        });
        classes[c].push(i);
        *slot = c;
    }

    let k = classes.len();
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for r in asserted.iter().filter(|r| r.kind == RelationKind::Lt) {
        let (ca, cb) = (class_of[index[r.a.as_str()]], class_of[index[r.b.as_str()]]);
        if ca == cb {
            return None;
        }
        succ[ca].insert(cb);
    }

    let mut closure = Closure::default();
    for members in &classes {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                closure.eq.insert(sorted_pair(ids[i], ids[j]));
            }
        }
    }
    let mut seen = vec![false; k];
    let mut queue = VecDeque::new();
    for start in 0..k {
        seen.iter_mut().for_each(|s| *s = false);
        queue.clear();
        queue.extend(succ[start].iter().copied());
        while let Some(c) = queue.pop_front() {
            if seen[c] {
                continue;
            }
            if c == start {
                return None;
            }
            seen[c] = true;
            queue.extend(succ[c].iter().copied());
        }
        for (c, _) in seen.iter().enumerate().filter(|(_, s)| **s) {
            for &lo in &classes[start] {
                for &hi in &classes[c] {
                    closure.lt.insert((ids[lo].to_string(), ids[hi].to_string()));
                }
            }
        }
    }
    Some(closure)
}

/// Finds the first asserted relation that breaks consistency and explains it
/// with the relations before it.
fn locate_contradiction(asserted: &[Relation]) -> ComparisonError {
    let mut prefix_closure = Closure::default();
    for (k, r) in asserted.iter().enumerate() {
        if prefix_closure.conflict_with(r) {
            return ComparisonError::Contradiction {
                relation: r.clone(),
                witness: witness_chain(&asserted[..k], r),
            };
        }
        prefix_closure = try_closure(&asserted[..=k]).expect("no conflict with consistent prefix");
    }
    unreachable!("inconsistent relation set without a conflicting relation")
}

/// Shortest chain of `asserted` relations that, together with `r`, forces a
/// strict cycle or a strict/equal clash.
fn witness_chain(asserted: &[Relation], r: &Relation) -> Vec<Relation> {
    // "at most" graph: p -> q means L_p <= L_q, tagged with strictness.
    let mut adj: BTreeMap<&str, Vec<(&str, bool, usize)>> = BTreeMap::new();
    for (i, rel) in asserted.iter().enumerate() {
        match rel.kind {
            RelationKind::Lt => adj.entry(&rel.a).or_default().push((&rel.b, true, i)),
            RelationKind::Eq => {
                adj.entry(&rel.a).or_default().push((&rel.b, false, i));
                adj.entry(&rel.b).or_default().push((&rel.a, false, i));
            }
        }
    }
    for edges in adj.values_mut() {
        edges.sort();
    }
    let path = match r.kind {
        // a < b clashes with any path b <= ... <= a.
        RelationKind::Lt => shortest_path(&adj, &r.b, &r.a, false),
        // a = b clashes with a strict path in either direction.
        RelationKind::Eq => {
            let fwd = shortest_path(&adj, &r.a, &r.b, true);
            let bwd = shortest_path(&adj, &r.b, &r.a, true);
            match (fwd, bwd) {
                (Some(f), Some(b)) if b.len() < f.len() => Some(b),
                (Some(f), _) => Some(f),
                (None, b) => b,
            }
        }
    };
    path.unwrap_or_default()
        .into_iter()
        .map(|i| asserted[i].clone())
        .collect()
}

fn shortest_path(
    adj: &BTreeMap<&str, Vec<(&str, bool, usize)>>,
    from: &str,
    to: &str,
    need_strict: bool,
) -> Option<Vec<usize>> {
    type State<'a> = (&'a str, bool);
    let mut prev: BTreeMap<State, (State, usize)> = BTreeMap::new();
    let start: State = (from, false);
    let mut visited = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(state @ (node, strict)) = queue.pop_front() {
        if node == to && state != start && (strict || !need_strict) {
            let mut path = Vec::new();
            let mut cur = state;
            while cur != start {
                let (p, edge) = prev[&cur];
                path.push(edge);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for &(next, edge_strict, idx) in adj.get(node).map(Vec::as_slice).unwrap_or(&[]) {
            let ns: State = (next, strict || edge_strict);
            if visited.insert(ns) {
                prev.insert(ns, (state, idx));
                queue.push_back(ns);
            }
        }
    }
    None
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes the root for determinism
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// A comparison as entered by an expert, with a stable id for retraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertedComparison {
    pub id: u64,
    #[serde(flatten)]
    pub relation: Relation,
}

/// Result of [`ComparisonGraph::add_comparison`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AddOutcome {
    Added { id: u64 },
    AlreadyImplied,
}

/// One expert's comparisons for one risk factor. Immutable: every change
/// returns a new graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonGraph {
    pub nodes: BTreeSet<CharId>,
    pub asserted: Vec<AssertedComparison>,
    pub closure: Closure,
    next_id: u64,
}

impl ComparisonGraph {
    pub fn new<I, S>(nodes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<CharId>,
    {
        Self {
            nodes: nodes.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn with_node(&self, id: impl Into<CharId>) -> Self {
        let mut g = self.clone();
        g.nodes.insert(id.into());
        g
    }

    pub fn asserted_relations(&self) -> Vec<Relation> {
        self.asserted.iter().map(|c| c.relation.clone()).collect()
    }

    pub fn add_comparison(&self, r: Relation) -> Result<(Self, AddOutcome), ComparisonError> {
        if r.a == r.b {
            return Err(ComparisonError::SelfComparison(r.a));
        }
        for end in [&r.a, &r.b] {
            if !self.nodes.contains(end) {
                return Err(ComparisonError::UnknownNode(end.clone()));
            }
        }
        if self.closure.contains(&r.canonical()) {
            return Ok((self.clone(), AddOutcome::AlreadyImplied));
        }
        if self.closure.conflict_with(&r) {
            let witness = witness_chain(&self.asserted_relations(), &r);
            return Err(ComparisonError::Contradiction { relation: r, witness });
        }
        let mut g = self.clone();
        let id = g.next_id;
        g.next_id += 1;
        g.asserted.push(AssertedComparison { id, relation: r });
        g.closure = infer_closure(&g.asserted_relations())?;
        Ok((g, AddOutcome::Added { id }))
    }

    /// Retracts an asserted comparison and recomputes the closure from the rest.
    pub fn remove_comparison(&self, id: u64) -> Result<Self, ComparisonError> {
        let pos = self
            .asserted
            .iter()
            .position(|c| c.id == id)
            .ok_or(ComparisonError::UnknownComparison(id))?;
        let mut g = self.clone();
        g.asserted.remove(pos);
        g.closure = infer_closure(&g.asserted_relations())?;
        Ok(g)
    }

    pub fn extract_gt_eq(&self) -> OrderConstraints {
        extract_gt_eq(&self.closure)
    }

    /// Adjacency export: edge `j -> i` whenever `L_j > L_i`, both directions
    /// for equal pairs.
    pub fn adjacency(&self) -> BTreeMap<CharId, Vec<CharId>> {
        let mut adj: BTreeMap<CharId, Vec<CharId>> =
            self.nodes.iter().map(|n| (n.clone(), Vec::new())).collect();
        for (lo, hi) in &self.closure.lt {
            adj.entry(hi.clone()).or_default().push(lo.clone());
        }
        for (a, b) in &self.closure.eq {
            adj.entry(a.clone()).or_default().push(b.clone());
            adj.entry(b.clone()).or_default().push(a.clone());
        }
        for v in adj.values_mut() {
            v.sort();
        }
        adj
    }
}

pub fn extract_gt_eq(closure: &Closure) -> OrderConstraints {
    OrderConstraints {
        gt: closure
            .lt
            .iter()
            .map(|(lo, hi)| (hi.clone(), lo.clone()))
            .collect(),
        eq: closure.eq.clone(),
    }
}
