//! POS assessment constrained by LOK.
//!
//! The allowed region is described by two piecewise-linear curves over LOK:
//! `inner(l)` is the minimum and `outer(l)` the maximum allowed distance of a
//! POS value from 0.5. Low LOK keeps POS near 0.5; high LOK pushes it to
//! the extremes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_score, AssessmentRecord, CharId, Characterization, ExpertId, ModelError, Questionnaire, Status};
use crate::reference::{encode_one_hot, similarity, ReferenceError};

/// Slack used for containment tests; region endpoints are sums of floats.
pub const CONTAINMENT_EPS: f64 = 1e-9;
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PosError {
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("no POS entries to reconcile")]
    NoEntries,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("({lok}, {pos}) lies outside the allowed region")]
    OutsideRegion { lok: f64, pos: f64, nearest: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRegion {
    pub inner: Vec<[f64; 2]>,
    pub outer: Vec<[f64; 2]>,
}

impl Default for LikelihoodRegion {
    fn default() -> Self {
        Self {
            inner: vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.45]],
            outer: vec![[0.0, 0.05], [1.0, 0.5]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, p: f64) -> bool {
        p >= self.lo - CONTAINMENT_EPS && p <= self.hi + CONTAINMENT_EPS
    }

    fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }
}

fn interpolate(points: &[[f64; 2]], x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    for w in points.windows(2) {
        let ([x0, y0], [x1, y1]) = (w[0], w[1]);
        if x <= x1 {
            if x1 == x0 {
                return y1;
            }
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    points.last().map_or(0.0, |p| p[1])
}

fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

impl LikelihoodRegion {
    /// Every POS value allowed at every LOK.
    pub fn unconstrained() -> Self {
        Self {
            inner: vec![[0.0, 0.0], [1.0, 0.0]],
            outer: vec![[0.0, 0.5], [1.0, 0.5]],
        }
    }

    pub fn validate(&self) -> Result<(), PosError> {
        for (name, curve) in [("inner", &self.inner), ("outer", &self.outer)] {
            if curve.len() < 2 {
                return Err(PosError::InvalidRegion(format!("{name} needs at least two breakpoints")));
            }
            if curve[0][0] != 0.0 || curve[curve.len() - 1][0] != 1.0 {
                return Err(PosError::InvalidRegion(format!("{name} must span lok 0 to 1")));
            }
            for w in curve.windows(2) {
                if w[1][0] <= w[0][0] {
                    return Err(PosError::InvalidRegion(format!("{name} breakpoints must be strictly increasing")));
                }
                if w[1][1] < w[0][1] {
                    return Err(PosError::InvalidRegion(format!("{name} must be non-decreasing")));
                }
            }
            if curve.iter().any(|p| !(0.0..=0.5).contains(&p[1]) || !p[1].is_finite()) {
                return Err(PosError::InvalidRegion(format!("{name} values must lie in [0, 0.5]")));
            }
        }
        // both curves are linear between the union of breakpoints
        for l in self.inner.iter().chain(&self.outer).map(|p| p[0]) {
            if self.inner_at(l) > self.outer_at(l) + CONTAINMENT_EPS {
                return Err(PosError::InvalidRegion(format!("inner exceeds outer at lok {l}")));
            }
        }
        Ok(())
    }

    pub fn inner_at(&self, lok: f64) -> f64 {
        interpolate(&self.inner, lok)
    }

    pub fn outer_at(&self, lok: f64) -> f64 {
        interpolate(&self.outer, lok)
    }

    /// Breakpoint LOKs of both curves, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.inner.iter().chain(&self.outer).map(|p| p[0]).collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// `{p : inner(lok) ≤ |p − 0.5| ≤ outer(lok)}` as one or two closed intervals.
pub fn allowed_intervals(r: &LikelihoodRegion, lok: f64) -> Vec<Interval> {
    let inner = r.inner_at(lok);
    let outer = r.outer_at(lok);
    if inner > outer {
        return Vec::new();
    }
    let lo = snap((0.5 - outer).max(0.0));
    let hi = snap((0.5 + outer).min(1.0));
    if inner == 0.0 {
        vec![Interval { lo, hi }]
    } else {
        vec![
            Interval {
                lo,
                hi: snap(0.5 - inner),
            },
            Interval {
                lo: snap(0.5 + inner),
                hi,
            },
        ]
    }
}

pub fn is_allowed(r: &LikelihoodRegion, lok: f64, pos: f64) -> bool {
    allowed_intervals(r, lok).iter().any(|i| i.contains(pos))
}

/// Nearest allowed POS; ties go toward 0.5, then to the lower value.
/// Allowed values are returned unchanged.
pub fn project(r: &LikelihoodRegion, lok: f64, pos: f64) -> Option<f64> {
    let intervals = allowed_intervals(r, lok);
    if intervals.iter().any(|i| i.contains(pos)) {
        return Some(pos);
    }
    let mut best: Option<f64> = None;
    for c in intervals.iter().map(|i| i.clamp(pos)) {
        best = Some(match best {
            None => c,
            Some(b) => {
                let (dc, db) = ((c - pos).abs(), (b - pos).abs());
                if dc < db - TIE_EPS {
                    c
                } else if db < dc - TIE_EPS {
                    b
                } else {
                    let (mc, mb) = ((c - 0.5).abs(), (b - 0.5).abs());
                    if mc < mb - TIE_EPS {
                        c
                    } else if mb < mc - TIE_EPS {
                        b
                    } else {
                        b.min(c)
                    }
                }
            }
        });
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosValidation {
    pub accepted: bool,
    pub lok: f64,
    pub pos: f64,
    /// Equal to `pos` when accepted.
    pub nearest: Option<f64>,
    pub intervals: Vec<Interval>,
}

pub fn validate_pos(r: &LikelihoodRegion, lok: f64, pos: f64) -> Result<PosValidation, PosError> {
    check_score("lok", lok)?;
    check_score("pos", pos)?;
    let intervals = allowed_intervals(r, lok);
    let accepted = intervals.iter().any(|i| i.contains(pos));
    Ok(PosValidation {
        accepted,
        lok,
        pos,
        nearest: project(r, lok, pos),
        intervals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosScaleKind {
    Expert,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosEntry {
    pub expert_id: ExpertId,
    pub characterization_id: CharId,
    pub pos: f64,
    pub lok_used: f64,
    pub scale_kind: PosScaleKind,
}

impl PosEntry {
    /// Scores in range and `(lok_used, pos)` inside the region.
    pub fn check(&self, r: &LikelihoodRegion) -> Result<(), PosError> {
        let v = validate_pos(r, self.lok_used, self.pos)?;
        if v.accepted {
            Ok(())
        } else {
            Err(PosError::OutsideRegion {
                lok: self.lok_used,
                pos: self.pos,
                nearest: v.nearest.unwrap_or(self.pos),
            })
        }
    }
}

/// Middle value; the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Suggested peer-review POS: the median entry projected into the region
/// at the global LOK.
pub fn consensus_pos(entries: &[PosEntry], r: &LikelihoodRegion, global_lok: f64) -> Result<f64, PosError> {
    check_score("global_lok", global_lok)?;
    let values: Vec<f64> = entries.iter().map(|e| e.pos).collect();
    let m = median(&values).ok_or(PosError::NoEntries)?;
    project(r, global_lok, m).ok_or_else(|| PosError::InvalidRegion(format!("no allowed POS at lok {global_lok}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarAssessment {
    pub characterization_id: CharId,
    pub similarity: f64,
    pub consensus_pos: Option<f64>,
    pub global_lok: Option<f64>,
}

/// Top-`k` peer-reviewed characterizations of the target's risk factor by
/// one-hot similarity, best first, ties by id. The target itself is skipped.
pub fn similar_assessments<'a>(
    target: &Characterization,
    questionnaire: &Questionnaire,
    pool: impl IntoIterator<Item = &'a Characterization>,
    records: &BTreeMap<CharId, AssessmentRecord>,
    k: usize,
) -> Result<Vec<SimilarAssessment>, ReferenceError> {
    let target_vec = encode_one_hot(target, questionnaire)?;
    let mut out = Vec::new();
    for c in pool {
        if c.id == target.id || c.risk_factor_id != target.risk_factor_id || c.status != Status::PeerReviewed {
            continue;
        }
        let v = encode_one_hot(c, questionnaire)?;
        let record = records.get(&c.id);
        out.push(SimilarAssessment {
            characterization_id: c.id.clone(),
            similarity: similarity(&target_vec, &v)?,
            consensus_pos: record.and_then(|r| r.consensus_pos),
            global_lok: record.and_then(|r| r.global_lok),
        });
    }
    out.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.characterization_id.cmp(&b.characterization_id))
    });
    out.truncate(k);
    Ok(out)
}

/// Geometry for drawing the region with POS on x and LOK on y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPlot {
    /// Closed polygons as `[pos, lok]` vertices: the half below 0.5 and
    /// the half above. Where `inner` is zero the halves touch at 0.5.
    pub polygons: Vec<Vec<[f64; 2]>>,
    pub lok: Option<f64>,
    pub intervals: Vec<Interval>,
    pub similar: Vec<SimilarAssessment>,
}

pub fn region_polygons(r: &LikelihoodRegion) -> Vec<Vec<[f64; 2]>> {
    let ls = r.breakpoints();
    let mut low = Vec::new();
    let mut high = Vec::new();
    for &l in &ls {
        low.push([snap((0.5 - r.outer_at(l)).max(0.0)), l]);
        high.push([snap(0.5 + r.inner_at(l)), l]);
    }
    for &l in ls.iter().rev() {
        low.push([snap(0.5 - r.inner_at(l)), l]);
        high.push([snap((0.5 + r.outer_at(l)).min(1.0)), l]);
    }
    vec![low, high]
}

pub fn region_plot(r: &LikelihoodRegion, lok: Option<f64>, similar: Vec<SimilarAssessment>) -> RegionPlot {
    RegionPlot {
        polygons: region_polygons(r),
        lok,
        intervals: lok.map(|l| allowed_intervals(r, l)).unwrap_or_default(),
        similar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{case_study_characterizations, trap_structure_questionnaire};

    fn entry(pos: f64) -> PosEntry {
        PosEntry {
            expert_id: "e".into(),
            characterization_id: "c".into(),
            pos,
            lok_used: 0.0,
            scale_kind: PosScaleKind::Expert,
        }
    }

    #[test]
    fn default_region_intervals() {
        let r = LikelihoodRegion::default();
        r.validate().unwrap();
        assert_eq!(allowed_intervals(&r, 0.0), vec![Interval { lo: 0.45, hi: 0.55 }]);
        assert_eq!(
            allowed_intervals(&r, 1.0),
            vec![Interval { lo: 0.0, hi: 0.05 }, Interval { lo: 0.95, hi: 1.0 }]
        );
    }

    #[test]
    fn unconstrained_region_is_everything() {
        let r = LikelihoodRegion::unconstrained();
        r.validate().unwrap();
        for l in [0.0, 0.3, 1.0] {
            assert_eq!(allowed_intervals(&r, l), vec![Interval { lo: 0.0, hi: 1.0 }]);
            for p in [0.0, 0.2, 0.5, 1.0] {
                assert!(validate_pos(&r, l, p).unwrap().accepted);
            }
        }
    }

    #[test]
    fn validation_examples() {
        let r = LikelihoodRegion::default();
        let v = validate_pos(&r, 0.0, 0.5).unwrap();
        assert!(v.accepted);
        assert_eq!(v.nearest, Some(0.5));
        let v = validate_pos(&r, 1.0, 0.5).unwrap();
        assert!(!v.accepted);
        assert_eq!(v.nearest, Some(0.05));
        assert!(validate_pos(&r, 1.0, 1.5).is_err());
    }

    #[test]
    fn projection_prefers_side_toward_half() {
        // intervals [0, 0.05] and [0.95, 1] at lok 1; 0.2 is nearer the lower one
        let r = LikelihoodRegion::default();
        assert_eq!(project(&r, 1.0, 0.2), Some(0.05));
        assert_eq!(project(&r, 1.0, 0.7), Some(0.95));
        // clipped interval of the second piece: tie between 0.3 and 0.7 at 0.5
        let r = LikelihoodRegion {
            inner: vec![[0.0, 0.2], [1.0, 0.2]],
            outer: vec![[0.0, 0.3], [1.0, 0.3]],
        };
        assert_eq!(project(&r, 0.5, 0.5), Some(0.3));
        assert_eq!(project(&r, 0.5, 0.0), Some(0.2));
    }

    #[test]
    fn consensus_examples() {
        let r = LikelihoodRegion::default();
        assert_eq!(consensus_pos(&[entry(0.5)], &r, 0.0).unwrap(), 0.5);
        let got = consensus_pos(&[entry(0.1), entry(0.2), entry(0.9)], &r, 1.0).unwrap();
        assert_eq!(got, 0.05);
        let u = LikelihoodRegion::unconstrained();
        assert_eq!(consensus_pos(&[entry(0.5), entry(0.5)], &u, 0.3).unwrap(), 0.5);
        assert_eq!(consensus_pos(&[], &r, 0.0), Err(PosError::NoEntries));
    }

    #[test]
    fn median_even_count_averages() {
        assert_eq!(median(&[0.1, 0.9, 0.4, 0.2]), Some(0.30000000000000004));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn region_validation_rejects_bad_curves() {
        let r = LikelihoodRegion {
            inner: vec![[0.0, 0.0], [1.0, 0.6]],
            ..Default::default()
        };
        assert!(r.validate().is_err());
        let r = LikelihoodRegion {
            outer: vec![[0.0, 0.3], [1.0, 0.1]],
            ..Default::default()
        };
        assert!(r.validate().is_err());
        let r = LikelihoodRegion {
            outer: vec![[0.0, 0.3], [0.9, 0.4]],
            ..Default::default()
        };
        assert!(r.validate().is_err());
        let r = LikelihoodRegion {
            inner: vec![[0.0, 0.2], [1.0, 0.2]],
            outer: vec![[0.0, 0.1], [1.0, 0.3]],
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn region_json_shape() {
        let json = serde_json::to_value(LikelihoodRegion::default()).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"inner": [[0.0, 0.0], [0.5, 0.0], [1.0, 0.45]], "outer": [[0.0, 0.05], [1.0, 0.5]]})
        );
    }

    #[test]
    fn similar_to_a_is_e() {
        let q = trap_structure_questionnaire();
        let mut rows = case_study_characterizations();
        for c in rows.iter_mut().skip(1) {
            c.status = Status::PeerReviewed;
        }
        let got = similar_assessments(&rows[0], &q, &rows, &BTreeMap::new(), 1).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].characterization_id, "E");
        assert_eq!(got[0].similarity, 0.75);

        let all = similar_assessments(&rows[0], &q, &rows, &BTreeMap::new(), 10).unwrap();
        let ids: Vec<&str> = all.iter().map(|s| s.characterization_id.as_str()).collect();
        assert_eq!(ids, vec!["E", "B", "C", "D"]);

        let only_self = similar_assessments(&rows[0], &q, &rows[..1], &BTreeMap::new(), 3).unwrap();
        assert!(only_self.is_empty());
    }

    #[test]
    fn polygons_cover_the_default_region() {
        let polys = region_polygons(&LikelihoodRegion::default());
        assert_eq!(polys.len(), 2);
        assert_eq!(polys[0][0], [0.45, 0.0]);
        assert!(polys[0].contains(&[0.0, 1.0]));
        assert!(polys[1].contains(&[0.95, 1.0]));
    }
}
