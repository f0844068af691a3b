//! Pipelines over a workspace snapshot. Everything here is a pure function
//! of the workspace; persisting results is left to the caller.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{calibrate_scale, restrict_constraints, CalibrationError, LokScale, ScaleKind};
use crate::comparison::OrderConstraints;
use crate::consensus::{aggregate_weights, solve_consensus_with, CancelToken, ConsensusError, SolveOptions};
use crate::model::{CharId, Status};
use crate::pos::{
    consensus_pos, median, region_plot, similar_assessments, validate_pos, PosEntry, PosError, PosScaleKind,
    PosValidation, RegionPlot, SimilarAssessment,
};
use crate::reference::{
    encode_one_hot, predict_reference_lok, train_reference_model, ReferenceError, ReferenceModel, TrainingExample,
};
use crate::store::{Mutation, StoreError, StoredConsensus, Workspace};

/// Reference LOK used while a risk factor has no peer-reviewed history.
pub const PRIOR_LOK: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Pos(#[from] PosError),
    #[error("{0}")]
    Empty(String),
    #[error("{0}")]
    Ambiguous(String),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

/// Picks the requested risk factor, or the only one the workspace has.
pub fn resolve_risk_factor(ws: &Workspace, requested: Option<&str>) -> Result<String> {
    match requested {
        Some(id) => {
            ws.questionnaire_for(id)?;
            Ok(id.to_string())
        }
        None => {
            let mut ids = ws.risk_factors.keys();
            match (ids.next(), ids.next()) {
                (Some(id), None) => Ok(id.clone()),
                (None, _) => Err(EngineError::Empty("workspace has no risk factors".into())),
                _ => Err(EngineError::Ambiguous(
                    "workspace has several risk factors; name one explicitly".into(),
                )),
            }
        }
    }
}

/// Peer-reviewed characterizations of a risk factor with their final global LOK.
pub fn training_examples(ws: &Workspace, risk_factor_id: &str) -> Result<Vec<TrainingExample>> {
    let q = ws.questionnaire_for(risk_factor_id)?;
    let mut out = Vec::new();
    for c in ws.characterizations_of(risk_factor_id) {
        if c.status != Status::PeerReviewed {
            continue;
        }
        if let Some(lok) = ws.records.get(&c.id).and_then(|r| r.global_lok) {
            out.push(TrainingExample {
                characterization_id: c.id.clone(),
                vector: encode_one_hot(c, q)?,
                lok,
            });
        }
    }
    Ok(out)
}

/// The stored model when it is current, otherwise a freshly trained one.
/// `None` when there is nothing to train on.
pub fn reference_model(ws: &Workspace, risk_factor_id: &str) -> Result<Option<ReferenceModel>> {
    if !ws.reference_is_stale(risk_factor_id) {
        return Ok(ws.reference_models.get(risk_factor_id).map(|m| m.model.clone()));
    }
    let examples = training_examples(ws, risk_factor_id)?;
    if examples.is_empty() {
        return Ok(None);
    }
    Ok(Some(train_reference_model(&examples)?))
}

/// Mutation caching a retrained model, if the stored one is stale.
pub fn retrain_mutation(ws: &Workspace, risk_factor_id: &str) -> Result<Option<Mutation>> {
    if !ws.reference_is_stale(risk_factor_id) {
        return Ok(None);
    }
    let Some(model) = reference_model(ws, risk_factor_id)? else {
        return Ok(None);
    };
    Ok(Some(Mutation::StoreReferenceModel {
        risk_factor_id: risk_factor_id.to_string(),
        trained_at_revision: ws.peer_review_revision.get(risk_factor_id).copied().unwrap_or(0),
        model,
    }))
}

pub fn reference_scale(ws: &Workspace, risk_factor_id: &str) -> Result<LokScale> {
    let q = ws.questionnaire_for(risk_factor_id)?;
    let model = reference_model(ws, risk_factor_id)?;
    let mut scores = BTreeMap::new();
    for c in ws.characterizations_of(risk_factor_id) {
        let lok = match &model {
            Some(m) => predict_reference_lok(m, &encode_one_hot(c, q)?)?,
            None => PRIOR_LOK,
        };
        scores.insert(c.id.clone(), lok);
    }
    Ok(LokScale {
        kind: ScaleKind::Reference,
        scores,
        objective: 0.0,
    })
}

fn constraints_within(c: &OrderConstraints, reference: &LokScale) -> OrderConstraints {
    let ids: BTreeSet<CharId> = reference.scores.keys().cloned().collect();
    restrict_constraints(c, &ids)
}

pub fn expert_constraints(ws: &Workspace, risk_factor_id: &str, expert_id: &str) -> Result<OrderConstraints> {
    if !ws.experts.contains_key(expert_id) {
        return Err(StoreError::NotFound {
            kind: "expert",
            id: expert_id.to_string(),
        }
        .into());
    }
    Ok(ws
        .graph(risk_factor_id, expert_id)
        .map(|g| g.extract_gt_eq())
        .unwrap_or_default())
}

/// Reference estimates calibrated to one expert's comparisons.
pub fn expert_scale(ws: &Workspace, risk_factor_id: &str, expert_id: &str) -> Result<LokScale> {
    let reference = reference_scale(ws, risk_factor_id)?;
    let constraints = expert_constraints(ws, risk_factor_id, expert_id)?;
    Ok(calibrate_scale(
        ScaleKind::Expert {
            expert_id: expert_id.to_string(),
        },
        &reference.scores,
        &constraints_within(&constraints, &reference),
        ws.settings.t,
    )?)
}

/// Characterizations mentioned by at least one expert comparison.
pub fn consensus_ids(ws: &Workspace, risk_factor_id: &str) -> BTreeSet<CharId> {
    let mut ids = BTreeSet::new();
    for g in ws.graphs.get(risk_factor_id).into_iter().flat_map(|m| m.values()) {
        for r in g.closure.relations() {
            ids.insert(r.a);
            ids.insert(r.b);
        }
    }
    ids
}

/// Solves the consensus from scratch. `None` when nobody compared anything.
pub fn solve_workspace_consensus(
    ws: &Workspace,
    risk_factor_id: &str,
    cancel: &CancelToken,
) -> Result<Option<StoredConsensus>> {
    ws.questionnaire_for(risk_factor_id)?;
    let ids = consensus_ids(ws, risk_factor_id);
    if ids.is_empty() {
        return Ok(None);
    }
    let closures = ws
        .graphs
        .get(risk_factor_id)
        .into_iter()
        .flat_map(|m| m.values())
        .map(|g| &g.closure);
    let weights = aggregate_weights(closures, &ids);
    let opts = SolveOptions {
        exact_bound: ws.settings.exact_bound,
        cancel: cancel.clone(),
    };
    let consensus = solve_consensus_with(&weights, &opts)?;
    Ok(Some(StoredConsensus {
        computed_at_revision: ws.comparison_revision.get(risk_factor_id).copied().unwrap_or(0),
        weights,
        consensus,
    }))
}

/// The stored consensus if it matches the current comparisons, else a new solve.
pub fn current_consensus(
    ws: &Workspace,
    risk_factor_id: &str,
    cancel: &CancelToken,
) -> Result<Option<StoredConsensus>> {
    if !ws.consensus_is_stale(risk_factor_id) {
        return Ok(ws.consensus.get(risk_factor_id).cloned());
    }
    solve_workspace_consensus(ws, risk_factor_id, cancel)
}

/// Reference estimates calibrated to the consensus ordering. Only pairs
/// that some expert actually compared constrain the scale; the ordering
/// the solver picks for uncompared pairs is a tie-break, not an opinion.
pub fn global_scale(ws: &Workspace, risk_factor_id: &str, cancel: &CancelToken) -> Result<LokScale> {
    let reference = reference_scale(ws, risk_factor_id)?;
    let constraints = match current_consensus(ws, risk_factor_id, cancel)? {
        Some(c) => c.consensus.supported_constraints(&c.weights),
        None => OrderConstraints::default(),
    };
    Ok(calibrate_scale(
        ScaleKind::Global,
        &reference.scores,
        &constraints_within(&constraints, &reference),
        ws.settings.t,
    )?)
}

fn lok_of(scale: &LokScale, characterization_id: &str) -> Result<f64> {
    scale.scores.get(characterization_id).copied().ok_or_else(|| {
        StoreError::NotFound {
            kind: "characterization",
            id: characterization_id.to_string(),
        }
        .into()
    })
}

/// Builds an expert's POS entry at the LOK of the requested scale.
pub fn pos_entry(
    ws: &Workspace,
    expert_id: &str,
    characterization_id: &str,
    pos: f64,
    scale_kind: PosScaleKind,
) -> Result<PosEntry> {
    let c = ws.characterization(characterization_id)?;
    let scale = match scale_kind {
        PosScaleKind::Expert => expert_scale(ws, &c.risk_factor_id, expert_id)?,
        PosScaleKind::Global => global_scale(ws, &c.risk_factor_id, &CancelToken::new())?,
    };
    Ok(PosEntry {
        expert_id: expert_id.to_string(),
        characterization_id: characterization_id.to_string(),
        pos,
        lok_used: lok_of(&scale, characterization_id)?,
        scale_kind,
    })
}

pub fn validate_entry(ws: &Workspace, entry: &PosEntry) -> Result<PosValidation> {
    Ok(validate_pos(&ws.settings.region, entry.lok_used, entry.pos)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosSuggestion {
    pub characterization_id: CharId,
    pub global_lok: f64,
    pub median: f64,
    pub suggested: f64,
    pub entries: Vec<PosEntry>,
}

/// Peer-review suggestion: projected median of the experts' entries.
pub fn suggest_consensus_pos(ws: &Workspace, characterization_id: &str, cancel: &CancelToken) -> Result<PosSuggestion> {
    let c = ws.characterization(characterization_id)?;
    let entries: Vec<PosEntry> = ws
        .pos_entries
        .iter()
        .filter(|e| e.characterization_id == characterization_id)
        .cloned()
        .collect();
    let global = global_scale(ws, &c.risk_factor_id, cancel)?;
    let global_lok = lok_of(&global, characterization_id)?;
    let values: Vec<f64> = entries.iter().map(|e| e.pos).collect();
    let suggested = consensus_pos(&entries, &ws.settings.region, global_lok)?;
    Ok(PosSuggestion {
        characterization_id: characterization_id.to_string(),
        global_lok,
        median: median(&values).expect("entries are non-empty"),
        suggested,
        entries,
    })
}

pub fn similar(ws: &Workspace, characterization_id: &str, k: usize) -> Result<Vec<SimilarAssessment>> {
    let target = ws.characterization(characterization_id)?;
    let q = ws.questionnaire_for(&target.risk_factor_id)?;
    Ok(similar_assessments(target, q, ws.characterizations.values(), &ws.records, k)?)
}

/// Region geometry at `lok` plus similar assessments of a characterization.
pub fn plot_data(ws: &Workspace, lok: Option<f64>, characterization_id: Option<&str>, k: usize) -> Result<RegionPlot> {
    if let Some(l) = lok {
        crate::model::check_score("lok", l).map_err(PosError::from)?;
    }
    let similar = match characterization_id {
        Some(id) => similar(ws, id, k)?,
        None => Vec::new(),
    };
    Ok(region_plot(&ws.settings.region, lok, similar))
}
