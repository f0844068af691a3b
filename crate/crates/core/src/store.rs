//! Versioned workspace persistence.
//!
//! A workspace is one JSON document. Every change is a [`Mutation`] applied
//! with [`Workspace::commit`] against the version the caller last saw; an
//! accepted commit bumps the version by exactly one. [`FileStore`] keeps the
//! document at `<root>/<id>.json` and appends each committed mutation to
//! `<root>/<id>.log.jsonl`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::DEFAULT_THRESHOLD;
use crate::comparison::{AddOutcome, ComparisonError, ComparisonGraph, Relation};
use crate::consensus::{ConsensusRelations, PairWeights, DEFAULT_EXACT_BOUND};
use crate::model::{
    validate_characterization, AssessmentRecord, CharId, Characterization, Expert, ExpertId, ModelError,
    Questionnaire, RiskFactor, Status,
};
use crate::pos::{LikelihoodRegion, PosEntry, PosError, PosScaleKind};
use crate::reference::{layout_id, ReferenceModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("version conflict: expected {expected}, current is {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error(transparent)]
    Comparison(#[from] ComparisonError),
    #[error(transparent)]
    Pos(#[from] PosError),
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{kind} `{id}` already exists")]
    AlreadyExists { kind: &'static str, id: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse { path: PathBuf, offset: usize, message: String },
    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u32),
}

impl From<ModelError> for StoreError {
    fn from(e: ModelError) -> Self {
        StoreError::ValidationFailed(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    /// Minimum LOK gap for a strict comparison.
    pub t: f64,
    pub region: LikelihoodRegion,
    pub exact_bound: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            t: DEFAULT_THRESHOLD,
            region: LikelihoodRegion::default(),
            exact_bound: DEFAULT_EXACT_BOUND,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), StoreError> {
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(StoreError::ValidationFailed(format!("threshold t = {} is outside (0, 1]", self.t)));
        }
        self.region.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReference {
    /// Peer-review revision of the risk factor the model was trained at.
    pub trained_at_revision: u64,
    pub model: ReferenceModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredConsensus {
    /// Comparison revision of the risk factor the solve used.
    pub computed_at_revision: u64,
    pub weights: PairWeights,
    pub consensus: ConsensusRelations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub schema_version: u32,
    pub id: String,
    pub version: u64,
    #[serde(default)]
    pub settings: Settings,
    #[serde(default)]
    pub risk_factors: BTreeMap<String, RiskFactor>,
    /// Keyed by questionnaire id.
    #[serde(default)]
    pub questionnaires: BTreeMap<String, Questionnaire>,
    #[serde(default)]
    pub characterizations: BTreeMap<CharId, Characterization>,
    #[serde(default)]
    pub experts: BTreeMap<ExpertId, Expert>,
    /// risk factor -> expert -> comparisons.
    #[serde(default)]
    pub graphs: BTreeMap<String, BTreeMap<ExpertId, ComparisonGraph>>,
    #[serde(default)]
    pub pos_entries: Vec<PosEntry>,
    #[serde(default)]
    pub records: BTreeMap<CharId, AssessmentRecord>,
    /// Bumped per risk factor whenever a peer-reviewed record is stored.
    #[serde(default)]
    pub peer_review_revision: BTreeMap<String, u64>,
    /// Bumped per risk factor whenever any expert's comparisons change.
    #[serde(default)]
    pub comparison_revision: BTreeMap<String, u64>,
    #[serde(default)]
    pub reference_models: BTreeMap<String, StoredReference>,
    #[serde(default)]
    pub consensus: BTreeMap<String, StoredConsensus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    SetSettings {
        settings: Settings,
    },
    PutRiskFactor {
        risk_factor: RiskFactor,
    },
    PutQuestionnaire {
        questionnaire: Questionnaire,
    },
    PutCharacterization {
        characterization: Characterization,
    },
    SetStatus {
        characterization_id: CharId,
        status: Status,
    },
    PutExpert {
        expert: Expert,
    },
    /// Historical peer-reviewed assessment with its final scores.
    ImportReviewed {
        characterization: Characterization,
        record: AssessmentRecord,
    },
    AddComparison {
        expert_id: ExpertId,
        risk_factor_id: String,
        relation: Relation,
    },
    RemoveComparison {
        expert_id: ExpertId,
        risk_factor_id: String,
        comparison_id: u64,
    },
    StoreReferenceModel {
        risk_factor_id: String,
        trained_at_revision: u64,
        model: ReferenceModel,
    },
    StoreConsensus {
        risk_factor_id: String,
        result: StoredConsensus,
    },
    AddPosEntry {
        entry: PosEntry,
    },
    /// Final peer-review POS; marks the characterization peer-reviewed.
    RecordConsensusPos {
        characterization_id: CharId,
        pos: f64,
        global_lok: f64,
    },
}

/// Extra result of a mutation beyond the new workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Applied {
    Comparison(AddOutcome),
    Done {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub version: u64,
    pub mutation: Mutation,
}

/// Bulk import document: everything is turned into ordinary mutations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportBundle {
    #[serde(default)]
    pub settings: Option<Settings>,
    #[serde(default)]
    pub questionnaires: Vec<Questionnaire>,
    #[serde(default)]
    pub risk_factors: Vec<RiskFactor>,
    #[serde(default)]
    pub experts: Vec<Expert>,
    #[serde(default)]
    pub characterizations: Vec<Characterization>,
    #[serde(default)]
    pub reviewed: Vec<ReviewedAssessment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewedAssessment {
    pub characterization: Characterization,
    pub record: AssessmentRecord,
}

impl ImportBundle {
    /// Mutations in dependency order: settings, questionnaires, risk
    /// factors, experts, reviewed history, then open characterizations.
    pub fn mutations(&self) -> Vec<Mutation> {
        let mut out = Vec::new();
        if let Some(settings) = &self.settings {
            out.push(Mutation::SetSettings {
                settings: settings.clone(),
            });
        }
        out.extend(self.questionnaires.iter().map(|q| Mutation::PutQuestionnaire {
            questionnaire: q.clone(),
        }));
        out.extend(self.risk_factors.iter().map(|r| Mutation::PutRiskFactor {
            risk_factor: r.clone(),
        }));
        out.extend(self.experts.iter().map(|e| Mutation::PutExpert { expert: e.clone() }));
        out.extend(self.reviewed.iter().map(|r| Mutation::ImportReviewed {
            characterization: r.characterization.clone(),
            record: r.record.clone(),
        }));
        out.extend(self.characterizations.iter().map(|c| Mutation::PutCharacterization {
            characterization: c.clone(),
        }));
        out
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, StoreError> {
    Err(StoreError::ValidationFailed(msg.into()))
}

/// Ids become file names, so they are restricted to a safe alphabet.
pub fn valid_workspace_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !id.starts_with('.')
}

impl Workspace {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            version: 0,
            settings: Settings::default(),
            risk_factors: BTreeMap::new(),
            questionnaires: BTreeMap::new(),
            characterizations: BTreeMap::new(),
            experts: BTreeMap::new(),
            graphs: BTreeMap::new(),
            pos_entries: Vec::new(),
            records: BTreeMap::new(),
            peer_review_revision: BTreeMap::new(),
            comparison_revision: BTreeMap::new(),
            reference_models: BTreeMap::new(),
            consensus: BTreeMap::new(),
        }
    }

    pub fn questionnaire_for(&self, risk_factor_id: &str) -> Result<&Questionnaire, StoreError> {
        let rf = self.risk_factors.get(risk_factor_id).ok_or_else(|| StoreError::NotFound {
            kind: "risk factor",
            id: risk_factor_id.to_string(),
        })?;
        self.questionnaires
            .get(&rf.questionnaire_id)
            .ok_or_else(|| StoreError::NotFound {
                kind: "questionnaire",
                id: rf.questionnaire_id.clone(),
            })
    }

    pub fn characterization(&self, id: &str) -> Result<&Characterization, StoreError> {
        self.characterizations.get(id).ok_or_else(|| StoreError::NotFound {
            kind: "characterization",
            id: id.to_string(),
        })
    }

    pub fn characterizations_of<'a>(&'a self, risk_factor_id: &'a str) -> impl Iterator<Item = &'a Characterization> + 'a {
        self.characterizations
            .values()
            .filter(move |c| c.risk_factor_id == risk_factor_id)
    }

    pub fn graph(&self, risk_factor_id: &str, expert_id: &str) -> Option<&ComparisonGraph> {
        self.graphs.get(risk_factor_id).and_then(|g| g.get(expert_id))
    }

    pub fn reference_is_stale(&self, risk_factor_id: &str) -> bool {
        let rev = self.peer_review_revision.get(risk_factor_id).copied().unwrap_or(0);
        self.reference_models
            .get(risk_factor_id)
            .is_none_or(|m| m.trained_at_revision != rev)
    }

    pub fn consensus_is_stale(&self, risk_factor_id: &str) -> bool {
        let rev = self.comparison_revision.get(risk_factor_id).copied().unwrap_or(0);
        self.consensus
            .get(risk_factor_id)
            .is_none_or(|c| c.computed_at_revision != rev)
    }

    /// Optimistic commit: fails unless `expected_version` is current.
    pub fn commit(&self, expected_version: u64, m: &Mutation) -> Result<(Workspace, Applied), StoreError> {
        if expected_version != self.version {
            return Err(StoreError::VersionConflict {
                expected: expected_version,
                actual: self.version,
            });
        }
        let (mut next, applied) = self.apply(m)?;
        next.version = self.version + 1;
        Ok((next, applied))
    }

    fn check_characterization(&self, c: &Characterization) -> Result<(), StoreError> {
        let q = self.questionnaire_for(&c.risk_factor_id)?;
        let violations = validate_characterization(c, q);
        if let Some(v) = violations.first() {
            return invalid(format!("characterization `{}`: {v}", c.id));
        }
        Ok(())
    }

    fn mutable_characterization(&self, id: &str) -> Result<&Characterization, StoreError> {
        let c = self.characterization(id)?;
        if c.status == Status::PeerReviewed {
            return invalid(format!("characterization `{id}` is peer-reviewed and immutable"));
        }
        Ok(c)
    }

    fn bump(map: &mut BTreeMap<String, u64>, key: &str) {
        *map.entry(key.to_string()).or_insert(0) += 1;
    }

    fn apply(&self, m: &Mutation) -> Result<(Workspace, Applied), StoreError> {
        let mut ws = self.clone();
        let mut applied = Applied::Done {};
        match m {
            Mutation::SetSettings { settings } => {
                settings.validate()?;
                ws.settings = settings.clone();
            }
            Mutation::PutRiskFactor { risk_factor } => {
                if let Some(old) = self.risk_factors.get(&risk_factor.id) {
                    if old.questionnaire_id != risk_factor.questionnaire_id
                        && self.characterizations_of(&risk_factor.id).next().is_some()
                    {
                        return invalid(format!(
                            "risk factor `{}` already has characterizations; its questionnaire cannot change",
                            risk_factor.id
                        ));
                    }
                }
                ws.risk_factors.insert(risk_factor.id.clone(), risk_factor.clone());
            }
            Mutation::PutQuestionnaire { questionnaire } => {
                questionnaire.validate()?;
                if let Some(old) = self.questionnaires.get(&questionnaire.id) {
                    let in_use = self
                        .characterizations
                        .values()
                        .any(|c| c.risk_factor_id == old.risk_factor_id);
                    if in_use && layout_id(old) != layout_id(questionnaire) {
                        return invalid(format!(
                            "questionnaire `{}` is in use; its question and option layout cannot change",
                            questionnaire.id
                        ));
                    }
                }
                ws.questionnaires.insert(questionnaire.id.clone(), questionnaire.clone());
            }
            Mutation::PutCharacterization { characterization: c } => {
                if c.status == Status::PeerReviewed {
                    return invalid("peer-reviewed characterizations are imported with their record");
                }
                if let Some(old) = self.characterizations.get(&c.id) {
                    if old.status == Status::PeerReviewed {
                        return invalid(format!("characterization `{}` is peer-reviewed and immutable", c.id));
                    }
                    if old.risk_factor_id != c.risk_factor_id {
                        return invalid(format!("characterization `{}` cannot change risk factor", c.id));
                    }
                    if old.status != c.status && !old.status.can_advance_to(c.status) {
                        return Err(ModelError::InvalidStatusTransition {
                            from: old.status,
                            to: c.status,
                        }
                        .into());
                    }
                }
                self.check_characterization(c)?;
                ws.characterizations.insert(c.id.clone(), c.clone());
            }
            Mutation::SetStatus {
                characterization_id,
                status,
            } => {
                let c = self.mutable_characterization(characterization_id)?;
                if !c.status.can_advance_to(*status) {
                    return Err(ModelError::InvalidStatusTransition {
                        from: c.status,
                        to: *status,
                    }
                    .into());
                }
                if *status == Status::PeerReviewed {
                    let has_scores = self
                        .records
                        .get(characterization_id)
                        .is_some_and(|r| r.global_lok.is_some() && r.consensus_pos.is_some());
                    if !has_scores {
                        return invalid("peer review needs a recorded global LOK and consensus POS");
                    }
                    Self::bump(&mut ws.peer_review_revision, &c.risk_factor_id);
                }
                let entry = ws.characterizations.get_mut(characterization_id).expect("checked");
                entry.status = *status;
            }
            Mutation::PutExpert { expert } => {
                if expert.id.is_empty() {
                    return invalid("expert id must not be empty");
                }
                ws.experts.insert(expert.id.clone(), expert.clone());
            }
            Mutation::ImportReviewed { characterization: c, record } => {
                if c.status != Status::PeerReviewed {
                    return invalid("imported assessments must be peer-reviewed");
                }
                if let Some(old) = self.characterizations.get(&c.id) {
                    if old.status == Status::PeerReviewed {
                        return Err(StoreError::AlreadyExists {
                            kind: "peer-reviewed characterization",
                            id: c.id.clone(),
                        });
                    }
                }
                if record.characterization_id != c.id {
                    return invalid("record belongs to a different characterization");
                }
                record.validate()?;
                if record.global_lok.is_none() {
                    return invalid(format!("peer-reviewed `{}` needs a global LOK", c.id));
                }
                self.check_characterization(c)?;
                ws.characterizations.insert(c.id.clone(), c.clone());
                ws.records.insert(c.id.clone(), record.clone());
                Self::bump(&mut ws.peer_review_revision, &c.risk_factor_id);
            }
            Mutation::AddComparison {
                expert_id,
                risk_factor_id,
                relation,
            } => {
                self.check_comparison_scope(expert_id, risk_factor_id)?;
                for end in [&relation.a, &relation.b] {
                    let c = self.characterization(end)?;
                    if &c.risk_factor_id != risk_factor_id {
                        return invalid(format!("`{end}` belongs to another risk factor"));
                    }
                }
                let graph = self
                    .graph(risk_factor_id, expert_id)
                    .cloned()
                    .unwrap_or_default()
                    .with_node(relation.a.clone())
                    .with_node(relation.b.clone());
                let (graph, outcome) = graph.add_comparison(relation.clone())?;
                ws.graphs
                    .entry(risk_factor_id.clone())
                    .or_default()
                    .insert(expert_id.clone(), graph);
                if matches!(outcome, AddOutcome::Added { .. }) {
                    Self::bump(&mut ws.comparison_revision, risk_factor_id);
                }
                applied = Applied::Comparison(outcome);
            }
            Mutation::RemoveComparison {
                expert_id,
                risk_factor_id,
                comparison_id,
            } => {
                self.check_comparison_scope(expert_id, risk_factor_id)?;
                let graph = self
                    .graph(risk_factor_id, expert_id)
                    .ok_or(ComparisonError::UnknownComparison(*comparison_id))?;
                let graph = graph.remove_comparison(*comparison_id)?;
                ws.graphs
                    .entry(risk_factor_id.clone())
                    .or_default()
                    .insert(expert_id.clone(), graph);
                Self::bump(&mut ws.comparison_revision, risk_factor_id);
            }
            Mutation::StoreReferenceModel {
                risk_factor_id,
                trained_at_revision,
                model,
            } => {
                let q = self.questionnaire_for(risk_factor_id)?;
                if model.layout_id != layout_id(q) {
                    return invalid("model was trained on a different questionnaire layout");
                }
                ws.reference_models.insert(
                    risk_factor_id.clone(),
                    StoredReference {
                        trained_at_revision: *trained_at_revision,
                        model: model.clone(),
                    },
                );
            }
            Mutation::StoreConsensus { risk_factor_id, result } => {
                if !self.risk_factors.contains_key(risk_factor_id) {
                    return Err(StoreError::NotFound {
                        kind: "risk factor",
                        id: risk_factor_id.clone(),
                    });
                }
                ws.consensus.insert(risk_factor_id.clone(), result.clone());
            }
            Mutation::AddPosEntry { entry } => {
                if !self.experts.contains_key(&entry.expert_id) {
                    return Err(StoreError::NotFound {
                        kind: "expert",
                        id: entry.expert_id.clone(),
                    });
                }
                let c = self.mutable_characterization(&entry.characterization_id)?;
                entry.check(&self.settings.region)?;
                let record = ws
                    .records
                    .entry(c.id.clone())
                    .or_insert_with(|| AssessmentRecord::new(c.id.clone()));
                record.expert_pos.insert(entry.expert_id.clone(), entry.pos);
                match entry.scale_kind {
                    PosScaleKind::Expert => {
                        record.expert_lok.insert(entry.expert_id.clone(), entry.lok_used);
                    }
                    PosScaleKind::Global => record.global_lok = Some(entry.lok_used),
                }
                record.validate()?;
                ws.pos_entries
                    .retain(|e| !(e.expert_id == entry.expert_id && e.characterization_id == entry.characterization_id));
                ws.pos_entries.push(entry.clone());
                let stored = ws.characterizations.get_mut(&c.id).expect("checked");
                if stored.status == Status::Draft {
                    stored.status = Status::Assessed;
                }
            }
            Mutation::RecordConsensusPos {
                characterization_id,
                pos,
                global_lok,
            } => {
                let c = self.mutable_characterization(characterization_id)?;
                let v = crate::pos::validate_pos(&self.settings.region, *global_lok, *pos)?;
                if !v.accepted {
                    return Err(PosError::OutsideRegion {
                        lok: *global_lok,
                        pos: *pos,
                        nearest: v.nearest.unwrap_or(*pos),
                    }
                    .into());
                }
                if !self.pos_entries.iter().any(|e| &e.characterization_id == characterization_id) {
                    return invalid(format!("`{characterization_id}` has no expert POS entries to review"));
                }
                let record = ws
                    .records
                    .entry(c.id.clone())
                    .or_insert_with(|| AssessmentRecord::new(c.id.clone()));
                record.global_lok = Some(*global_lok);
                record.consensus_pos = Some(*pos);
                record.validate()?;
                let stored = ws.characterizations.get_mut(&c.id).expect("checked");
                stored.status = Status::PeerReviewed;
                let rf = stored.risk_factor_id.clone();
                Self::bump(&mut ws.peer_review_revision, &rf);
            }
        }
        Ok((ws, applied))
    }

    fn check_comparison_scope(&self, expert_id: &str, risk_factor_id: &str) -> Result<(), StoreError> {
        if !self.experts.contains_key(expert_id) {
            return Err(StoreError::NotFound {
                kind: "expert",
                id: expert_id.to_string(),
            });
        }
        if !self.risk_factors.contains_key(risk_factor_id) {
            return Err(StoreError::NotFound {
                kind: "risk factor",
                id: risk_factor_id.to_string(),
            });
        }
        Ok(())
    }

    /// Canonical JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workspace serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, StoreError> {
        let ws: Workspace = serde_json::from_str(text).map_err(|e| parse_error(text, path, &e))?;
        if ws.schema_version != SCHEMA_VERSION {
            return Err(StoreError::UnsupportedSchema(ws.schema_version));
        }
        Ok(ws)
    }
}

/// Converts serde's 1-based line/column into a byte offset.
fn parse_error(text: &str, path: &Path, e: &serde_json::Error) -> StoreError {
    if e.is_eof() {
        return StoreError::Parse {
            path: path.to_path_buf(),
            offset: text.len(),
            message: e.to_string(),
        };
    }
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if i + 1 == e.line() {
            offset += e.column().saturating_sub(1).min(line.len());
            break;
        }
        offset += line.len();
    }
    StoreError::Parse {
        path: path.to_path_buf(),
        offset: offset.min(text.len()),
        message: e.to_string(),
    }
}

/// Directory-backed store: one JSON document and one mutation log per workspace.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn check_id(id: &str) -> Result<(), StoreError> {
        if valid_workspace_id(id) {
            Ok(())
        } else {
            invalid(format!("invalid workspace id `{id}`"))
        }
    }

    pub fn document_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.json"))
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.log.jsonl"))
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_workspace_id(id) && self.document_path(id).exists()
    }

    pub fn create(&self, ws: &Workspace) -> Result<(), StoreError> {
        Self::check_id(&ws.id)?;
        if self.exists(&ws.id) {
            return Err(StoreError::AlreadyExists {
                kind: "workspace",
                id: ws.id.clone(),
            });
        }
        self.save(ws)
    }

    pub fn load(&self, id: &str) -> Result<Workspace, StoreError> {
        Self::check_id(id)?;
        let path = self.document_path(id);
        let text = fs::read_to_string(&path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound {
                    kind: "workspace",
                    id: id.to_string(),
                }
            } else {
                StoreError::Io {
                    path: path.clone(),
                    source,
                }
            }
        })?;
        Workspace::from_json(&text, &path)
    }

    /// Writes the document through a temporary file and rename.
    pub fn save(&self, ws: &Workspace) -> Result<(), StoreError> {
        Self::check_id(&ws.id)?;
        let path = self.document_path(&ws.id);
        let tmp = self.root.join(format!(".{}.json.tmp", ws.id));
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        fs::write(&tmp, ws.to_json()).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    /// Loads, commits at `expected_version`, saves and appends to the log.
    pub fn commit(&self, id: &str, expected_version: u64, m: &Mutation) -> Result<(Workspace, Applied), StoreError> {
        let current = self.load(id)?;
        let (next, applied) = current.commit(expected_version, m)?;
        self.save(&next)?;
        self.append_log(
            id,
            &LogLine {
                version: next.version,
                mutation: m.clone(),
            },
        )?;
        Ok((next, applied))
    }

    fn append_log(&self, id: &str, line: &LogLine) -> Result<(), StoreError> {
        let path = self.log_path(id);
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        let mut text = serde_json::to_string(line).expect("log line serializes");
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(io)
    }

    pub fn read_log(&self, id: &str) -> Result<Vec<LogLine>, StoreError> {
        Self::check_id(id)?;
        let path = self.log_path(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        let mut out = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            if !line.trim().is_empty() {
                let parsed: LogLine = serde_json::from_str(line).map_err(|e| {
                    let StoreError::Parse { offset: inner, message, .. } = parse_error(line, &path, &e) else {
                        unreachable!()
                    };
                    StoreError::Parse {
                        path: path.clone(),
                        offset: offset + inner,
                        message,
                    }
                })?;
                out.push(parsed);
            }
            offset += line.len();
        }
        Ok(out)
    }
}
