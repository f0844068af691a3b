//! Workspace operations shared by the HTTP handlers and the CLI. Every
//! change goes through a store commit; reads are pure functions of the
//! loaded workspace version.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use lokrisk_core::calibration::LokScale;
use lokrisk_core::comparison::{AddOutcome, AssertedComparison};
use lokrisk_core::consensus::CancelToken;
use lokrisk_core::engine::{self, EngineError, PosSuggestion};
use lokrisk_core::model::{AssessmentRecord, Characterization, Expert, Questionnaire, RiskFactor};
use lokrisk_core::pos::{PosEntry, PosError, PosScaleKind, PosValidation, RegionPlot, SimilarAssessment};
use lokrisk_core::reference::ModelMetadata;
use lokrisk_core::store::{
    valid_workspace_id, Applied, FileStore, ImportBundle, LogLine, Mutation, Settings, StoreError, StoredConsensus,
    Workspace,
};
use lokrisk_core::Relation;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::AppError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

/// Attempts at storing a derived result before giving up on a busy workspace.
const CACHE_RETRIES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSummary {
    pub id: String,
    pub version: u64,
    pub settings: Settings,
    pub risk_factors: Vec<String>,
    pub experts: Vec<String>,
    pub characterizations: usize,
}

impl From<&Workspace> for WorkspaceSummary {
    fn from(ws: &Workspace) -> Self {
        Self {
            id: ws.id.clone(),
            version: ws.version,
            settings: ws.settings.clone(),
            risk_factors: ws.risk_factors.keys().cloned().collect(),
            experts: ws.experts.keys().cloned().collect(),
            characterizations: ws.characterizations.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResponse {
    pub version: u64,
    pub expert_id: String,
    pub risk_factor_id: String,
    pub outcome: Option<AddOutcome>,
    pub asserted: Vec<AssertedComparison>,
    /// Every relation implied by the asserted comparisons.
    pub inferred: Vec<Relation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResponse {
    pub version: u64,
    pub risk_factor_id: String,
    pub cached: bool,
    #[serde(flatten)]
    pub result: StoredConsensus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResponse {
    pub version: u64,
    pub risk_factor_id: String,
    /// `None` while there is no peer-reviewed history.
    pub model: Option<ModelMetadata>,
    pub stale: bool,
    pub scale: LokScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosEntryRequest {
    #[serde(default)]
    pub expected_version: Option<u64>,
    pub expert_id: String,
    pub characterization_id: String,
    pub pos: f64,
    #[serde(default = "expert_scale_kind")]
    pub scale_kind: PosScaleKind,
}

fn expert_scale_kind() -> PosScaleKind {
    PosScaleKind::Expert
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosEntryResponse {
    pub version: u64,
    pub entry: PosEntry,
    pub validation: PosValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosConsensusResponse {
    pub version: u64,
    pub suggestion: PosSuggestion,
    /// Present once a final value has been recorded.
    pub record: Option<AssessmentRecord>,
}

/// Storage plus per-workspace write serialization.
pub struct Service {
    store: FileStore,
    defaults: Settings,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Service {
    pub fn new(store: FileStore, defaults: Settings) -> Self {
        Self {
            store,
            defaults,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Self::new(FileStore::open(&cfg.storage_path)?, cfg.settings()))
    }

    pub fn store(&self) -> &FileStore {
        &self.store
    }

    pub fn defaults(&self) -> &Settings {
        &self.defaults
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    pub fn load(&self, id: &str) -> Result<Workspace> {
        Ok(self.store.load(id)?)
    }

    pub fn create(&self, id: &str, settings: Option<Settings>) -> Result<WorkspaceSummary> {
        if !valid_workspace_id(id) {
            return Err(AppError::BadRequest(format!(
                "workspace id `{id}` must be 1-128 characters of [A-Za-z0-9._-] not starting with '.'"
            )));
        }
        let settings = settings.unwrap_or_else(|| self.defaults.clone());
        settings.validate()?;
        let mut ws = Workspace::new(id);
        ws.settings = settings;
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.store.create(&ws)?;
        Ok((&ws).into())
    }

    /// Commits `mutations` in order. `expected` is checked against the
    /// version before the first one; without it the current version is used.
    pub fn commit_all(&self, id: &str, expected: Option<u64>, mutations: &[Mutation]) -> Result<(Workspace, Vec<Applied>)> {
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut ws = self.store.load(id)?;
        if let Some(v) = expected {
            if v != ws.version {
                return Err(StoreError::VersionConflict {
                    expected: v,
                    actual: ws.version,
                }
                .into());
            }
        }
        // validate the whole batch in memory before touching the file
        let mut staged = ws.clone();
        for m in mutations {
            staged = staged.commit(staged.version, m)?.0;
        }
        let mut applied = Vec::with_capacity(mutations.len());
        for m in mutations {
            let (next, a) = self.store.commit(id, ws.version, m)?;
            ws = next;
            applied.push(a);
        }
        Ok((ws, applied))
    }

    pub fn commit(&self, id: &str, expected: Option<u64>, m: Mutation) -> Result<(Workspace, Applied)> {
        let (ws, mut applied) = self.commit_all(id, expected, std::slice::from_ref(&m))?;
        Ok((ws, applied.pop().expect("one mutation")))
    }

    pub fn import(&self, id: &str, expected: Option<u64>, bundle: &ImportBundle) -> Result<WorkspaceSummary> {
        let (ws, _) = self.commit_all(id, expected, &bundle.mutations())?;
        Ok((&ws).into())
    }

    /// Stores a questionnaire and its risk factor; a risk factor named
    /// after the questionnaire's is created when none is given or known.
    pub fn put_questionnaire(
        &self,
        id: &str,
        expected: Option<u64>,
        questionnaire: Questionnaire,
        risk_factor: Option<RiskFactor>,
    ) -> Result<WorkspaceSummary> {
        let ws = self.load(id)?;
        let rf = match risk_factor {
            Some(rf) => Some(rf),
            None if !ws.risk_factors.contains_key(&questionnaire.risk_factor_id) => Some(RiskFactor {
                id: questionnaire.risk_factor_id.clone(),
                name: questionnaire.risk_factor_id.clone(),
                questionnaire_id: questionnaire.id.clone(),
            }),
            None => None,
        };
        let mut muts = vec![Mutation::PutQuestionnaire { questionnaire }];
        muts.extend(rf.map(|risk_factor| Mutation::PutRiskFactor { risk_factor }));
        let (ws, _) = self.commit_all(id, expected.or(Some(ws.version)), &muts)?;
        Ok((&ws).into())
    }

    pub fn put_characterizations(
        &self,
        id: &str,
        expected: Option<u64>,
        characterizations: Vec<Characterization>,
    ) -> Result<WorkspaceSummary> {
        let muts: Vec<Mutation> = characterizations
            .into_iter()
            .map(|characterization| Mutation::PutCharacterization { characterization })
            .collect();
        let (ws, _) = self.commit_all(id, expected, &muts)?;
        Ok((&ws).into())
    }

    pub fn put_expert(&self, id: &str, expected: Option<u64>, expert: Expert) -> Result<WorkspaceSummary> {
        let (ws, _) = self.commit(id, expected, Mutation::PutExpert { expert })?;
        Ok((&ws).into())
    }

    fn comparison_view(ws: &Workspace, rf: &str, expert_id: &str, outcome: Option<AddOutcome>) -> ComparisonResponse {
        let graph = ws.graph(rf, expert_id);
        ComparisonResponse {
            version: ws.version,
            expert_id: expert_id.to_string(),
            risk_factor_id: rf.to_string(),
            outcome,
            asserted: graph.map(|g| g.asserted.clone()).unwrap_or_default(),
            inferred: graph.map(|g| g.closure.relations().collect()).unwrap_or_default(),
        }
    }

    /// Adds one expert comparison. Unknown experts are registered on first use.
    pub fn add_comparison(
        &self,
        id: &str,
        expected: Option<u64>,
        expert_id: &str,
        risk_factor: Option<&str>,
        relation: Relation,
    ) -> Result<ComparisonResponse> {
        let ws = self.load(id)?;
        let rf = match risk_factor {
            Some(rf) => engine::resolve_risk_factor(&ws, Some(rf))?,
            None => {
                let c = ws.characterization(&relation.a)?;
                c.risk_factor_id.clone()
            }
        };
        let mut muts = Vec::new();
        if !ws.experts.contains_key(expert_id) {
            muts.push(Mutation::PutExpert {
                expert: Expert {
                    id: expert_id.to_string(),
                    display_name: expert_id.to_string(),
                },
            });
        }
        muts.push(Mutation::AddComparison {
            expert_id: expert_id.to_string(),
            risk_factor_id: rf.clone(),
            relation,
        });
        let (ws, applied) = self.commit_all(id, expected.or(Some(ws.version)), &muts)?;
        let outcome = match applied.last() {
            Some(Applied::Comparison(o)) => Some(*o),
            _ => None,
        };
        Ok(Self::comparison_view(&ws, &rf, expert_id, outcome))
    }

    pub fn remove_comparison(
        &self,
        id: &str,
        expected: Option<u64>,
        expert_id: &str,
        risk_factor: Option<&str>,
        comparison_id: u64,
    ) -> Result<ComparisonResponse> {
        let ws = self.load(id)?;
        let rf = engine::resolve_risk_factor(&ws, risk_factor)?;
        let m = Mutation::RemoveComparison {
            expert_id: expert_id.to_string(),
            risk_factor_id: rf.clone(),
            comparison_id,
        };
        let (ws, _) = self.commit(id, expected.or(Some(ws.version)), m)?;
        Ok(Self::comparison_view(&ws, &rf, expert_id, None))
    }

    pub fn comparisons(&self, id: &str, expert_id: &str, risk_factor: Option<&str>) -> Result<ComparisonResponse> {
        let ws = self.load(id)?;
        let rf = engine::resolve_risk_factor(&ws, risk_factor)?;
        if !ws.experts.contains_key(expert_id) {
            return Err(StoreError::NotFound {
                kind: "expert",
                id: expert_id.to_string(),
            }
            .into());
        }
        Ok(Self::comparison_view(&ws, &rf, expert_id, None))
    }

    pub fn reference(&self, id: &str, risk_factor: Option<&str>) -> Result<ReferenceResponse> {
        let ws = self.load(id)?;
        let rf = engine::resolve_risk_factor(&ws, risk_factor)?;
        Ok(ReferenceResponse {
            version: ws.version,
            model: engine::reference_model(&ws, &rf)?.map(|m| m.metadata()),
            stale: ws.reference_is_stale(&rf),
            scale: engine::reference_scale(&ws, &rf)?,
            risk_factor_id: rf,
        })
    }

    /// Retrains and stores the reference model if the stored one is stale.
    pub fn train_reference(&self, id: &str, risk_factor: Option<&str>) -> Result<ReferenceResponse> {
        for _ in 0..CACHE_RETRIES {
            let ws = self.load(id)?;
            let rf = engine::resolve_risk_factor(&ws, risk_factor)?;
            let Some(m) = engine::retrain_mutation(&ws, &rf)? else {
                return self.reference(id, Some(&rf));
            };
            match self.commit(id, Some(ws.version), m) {
                Ok(_) => return self.reference(id, Some(&rf)),
                Err(AppError::Engine(EngineError::Store(StoreError::VersionConflict { .. }))) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(busy(id))
    }

    pub fn expert_scale(&self, id: &str, expert_id: &str, risk_factor: Option<&str>) -> Result<(u64, LokScale)> {
        let ws = self.load(id)?;
        let rf = engine::resolve_risk_factor(&ws, risk_factor)?;
        Ok((ws.version, engine::expert_scale(&ws, &rf, expert_id)?))
    }

    /// Returns the stored consensus when current, otherwise solves and stores it.
    pub fn solve_consensus(&self, id: &str, risk_factor: Option<&str>, cancel: &CancelToken) -> Result<ConsensusResponse> {
        for _ in 0..CACHE_RETRIES {
            let ws = self.load(id)?;
            let rf = engine::resolve_risk_factor(&ws, risk_factor)?;
            if !ws.consensus_is_stale(&rf) {
                if let Some(result) = ws.consensus.get(&rf) {
                    return Ok(ConsensusResponse {
                        version: ws.version,
                        risk_factor_id: rf,
                        cached: true,
                        result: result.clone(),
                    });
                }
            }
            let Some(result) = engine::solve_workspace_consensus(&ws, &rf, cancel)? else {
                return Err(EngineError::Empty(format!("no expert has compared characterizations of `{rf}` yet")).into());
            };
            let m = Mutation::StoreConsensus {
                risk_factor_id: rf.clone(),
                result: result.clone(),
            };
            match self.commit(id, Some(ws.version), m) {
                Ok((ws, _)) => {
                    return Ok(ConsensusResponse {
                        version: ws.version,
                        risk_factor_id: rf,
                        cached: false,
                        result,
                    })
                }
                Err(AppError::Engine(EngineError::Store(StoreError::VersionConflict { .. }))) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(busy(id))
    }

    pub fn global_scale(&self, id: &str, risk_factor: Option<&str>, cancel: &CancelToken) -> Result<(u64, LokScale)> {
        let ws = self.load(id)?;
        let rf = engine::resolve_risk_factor(&ws, risk_factor)?;
        Ok((ws.version, engine::global_scale(&ws, &rf, cancel)?))
    }

    pub fn region(&self, id: &str, lok: Option<f64>, characterization: Option<&str>, k: usize) -> Result<(u64, RegionPlot)> {
        let ws = self.load(id)?;
        Ok((ws.version, engine::plot_data(&ws, lok, characterization, k)?))
    }

    /// Records an expert's POS at the LOK of the chosen scale. Values outside
    /// the allowed region are rejected with the nearest allowed value.
    pub fn add_pos_entry(&self, id: &str, req: &PosEntryRequest) -> Result<PosEntryResponse> {
        let ws = self.load(id)?;
        let entry = engine::pos_entry(&ws, &req.expert_id, &req.characterization_id, req.pos, req.scale_kind)?;
        let validation = engine::validate_entry(&ws, &entry)?;
        if !validation.accepted {
            return Err(PosError::OutsideRegion {
                lok: entry.lok_used,
                pos: entry.pos,
                nearest: validation.nearest.unwrap_or(entry.pos),
            }
            .into());
        }
        let m = Mutation::AddPosEntry { entry: entry.clone() };
        let (ws, _) = self.commit(id, req.expected_version.or(Some(ws.version)), m)?;
        Ok(PosEntryResponse {
            version: ws.version,
            entry,
            validation,
        })
    }

    /// Peer-review view. With `confirm` the final value is recorded at the
    /// global LOK and the characterization becomes peer-reviewed.
    pub fn pos_consensus(
        &self,
        id: &str,
        expected: Option<u64>,
        characterization_id: &str,
        confirm: Option<f64>,
        cancel: &CancelToken,
    ) -> Result<PosConsensusResponse> {
        let ws = self.load(id)?;
        let suggestion = engine::suggest_consensus_pos(&ws, characterization_id, cancel)?;
        let Some(pos) = confirm else {
            return Ok(PosConsensusResponse {
                version: ws.version,
                suggestion,
                record: None,
            });
        };
        let m = Mutation::RecordConsensusPos {
            characterization_id: characterization_id.to_string(),
            pos,
            global_lok: suggestion.global_lok,
        };
        let (ws, _) = self.commit(id, expected.or(Some(ws.version)), m)?;
        Ok(PosConsensusResponse {
            version: ws.version,
            suggestion,
            record: ws.records.get(characterization_id).cloned(),
        })
    }

    pub fn similar(&self, id: &str, characterization_id: &str, k: usize) -> Result<(u64, Vec<SimilarAssessment>)> {
        let ws = self.load(id)?;
        Ok((ws.version, engine::similar(&ws, characterization_id, k)?))
    }

    pub fn log(&self, id: &str) -> Result<Vec<LogLine>> {
        self.load(id)?;
        Ok(self.store.read_log(id)?)
    }
}

fn busy(id: &str) -> AppError {
    AppError::Busy(id.to_string())
}
