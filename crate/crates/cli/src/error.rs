//! Wire format of failures, shared by the HTTP API and the CLI.

use lokrisk_core::calibration::CalibrationError;
use lokrisk_core::comparison::ComparisonError;
use lokrisk_core::consensus::ConsensusError;
use lokrisk_core::engine::EngineError;
use lokrisk_core::pos::PosError;
use lokrisk_core::reference::ReferenceError;
use lokrisk_core::store::StoreError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("workspace `{0}` kept changing while a derived result was being stored; retry")]
    Busy(String),
    #[error("oracle disagrees with the solver: {0}")]
    OracleMismatch(String),
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        AppError::Engine(e.into())
    }
}

impl From<ConsensusError> for AppError {
    fn from(e: ConsensusError) -> Self {
        AppError::Engine(e.into())
    }
}

impl From<CalibrationError> for AppError {
    fn from(e: CalibrationError) -> Self {
        AppError::Engine(e.into())
    }
}

impl From<PosError> for AppError {
    fn from(e: PosError) -> Self {
        AppError::Engine(e.into())
    }
}

impl AppError {
    pub fn input(path: impl std::fmt::Display, message: impl std::fmt::Display) -> Self {
        AppError::Input {
            path: path.to_string(),
            message: message.to_string(),
        }
    }

    /// HTTP status and error code.
    pub fn status_and_code(&self) -> (u16, &'static str) {
        match self {
            AppError::Engine(e) => engine_code(e),
            AppError::BadRequest(_) => (400, "bad_request"),
            AppError::Forbidden(_) => (403, "expert_mismatch"),
            AppError::Config(_) => (500, "config_error"),
            AppError::Input { .. } => (400, "bad_input"),
            AppError::Busy(_) => (409, "workspace_busy"),
            AppError::OracleMismatch(_) => (500, "oracle_mismatch"),
        }
    }

    pub fn status(&self) -> u16 {
        self.status_and_code().0
    }

    pub fn to_api(&self) -> ApiError {
        ApiError {
            code: self.status_and_code().1.to_string(),
            message: self.to_string(),
            details: self.details(),
        }
    }

    fn details(&self) -> Value {
        match self {
            AppError::Engine(e) => engine_details(e),
            AppError::Input { path, .. } => json!({ "path": path }),
            _ => Value::Null,
        }
    }
}

fn engine_code(e: &EngineError) -> (u16, &'static str) {
    match e {
        EngineError::Store(s) => match s {
            StoreError::VersionConflict { .. } => (409, "version_conflict"),
            StoreError::ValidationFailed(_) => (422, "validation_failed"),
            StoreError::Comparison(c) => comparison_code(c),
            StoreError::Pos(p) => pos_code(p),
            StoreError::NotFound { .. } => (404, "not_found"),
            StoreError::AlreadyExists { .. } => (409, "already_exists"),
            StoreError::Io { .. } => (500, "storage_io"),
            StoreError::Parse { .. } => (500, "corrupt_workspace"),
            StoreError::UnsupportedSchema(_) => (500, "unsupported_schema"),
        },
        EngineError::Reference(r) => match r {
            ReferenceError::LayoutMismatch { .. } => (422, "layout_mismatch"),
            ReferenceError::RiskFactorMismatch { .. } => (422, "risk_factor_mismatch"),
            ReferenceError::InvalidCharacterization { .. } => (422, "invalid_characterization"),
            ReferenceError::NoExamples => (404, "no_training_examples"),
            ReferenceError::MixedLayouts(..) => (422, "mixed_layouts"),
            ReferenceError::TargetOutOfRange(_) => (422, "target_out_of_range"),
            ReferenceError::Io(_) => (500, "training_set_io"),
            ReferenceError::Parse { .. } => (400, "training_set_parse"),
        },
        EngineError::Calibration(c) => match c {
            CalibrationError::MalformedProblem(_) => (422, "malformed_problem"),
            CalibrationError::InfeasibleComparisonChain { .. } => (422, "infeasible_comparison_chain"),
            CalibrationError::Solver(_) => (500, "solver_failure"),
        },
        EngineError::Consensus(c) => match c {
            ConsensusError::SizeLimitExceeded { .. } => (422, "size_limit_exceeded"),
            ConsensusError::Cancelled => (503, "cancelled"),
            ConsensusError::MalformedWeights(_) => (422, "malformed_weights"),
        },
        EngineError::Pos(p) => pos_code(p),
        EngineError::Empty(_) => (404, "empty"),
        EngineError::Ambiguous(_) => (422, "ambiguous_risk_factor"),
    }
}

fn comparison_code(c: &ComparisonError) -> (u16, &'static str) {
    match c {
        ComparisonError::SelfComparison(_) => (422, "self_comparison"),
        ComparisonError::UnknownNode(_) => (404, "unknown_characterization"),
        ComparisonError::UnknownComparison(_) => (404, "unknown_comparison"),
        ComparisonError::Contradiction { .. } => (409, "contradiction"),
    }
}

fn pos_code(p: &PosError) -> (u16, &'static str) {
    match p {
        PosError::InvalidRegion(_) => (422, "invalid_region"),
        PosError::NoEntries => (422, "no_pos_entries"),
        PosError::Model(_) => (422, "score_out_of_range"),
        PosError::OutsideRegion { .. } => (422, "outside_region"),
    }
}

fn engine_details(e: &EngineError) -> Value {
    match e {
        EngineError::Store(StoreError::VersionConflict { expected, actual }) => {
            json!({ "expected": expected, "actual": actual })
        }
        EngineError::Store(StoreError::Comparison(ComparisonError::Contradiction { relation, witness })) => {
            json!({ "relation": relation, "witness": witness })
        }
        EngineError::Store(StoreError::Comparison(ComparisonError::UnknownNode(id))) => json!({ "id": id }),
        EngineError::Store(StoreError::Comparison(ComparisonError::UnknownComparison(id))) => json!({ "id": id }),
        EngineError::Store(StoreError::NotFound { kind, id }) | EngineError::Store(StoreError::AlreadyExists { kind, id }) => {
            json!({ "kind": kind, "id": id })
        }
        EngineError::Store(StoreError::Parse { path, offset, .. }) => json!({ "path": path, "offset": offset }),
        EngineError::Store(StoreError::Io { path, .. }) => json!({ "path": path }),
        EngineError::Store(StoreError::Pos(p)) | EngineError::Pos(p) => pos_details(p),
        EngineError::Calibration(CalibrationError::InfeasibleComparisonChain { chain, required_span }) => {
            json!({ "chain": chain, "required_span": required_span })
        }
        EngineError::Consensus(ConsensusError::SizeLimitExceeded { size, bound }) => {
            json!({ "size": size, "bound": bound })
        }
        _ => Value::Null,
    }
}

fn pos_details(p: &PosError) -> Value {
    match p {
        PosError::OutsideRegion { lok, pos, nearest } => json!({ "lok": lok, "pos": pos, "nearest": nearest }),
        _ => Value::Null,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lokrisk_core::Relation;

    #[test]
    fn contradiction_carries_witness() {
        let e: AppError = StoreError::Comparison(ComparisonError::Contradiction {
            relation: Relation::lt("b", "a"),
            witness: vec![Relation::lt("a", "b")],
        })
        .into();
        assert_eq!(e.status(), 409);
        let api = e.to_api();
        assert_eq!(api.code, "contradiction");
        assert_eq!(api.details["witness"][0]["a"], "a");
        assert_eq!(api.details["relation"]["relation"], "lt");
    }

    #[test]
    fn infeasible_chain_names_path() {
        let e: AppError = CalibrationError::InfeasibleComparisonChain {
            chain: vec![("b".into(), "a".into())],
            required_span: 1.1,
        }
        .into();
        let api = e.to_api();
        assert_eq!(api.code, "infeasible_comparison_chain");
        assert_eq!(api.details["chain"][0][0], "b");
    }
}
