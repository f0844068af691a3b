//! HTTP API over [`Service`]. Handlers run on the blocking pool; consensus
//! solves additionally take a permit from a bounded pool and are cancelled
//! when the client goes away.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use lokrisk_core::consensus::CancelToken;
use lokrisk_core::model::{Characterization, Expert, Questionnaire, RiskFactor};
use lokrisk_core::pos::validate_pos;
use lokrisk_core::store::{ImportBundle, Settings};
use lokrisk_core::Relation;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::config::Config;
use crate::error::AppError;
use crate::service::{PosEntryRequest, Service};

pub const EXPERT_HEADER: &str = "x-expert-id";
pub const VERSION_HEADER: &str = "x-workspace-version";

pub struct AppState {
    pub service: Service,
    solvers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(service: Service, solver_workers: usize) -> Arc<Self> {
        Arc::new(Self {
            service,
            solvers: Arc::new(Semaphore::new(solver_workers.max(1))),
        })
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.to_api())).into_response()
    }
}

type ApiResult = Result<Response, AppError>;

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, AppError> {
    r.map(|Json(v)| v).map_err(|e| AppError::BadRequest(e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> Result<T, AppError> {
    r.map(|Query(v)| v).map_err(|e| AppError::BadRequest(e.body_text()))
}

fn ok<T: Serialize>(status: StatusCode, version: Option<u64>, value: &T) -> ApiResult {
    let mut resp = (status, Json(value)).into_response();
    if let Some(v) = version {
        resp.headers_mut().insert(VERSION_HEADER, HeaderValue::from(v));
    }
    Ok(resp)
}

/// Rejects requests whose expert header names someone else.
fn check_expert(headers: &HeaderMap, expert_id: &str) -> Result<(), AppError> {
    match headers.get(EXPERT_HEADER).map(|v| v.to_str()) {
        None => Ok(()),
        Some(Ok(h)) if h == expert_id => Ok(()),
        Some(_) => Err(AppError::Forbidden(format!(
            "request for expert `{expert_id}` carries a different {EXPERT_HEADER} header"
        ))),
    }
}

async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> Result<T, AppError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, AppError> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state.service))
        .await
        .map_err(|e| AppError::Config(format!("worker failed: {e}")))?
}

struct CancelOnDrop(Option<CancelToken>);

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        if let Some(t) = self.0.take() {
            t.cancel();
        }
    }
}

/// Runs `f` on the solver pool. Dropping the returned future (the client
/// disconnected) cancels the solve.
async fn solving<T, F>(state: &Arc<AppState>, f: F) -> Result<T, AppError>
where
    T: Send + 'static,
    F: FnOnce(&Service, &CancelToken) -> Result<T, AppError> + Send + 'static,
{
    let cancel = CancelToken::new();
    let mut guard = CancelOnDrop(Some(cancel.clone()));
    let permit = state
        .solvers
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| AppError::Config(format!("solver pool closed: {e}")))?;
    let state = state.clone();
    let out = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        f(&state.service, &cancel)
    })
    .await
    .map_err(|e| AppError::Config(format!("worker failed: {e}")));
    guard.0 = None;
    out?
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/workspaces", post(create_workspace))
        .route("/workspaces/{id}", get(get_workspace))
        .route("/workspaces/{id}/log", get(get_log))
        .route("/workspaces/{id}/import", post(import))
        .route("/workspaces/{id}/questionnaire", put(put_questionnaire))
        .route("/workspaces/{id}/characterizations", post(post_characterizations))
        .route("/workspaces/{id}/characterizations/{cid}/similar", get(get_similar))
        .route("/workspaces/{id}/experts", post(post_expert))
        .route(
            "/workspaces/{id}/experts/{eid}/comparisons",
            post(post_comparison).get(get_comparisons),
        )
        .route("/workspaces/{id}/experts/{eid}/comparisons/{cid}", delete(delete_comparison))
        .route("/workspaces/{id}/experts/{eid}/lok-scale", get(get_expert_scale))
        .route("/workspaces/{id}/reference", get(get_reference))
        .route("/workspaces/{id}/reference/train", post(train_reference))
        .route("/workspaces/{id}/consensus/solve", post(solve_consensus))
        .route("/workspaces/{id}/global-lok-scale", get(get_global_scale))
        .route("/workspaces/{id}/pos/region", get(get_region))
        .route("/workspaces/{id}/pos/validate", post(post_validate))
        .route("/workspaces/{id}/pos/entries", post(post_pos_entry))
        .route("/workspaces/{id}/pos/consensus", post(post_pos_consensus))
        .with_state(state)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateWorkspace {
    id: String,
    #[serde(default)]
    settings: Option<Settings>,
}

async fn create_workspace(State(s): State<Arc<AppState>>, req: Result<Json<CreateWorkspace>, JsonRejection>) -> ApiResult {
    let req = body(req)?;
    let summary = blocking(&s, move |svc| svc.create(&req.id, req.settings)).await?;
    ok(StatusCode::CREATED, Some(summary.version), &summary)
}

async fn get_workspace(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let ws = blocking(&s, move |svc| svc.load(&id)).await?;
    ok(StatusCode::OK, Some(ws.version), &ws)
}

async fn get_log(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let log = blocking(&s, move |svc| svc.log(&id)).await?;
    ok(StatusCode::OK, log.last().map(|l| l.version), &log)
}

#[derive(Deserialize)]
struct ImportRequest {
    #[serde(default)]
    expected_version: Option<u64>,
    #[serde(flatten)]
    bundle: ImportBundle,
}

async fn import(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Result<Json<ImportRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(req)?;
    let summary = blocking(&s, move |svc| svc.import(&id, req.expected_version, &req.bundle)).await?;
    ok(StatusCode::OK, Some(summary.version), &summary)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionnaireRequest {
    #[serde(default)]
    expected_version: Option<u64>,
    questionnaire: Questionnaire,
    #[serde(default)]
    risk_factor: Option<RiskFactor>,
}

async fn put_questionnaire(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Result<Json<QuestionnaireRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(req)?;
    let summary = blocking(&s, move |svc| {
        svc.put_questionnaire(&id, req.expected_version, req.questionnaire, req.risk_factor)
    })
    .await?;
    ok(StatusCode::OK, Some(summary.version), &summary)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CharacterizationsRequest {
    Many {
        #[serde(default)]
        expected_version: Option<u64>,
        characterizations: Vec<Characterization>,
    },
    One(Characterization),
}

async fn post_characterizations(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Result<Json<CharacterizationsRequest>, JsonRejection>,
) -> ApiResult {
    let (expected, list) = match body(req)? {
        CharacterizationsRequest::Many {
            expected_version,
            characterizations,
        } => (expected_version, characterizations),
        CharacterizationsRequest::One(c) => (None, vec![c]),
    };
    let summary = blocking(&s, move |svc| svc.put_characterizations(&id, expected, list)).await?;
    ok(StatusCode::CREATED, Some(summary.version), &summary)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpertRequest {
    #[serde(default)]
    expected_version: Option<u64>,
    id: String,
    #[serde(default)]
    display_name: Option<String>,
}

async fn post_expert(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Result<Json<ExpertRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(req)?;
    let expert = Expert {
        display_name: req.display_name.unwrap_or_else(|| req.id.clone()),
        id: req.id,
    };
    let summary = blocking(&s, move |svc| svc.put_expert(&id, req.expected_version, expert)).await?;
    ok(StatusCode::CREATED, Some(summary.version), &summary)
}

#[derive(Deserialize)]
struct ComparisonRequest {
    #[serde(default)]
    expected_version: Option<u64>,
    #[serde(default)]
    risk_factor_id: Option<String>,
    #[serde(flatten)]
    relation: Relation,
}

async fn post_comparison(
    State(s): State<Arc<AppState>>,
    Path((id, eid)): Path<(String, String)>,
    headers: HeaderMap,
    req: Result<Json<ComparisonRequest>, JsonRejection>,
) -> ApiResult {
    check_expert(&headers, &eid)?;
    let req = body(req)?;
    let resp = blocking(&s, move |svc| {
        svc.add_comparison(&id, req.expected_version, &eid, req.risk_factor_id.as_deref(), req.relation)
    })
    .await?;
    ok(StatusCode::OK, Some(resp.version), &resp)
}

#[derive(Deserialize)]
struct RiskFactorQuery {
    #[serde(default)]
    risk_factor: Option<String>,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn get_comparisons(
    State(s): State<Arc<AppState>>,
    Path((id, eid)): Path<(String, String)>,
    q: Result<Query<RiskFactorQuery>, QueryRejection>,
) -> ApiResult {
    let q = query(q)?;
    let resp = blocking(&s, move |svc| svc.comparisons(&id, &eid, q.risk_factor.as_deref())).await?;
    ok(StatusCode::OK, Some(resp.version), &resp)
}

async fn delete_comparison(
    State(s): State<Arc<AppState>>,
    Path((id, eid, cid)): Path<(String, String, u64)>,
    headers: HeaderMap,
    q: Result<Query<RiskFactorQuery>, QueryRejection>,
) -> ApiResult {
    check_expert(&headers, &eid)?;
    let q = query(q)?;
    let resp = blocking(&s, move |svc| {
        svc.remove_comparison(&id, q.expected_version, &eid, q.risk_factor.as_deref(), cid)
    })
    .await?;
    ok(StatusCode::OK, Some(resp.version), &resp)
}

async fn get_expert_scale(
    State(s): State<Arc<AppState>>,
    Path((id, eid)): Path<(String, String)>,
    q: Result<Query<RiskFactorQuery>, QueryRejection>,
) -> ApiResult {
    let q = query(q)?;
    let (version, scale) = blocking(&s, move |svc| svc.expert_scale(&id, &eid, q.risk_factor.as_deref())).await?;
    ok(StatusCode::OK, Some(version), &scale)
}

async fn get_reference(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<RiskFactorQuery>, QueryRejection>,
) -> ApiResult {
    let q = query(q)?;
    let resp = blocking(&s, move |svc| svc.reference(&id, q.risk_factor.as_deref())).await?;
    ok(StatusCode::OK, Some(resp.version), &resp)
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RiskFactorBody {
    #[serde(default)]
    risk_factor_id: Option<String>,
}

/// Empty bodies are allowed where every field is optional.
fn optional_body<T: DeserializeOwned + Default>(bytes: &[u8]) -> Result<T, AppError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| AppError::BadRequest(format!("invalid JSON body: {e}")))
}

async fn train_reference(State(s): State<Arc<AppState>>, Path(id): Path<String>, bytes: axum::body::Bytes) -> ApiResult {
    let req: RiskFactorBody = optional_body(&bytes)?;
    let resp = blocking(&s, move |svc| svc.train_reference(&id, req.risk_factor_id.as_deref())).await?;
    ok(StatusCode::OK, Some(resp.version), &resp)
}

async fn solve_consensus(State(s): State<Arc<AppState>>, Path(id): Path<String>, bytes: axum::body::Bytes) -> ApiResult {
    let req: RiskFactorBody = optional_body(&bytes)?;
    let resp = solving(&s, move |svc, cancel| {
        svc.solve_consensus(&id, req.risk_factor_id.as_deref(), cancel)
    })
    .await?;
    ok(StatusCode::OK, Some(resp.version), &resp)
}

async fn get_global_scale(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<RiskFactorQuery>, QueryRejection>,
) -> ApiResult {
    let q = query(q)?;
    let (version, scale) = solving(&s, move |svc, cancel| {
        svc.global_scale(&id, q.risk_factor.as_deref(), cancel)
    })
    .await?;
    ok(StatusCode::OK, Some(version), &scale)
}

#[derive(Deserialize)]
struct RegionQuery {
    #[serde(default)]
    lok: Option<f64>,
    #[serde(default)]
    characterization_id: Option<String>,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    5
}

async fn get_region(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<RegionQuery>, QueryRejection>,
) -> ApiResult {
    let q = query(q)?;
    let (version, plot) =
        blocking(&s, move |svc| svc.region(&id, q.lok, q.characterization_id.as_deref(), q.k)).await?;
    ok(StatusCode::OK, Some(version), &plot)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateRequest {
    lok: f64,
    pos: f64,
}

async fn post_validate(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Result<Json<ValidateRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(req)?;
    let (version, v) = blocking(&s, move |svc| {
        let ws = svc.load(&id)?;
        Ok((ws.version, validate_pos(&ws.settings.region, req.lok, req.pos)?))
    })
    .await?;
    ok(StatusCode::OK, Some(version), &v)
}

async fn post_pos_entry(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    req: Result<Json<PosEntryRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(req)?;
    check_expert(&headers, &req.expert_id)?;
    let resp = solving(&s, move |svc, _| svc.add_pos_entry(&id, &req)).await?;
    ok(StatusCode::CREATED, Some(resp.version), &resp)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PosConsensusRequest {
    #[serde(default)]
    expected_version: Option<u64>,
    characterization_id: String,
    /// Final value to record; without it only the suggestion is returned.
    #[serde(default)]
    confirm_pos: Option<f64>,
}

async fn post_pos_consensus(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Result<Json<PosConsensusRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(req)?;
    let resp = solving(&s, move |svc, cancel| {
        svc.pos_consensus(&id, req.expected_version, &req.characterization_id, req.confirm_pos, cancel)
    })
    .await?;
    ok(StatusCode::OK, Some(resp.version), &resp)
}

#[derive(Deserialize)]
struct SimilarQuery {
    #[serde(default = "default_k")]
    k: usize,
}

async fn get_similar(
    State(s): State<Arc<AppState>>,
    Path((id, cid)): Path<(String, String)>,
    q: Result<Query<SimilarQuery>, QueryRejection>,
) -> ApiResult {
    let q = query(q)?;
    let (version, list) = blocking(&s, move |svc| svc.similar(&id, &cid, q.k)).await?;
    ok(StatusCode::OK, Some(version), &list)
}

/// Binds the configured port and serves until Ctrl-C.
pub async fn serve(cfg: Config) -> Result<(), AppError> {
    let service = Service::from_config(&cfg)?;
    let probe = service.store().root().join(".write-probe");
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| AppError::Config(format!("storage {} is not writable: {e}", cfg.storage_path.display())))?;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.port))
        .await
        .map_err(|e| AppError::Config(format!("cannot bind port {}: {e}", cfg.port)))?;
    tracing::info!(port = cfg.port, storage = %cfg.storage_path.display(), "listening");
    let app = router(AppState::new(service, cfg.solver_workers));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AppError::Config(format!("server error: {e}")))
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::time::Duration;

    use lokrisk_core::consensus::ConsensusError;
    use lokrisk_core::store::FileStore;

    use super::*;

    #[tokio::test]
    async fn dropped_request_cancels_the_solve() {
        let dir = tempfile::tempdir().unwrap();
        let state = AppState::new(Service::new(FileStore::open(dir.path()).unwrap(), Settings::default()), 1);
        let stopped = Arc::new(AtomicBool::new(false));
        let flag = stopped.clone();
        let call = solving(&state, move |_, cancel| {
            while !cancel.is_cancelled() {
                std::thread::sleep(Duration::from_millis(1));
            }
            flag.store(true, Ordering::SeqCst);
            Err::<(), _>(ConsensusError::Cancelled.into())
        });
        assert!(tokio::time::timeout(Duration::from_millis(50), call).await.is_err());
        // the single permit comes back once the worker has noticed
        let _permit = tokio::time::timeout(Duration::from_secs(5), state.solvers.clone().acquire_owned())
            .await
            .expect("worker released its permit")
            .unwrap();
        assert!(stopped.load(Ordering::SeqCst));
    }
}
