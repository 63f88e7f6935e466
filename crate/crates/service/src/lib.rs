//! HTTP API for the manual coding workflow: a per-rater prompt queue, code
//! submission, agreement between two raters, disagreement resolution and
//! export of the final mapping.

pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use motivelog::agreement::{
    cohen_kappa, confusion_matrix, disagreements, per_category_kappa, AgreementError, ConfusionMatrix, Disagreement,
    KappaResult, PerCategoryKappa,
};
use motivelog::Motive;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub use store::{Store, StoreError, StoreSettings};

/// Entries between automatic snapshot writes.
const SNAPSHOT_EVERY: u64 = 100;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::InvalidRater(_) | StoreError::InvalidMotive(_) => StatusCode::BAD_REQUEST,
            StoreError::UnknownPrompt(_) => StatusCode::NOT_FOUND,
            StoreError::Duplicate { .. } => StatusCode::CONFLICT,
            StoreError::NoPrompts | StoreError::Corrupt { .. } | StoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<AgreementError> for ApiError {
    fn from(e: AgreementError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_motive(s: &str) -> ApiResult<Motive> {
    match s.parse::<Motive>() {
        Ok(m) if m.is_label() => Ok(m),
        _ => Err(ApiError::bad_request(format!("{s:?} is not a coding motive"))),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: String,
}

async fn next_prompt(
    State(store): State<Arc<Store>>,
    Query(q): Query<RaterQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    if q.rater.is_empty() {
        return Err(ApiError::bad_request("rater is required"));
    }
    Ok(Json(match store.snapshot().next_for(&q.rater) {
        Some(item) => serde_json::to_value(item).expect("plain struct"),
        None => json!({ "prompt": null, "remaining": 0 }),
    }))
}

#[derive(Deserialize)]
struct CodeBody {
    rater: String,
    prompt: String,
    motive: String,
}

#[derive(Deserialize, Default)]
struct AmendQuery {
    #[serde(default)]
    amend: bool,
}

fn maybe_snapshot(store: &Store) {
    if store.snapshot().log_entries().is_multiple_of(SNAPSHOT_EVERY) {
        if let Err(e) = store.write_snapshot() {
            eprintln!("snapshot failed: {e}");
        }
    }
}

async fn submit_code(
    State(store): State<Arc<Store>>,
    Query(q): Query<AmendQuery>,
    Json(body): Json<CodeBody>,
) -> ApiResult<(StatusCode, Json<store::CodeRecord>)> {
    let motive = parse_motive(&body.motive)?;
    let rec = blocking(move || {
        let rec = store.submit_code(&body.rater, &body.prompt, motive, q.amend)?;
        maybe_snapshot(&store);
        Ok(rec)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

#[derive(Deserialize)]
struct ResolveBody {
    prompt: String,
    motive: String,
    resolver: String,
}

async fn resolve(
    State(store): State<Arc<Store>>,
    Json(body): Json<ResolveBody>,
) -> ApiResult<(StatusCode, Json<store::Resolution>)> {
    let motive = parse_motive(&body.motive)?;
    let rec = blocking(move || {
        let rec = store.resolve(&body.resolver, &body.prompt, motive)?;
        maybe_snapshot(&store);
        Ok(rec)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

#[derive(Deserialize)]
struct PairQuery {
    a: String,
    b: String,
    #[serde(default)]
    include_resolved: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AgreementResponse {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub kappa: KappaResult,
    pub matrix: ConfusionMatrix,
    pub per_category: PerCategoryKappa,
}

async fn agreement(State(store): State<Arc<Store>>, Query(q): Query<PairQuery>) -> ApiResult<Json<AgreementResponse>> {
    let snap = store.snapshot();
    let matrix = confusion_matrix(&snap.codes_of(&q.a), &snap.codes_of(&q.b))?;
    let kappa = cohen_kappa(&matrix)?;
    let per_category = per_category_kappa(&matrix)?;
    Ok(Json(AgreementResponse { a: q.a, b: q.b, kappa, matrix, per_category }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DisagreementItem {
    #[serde(flatten)]
    pub disagreement: Disagreement,
    pub frequency: u64,
    pub resolution: Option<Motive>,
}

async fn list_disagreements(
    State(store): State<Arc<Store>>,
    Query(q): Query<PairQuery>,
) -> Json<Vec<DisagreementItem>> {
    let snap = store.snapshot();
    let freq: HashMap<String, u64> = snap.prompts().iter().cloned().collect();
    let items = disagreements(&snap.codes_of(&q.a), &snap.codes_of(&q.b), &freq)
        .into_iter()
        .map(|d| DisagreementItem {
            frequency: freq.get(&d.prompt).copied().unwrap_or(0),
            resolution: snap.resolution(&d.prompt).map(|r| r.motive),
            disagreement: d,
        })
        .filter(|d| q.include_resolved || d.resolution.is_none())
        .collect();
    Json(items)
}

async fn export_mapping(State(store): State<Arc<Store>>) -> Json<serde_json::Value> {
    let m = store.snapshot().export_mapping();
    Json(json!({ "tsv": m.to_tsv(), "entries": m.len() }))
}

async fn export_codes(State(store): State<Arc<Store>>, Query(q): Query<RaterQuery>) -> Json<serde_json::Value> {
    let m = store.snapshot().rater_mapping(&q.rater);
    Json(json!({ "rater": q.rater, "tsv": m.to_tsv(), "entries": m.len() }))
}

async fn status(State(store): State<Arc<Store>>) -> Json<serde_json::Value> {
    let snap = store.snapshot();
    let raters: serde_json::Map<String, serde_json::Value> =
        snap.raters().map(|r| (r.to_string(), json!(snap.code_records(r).count()))).collect();
    Json(json!({
        "prompts": snap.prompts().len(),
        "raters": raters,
        "log_entries": snap.log_entries(),
    }))
}

/// The API router, optionally serving a static UI bundle at `/`.
pub fn router(store: Arc<Store>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/status", get(status))
        .route("/api/prompts/next", get(next_prompt))
        .route("/api/codes", post(submit_code))
        .route("/api/codes/export", get(export_codes))
        .route("/api/agreement", get(agreement))
        .route("/api/disagreements", get(list_disagreements))
        .route("/api/resolve", post(resolve))
        .route("/api/mapping/export", get(export_mapping))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c, then writes a final snapshot.
pub async fn serve(addr: SocketAddr, store: Arc<Store>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store.clone(), static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    store.write_snapshot()
}
