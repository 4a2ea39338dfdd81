//! JSON HTTP API backing the marketer panel.
//!
//! Handlers are stateless; the card is the client's state. Anything that
//! embeds, calls the model or scans the user table runs on the blocking
//! pool.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sellkit_core::llm::LlmError;
use sellkit_core::metrics::{evaluate_benchmark, BenchRecord, MetricsError};
use sellkit_core::retrieval::StoreError;
use sellkit_core::sell::{self, CardError, CardNode, ParseError, SellExpr};
use sellkit_core::synth::{RejectReason, SynthError};
use sellkit_core::targeting::{export_segment, select_users, ExportFormat, TargetingError};

use crate::app::Resources;

pub type AppState = Arc<Resources>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    /// Where in the request the problem is: a field name, optionally with
    /// `:offset` into a SELL string or `/i/j` into the expression tree.
    pub path: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
            path: None,
        }
    }

    fn at(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn parse(field: &str, e: &ParseError) -> Self {
        let path = match e.position() {
            Some(p) => format!("{field}:{p}"),
            None => field.to_string(),
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string()).at(path)
    }

    fn backend(e: &LlmError) -> Self {
        let code = match e {
            LlmError::Timeout => "BackendTimeout",
            LlmError::RateLimited => "RateLimited",
            LlmError::AuthFailure => "AuthFailure",
            LlmError::BackendUnavailable(_) => "BackendUnavailable",
            LlmError::CassetteMiss { .. } => "CassetteMiss",
            LlmError::InvalidRequest(_) => "InvalidBackendRequest",
            LlmError::Cassette(_) => "CassetteError",
        };
        ApiError::new(StatusCode::BAD_GATEWAY, code, e.to_string())
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<CardError> for ApiError {
    fn from(e: CardError) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidCard", e.to_string())
            .at(format!("card/{}", e.node_id()))
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ZeroCount => ApiError::bad_request(e.to_string()).at("n"),
            StoreError::Embed(err) => {
                ApiError::new(StatusCode::BAD_GATEWAY, "EmbedderFailure", err.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<TargetingError> for ApiError {
    fn from(e: TargetingError) -> Self {
        match e {
            TargetingError::Invalid(report) => validation_error("sell", &report.issues),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<MetricsError> for ApiError {
    fn from(e: MetricsError) -> Self {
        let path = match &e {
            MetricsError::MissingPrediction(id) | MetricsError::DuplicateId(id) => {
                Some(format!("predictions/{id}"))
            }
            MetricsError::BadReference { id, .. } => Some(format!("references/{id}")),
            _ => None,
        };
        let mut err = ApiError::new(StatusCode::BAD_REQUEST, "InvalidBenchmark", e.to_string());
        err.path = path;
        err
    }
}

impl From<SynthError> for ApiError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Backend(err) => ApiError::backend(&err),
            SynthError::Prompt(p) => match p {
                sellkit_core::prompt::PromptError::Embed(err) => {
                    ApiError::new(StatusCode::BAD_GATEWAY, "EmbedderFailure", err.to_string())
                }
                other => ApiError::internal(other.to_string()),
            },
            other => ApiError::internal(other.to_string()),
        }
    }
}

fn validation_error(field: &str, issues: &[sell::ValidationIssue]) -> ApiError {
    let first = &issues[0];
    let path = first
        .path
        .iter()
        .fold(field.to_string(), |acc, i| format!("{acc}/{i}"));
    let message = issues
        .iter()
        .map(|i| i.message.as_str())
        .collect::<Vec<_>>()
        .join("; ");
    ApiError::new(
        StatusCode::BAD_REQUEST,
        format!("{:?}", first.code),
        message,
    )
    .at(path)
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_field(text: &str) -> ApiResult<SellExpr> {
    sell::parse(text).map_err(|e| ApiError::parse("sell", &e))
}

/// Parses and validates; the targeting endpoints refuse invalid cards.
fn valid_expr(state: &Resources, text: &str) -> ApiResult<SellExpr> {
    let expr = parse_field(text)?;
    let report = sell::validate(&expr, &state.catalog);
    if !report.ok {
        return Err(validation_error("sell", &report.issues));
    }
    Ok(expr)
}

#[derive(Deserialize)]
pub struct DemandBody {
    pub demand: String,
}

#[derive(Deserialize)]
pub struct SellBody {
    pub sell: String,
}

#[derive(Deserialize)]
pub struct CardBody {
    pub card: CardNode,
}

#[derive(Deserialize)]
pub struct ExportBody {
    pub sell: String,
    #[serde(default = "csv")]
    pub format: String,
}

fn csv() -> String {
    "csv".into()
}

#[derive(Deserialize)]
pub struct TagQuery {
    pub q: String,
    pub n: Option<usize>,
}

/// A benchmark side: bare SELL strings are numbered by position.
#[derive(Deserialize)]
#[serde(untagged)]
pub enum BenchItem {
    Record(BenchRecord),
    Sell(String),
}

#[derive(Deserialize)]
pub struct EvaluateBody {
    pub predictions: Vec<BenchItem>,
    pub references: Vec<BenchItem>,
}

fn bench_records(items: Vec<BenchItem>) -> Vec<BenchRecord> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| match item {
            BenchItem::Record(r) => r,
            BenchItem::Sell(sell) => BenchRecord {
                id: i.to_string(),
                demand: String::new(),
                sell,
            },
        })
        .collect()
}

async fn translate(
    State(state): State<AppState>,
    body: Result<Json<DemandBody>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(body) = body?;
    if body.demand.trim().is_empty() {
        return Err(ApiError::bad_request("demand is empty").at("demand"));
    }
    let t = blocking(move || state.translate(&body.demand).map_err(ApiError::from)).await?;
    if let Some(reason) = &t.rejection {
        let (code, position) = match reason {
            RejectReason::Parse { code, position, .. } => (code.clone(), *position),
            other => (other.code().to_string(), None),
        };
        let path = match position {
            Some(p) => format!("completion:{p}"),
            None => "completion".into(),
        };
        let mut err = ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            code,
            format!("model output is not SELL: {}", t.completion.trim()),
        )
        .at(path);
        err.status = StatusCode::UNPROCESSABLE_ENTITY;
        return Err(err);
    }
    Ok(Json(t).into_response())
}

async fn parse(body: Result<Json<SellBody>, JsonRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Json(body) = body?;
    let expr = parse_field(&body.sell)?;
    Ok(Json(json!({
        "sell": sell::print(&expr),
        "card": sell::to_card(&expr),
    })))
}

async fn print(body: Result<Json<CardBody>, JsonRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Json(body) = body?;
    let expr = sell::from_card(&body.card)?;
    Ok(Json(json!({ "sell": sell::print(&expr) })))
}

async fn validate(
    State(state): State<AppState>,
    body: Result<Json<SellBody>, JsonRejection>,
) -> ApiResult<Json<sell::ValidationReport>> {
    let Json(body) = body?;
    let expr = parse_field(&body.sell)?;
    Ok(Json(sell::validate(&expr, &state.catalog)))
}

async fn structure(
    body: Result<Json<SellBody>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(body) = body?;
    let expr = parse_field(&body.sell)?;
    Ok(Json(json!({ "skeleton": sell::extract_structure(&expr) })))
}

async fn tags_search(
    State(state): State<AppState>,
    query: Result<Query<TagQuery>, QueryRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Query(query) = query?;
    let n = query.n.unwrap_or(state.options.n);
    blocking(move || {
        let hits = state.tags.search(&query.q, n, &*state.embedder)?;
        let tags: Vec<_> = hits
            .iter()
            .map(|h| {
                let def = state.catalog.get(&h.item);
                json!({
                    "name": h.item,
                    "score": h.score,
                    "value_type": def.map(|d| d.value_type),
                    "description": def.and_then(|d| d.description.clone()),
                })
            })
            .collect();
        Ok(Json(json!({
            "query": query.q,
            "n": n,
            "embedder_version": state.tags.embedder_version(),
            "tags": tags,
        })))
    })
    .await
}

async fn catalog(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "tags": state.catalog.tags() }))
}

fn users(state: &Resources) -> ApiResult<&sellkit_core::targeting::UserDb> {
    state
        .users
        .as_ref()
        .ok_or_else(|| ApiError::internal("no user database loaded"))
}

async fn select(
    State(state): State<AppState>,
    body: Result<Json<SellBody>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(body) = body?;
    blocking(move || {
        let expr = valid_expr(&state, &body.sell)?;
        let ids = select_users(&expr, users(&state)?)?;
        Ok(Json(json!({ "count": ids.len(), "user_ids": ids })))
    })
    .await
}

async fn export(
    State(state): State<AppState>,
    body: Result<Json<ExportBody>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(body) = body?;
    let format: ExportFormat = body
        .format
        .parse()
        .map_err(|e: String| ApiError::bad_request(e).at("format"))?;
    blocking(move || {
        let expr = valid_expr(&state, &body.sell)?;
        let ids = select_users(&expr, users(&state)?)?;
        let mut out = Vec::new();
        export_segment(&ids, format, &mut out)?;
        let ext = match format {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
        };
        Ok((
            [
                (header::CONTENT_TYPE, format.content_type().to_string()),
                (
                    header::CONTENT_DISPOSITION,
                    format!("attachment; filename=\"segment.{ext}\""),
                ),
                (
                    header::HeaderName::from_static("x-user-count"),
                    ids.len().to_string(),
                ),
            ],
            out,
        )
            .into_response())
    })
    .await
}

async fn evaluate(body: Result<Json<EvaluateBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(body) = body?;
    blocking(move || {
        let preds = bench_records(body.predictions);
        let refs = bench_records(body.references);
        let report = evaluate_benchmark(&preds, &refs)?;
        Ok(Json(report).into_response())
    })
    .await
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "ok": true,
        "backends": {
            "llm": { "id": state.gateway.backend_id(), "model": state.gateway.model },
            "embedder": { "version": state.embedder.version() },
        },
        "library_entries": state.library.len(),
        "tags": state.catalog.len(),
        "users": state.users.as_ref().map(|u| u.records().len()),
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/translate", post(translate))
        .route("/v1/parse", post(parse))
        .route("/v1/print", post(print))
        .route("/v1/validate", post(validate))
        .route("/v1/structure", post(structure))
        .route("/v1/tags/search", get(tags_search))
        .route("/v1/catalog", get(catalog))
        .route("/v1/select-users", post(select))
        .route("/v1/export", post(export))
        .route("/v1/evaluate", post(evaluate))
        .route("/v1/health", get(health))
        .fallback(not_found)
        .with_state(state)
}

pub async fn serve(state: AppState, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
