//! JSON-over-HTTP surface.
//!
//! | method | path                  | body / result                                   |
//! |--------|-----------------------|-------------------------------------------------|
//! | POST   | /v1/memories          | `{user_id, turns, strategy?}` -> ingest report  |
//! | POST   | /v1/search            | `{user_id, query, t_now?, mode?, overrides?}`   |
//! | POST   | /v1/answer            | same body -> `{answer, trace}`                  |
//! | GET    | /v1/profile/{user_id} | user profile                                    |
//! | GET    | /v1/scenes/{user_id}  | scenes                                          |
//! | GET    | /v1/stats/{user_id}   | memory-base counts                              |
//!
//! Errors are `{"error": <code>, "message": <text>}` with a 4xx/5xx status.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use scenemem::recollect::{Mode, Query, RecollectError};
use scenemem::space::{Engine, EngineError, IngestError};
use scenemem::time::Timestamp;
use scenemem::trace::{SegmentationStrategy, TraceError};
use scenemem::types::{DialogueTurn, RetrievalConfig};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), detail: None }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.code, "message": self.message});
        if let Some(d) = self.detail {
            body["detail"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::UnknownSpace(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_memory_space", message),
            EngineError::Ingest(IngestError::InvalidTurns(_)) => ApiError::bad_request("invalid_turns", message),
            EngineError::Ingest(IngestError::Segmentation { source: TraceError::Usage(_), .. }) => {
                ApiError::bad_request("invalid_strategy", message)
            }
            EngineError::Ingest(ref ie) => {
                let detail = ie.report().map(|r| json!({"committed": r}));
                ApiError { detail, ..ApiError::new(StatusCode::BAD_GATEWAY, "ingest_failed", message) }
            }
            EngineError::Recollect(RecollectError::InvalidQuery(_)) => ApiError::bad_request("invalid_query", message),
            EngineError::Recollect(RecollectError::Provider { ref partial, .. }) => {
                let detail = serde_json::to_value(partial.as_ref()).ok().map(|p| json!({"partial": p}));
                ApiError { detail, ..ApiError::new(StatusCode::BAD_GATEWAY, "provider_error", message) }
            }
            EngineError::Answer(_) => ApiError::new(StatusCode::BAD_GATEWAY, "provider_error", message),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

/// `Json` whose rejections use the API error shape.
pub struct ApiJson<T>(pub T);

#[axum::async_trait]
impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rejection) => {
                let status = match rejection {
                    JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
                    JsonRejection::JsonDataError(_) => StatusCode::UNPROCESSABLE_ENTITY,
                    _ => StatusCode::BAD_REQUEST,
                };
                Err(ApiError::new(status, "invalid_request", rejection.body_text()))
            }
        }
    }
}

/// Accepts `"fixed_message:10"` or `{"kind": "fixed_message", "n": 10}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum StrategySpec {
    Text(String),
    Full(SegmentationStrategy),
}

impl StrategySpec {
    fn resolve(self) -> Result<SegmentationStrategy, ApiError> {
        let s = match self {
            StrategySpec::Text(t) => t.parse().map_err(|e: TraceError| ApiError::bad_request("invalid_strategy", e.to_string()))?,
            StrategySpec::Full(s) => s,
        };
        s.validate().map_err(|e| ApiError::bad_request("invalid_strategy", e.to_string()))?;
        Ok(s)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestBody {
    pub user_id: String,
    pub turns: Vec<DialogueTurn>,
    #[serde(default)]
    pub strategy: Option<StrategySpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBody {
    pub user_id: String,
    pub query: String,
    #[serde(default)]
    pub t_now: Option<Timestamp>,
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Partial retrieval config laid over the server's.
    #[serde(default)]
    pub overrides: Option<serde_json::Map<String, Value>>,
}

#[derive(Debug, Serialize)]
struct AnswerReply {
    answer: String,
    trace: scenemem::recollect::RetrievalResult,
}

fn check_user(user_id: &str) -> Result<(), ApiError> {
    if user_id.trim().is_empty() {
        return Err(ApiError::bad_request("invalid_request", "user_id must be non-empty"));
    }
    Ok(())
}

fn overlay(base: &RetrievalConfig, overrides: Option<serde_json::Map<String, Value>>) -> Result<RetrievalConfig, ApiError> {
    let Some(over) = overrides else { return Ok(base.clone()) };
    let mut v = serde_json::to_value(base).expect("config serializes");
    let obj = v.as_object_mut().expect("config is an object");
    for (k, val) in over {
        if !obj.contains_key(&k) {
            return Err(ApiError::bad_request("invalid_overrides", format!("unknown retrieval setting {k:?}")));
        }
        obj.insert(k, val);
    }
    serde_json::from_value(v).map_err(|e| ApiError::bad_request("invalid_overrides", e.to_string()))
}

fn build_query(engine: &Engine, body: SearchBody) -> Result<Query, ApiError> {
    check_user(&body.user_id)?;
    let config = overlay(engine.config(), body.overrides)?;
    Ok(Query::new(body.user_id, body.query, body.t_now.unwrap_or_else(Timestamp::now))
        .with_mode(body.mode.unwrap_or_default())
        .with_config(config))
}

/// Runs blocking engine work off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn ingest(State(engine): State<Arc<Engine>>, ApiJson(body): ApiJson<IngestBody>) -> Result<Response, ApiError> {
    check_user(&body.user_id)?;
    let strategy = body.strategy.map(StrategySpec::resolve).transpose()?.unwrap_or_default();
    let report = blocking(move || Ok(engine.ingest(&body.user_id, &body.turns, &strategy)?)).await?;
    Ok(Json(report).into_response())
}

async fn search(State(engine): State<Arc<Engine>>, ApiJson(body): ApiJson<SearchBody>) -> Result<Response, ApiError> {
    let result = blocking(move || {
        let q = build_query(&engine, body)?;
        Ok(engine.search(&q)?)
    })
    .await?;
    Ok(Json(result).into_response())
}

async fn answer(State(engine): State<Arc<Engine>>, ApiJson(body): ApiJson<SearchBody>) -> Result<Response, ApiError> {
    let (answer, trace) = blocking(move || {
        let q = build_query(&engine, body)?;
        Ok(engine.answer(&q)?)
    })
    .await?;
    Ok(Json(AnswerReply { answer, trace }).into_response())
}

async fn profile(State(engine): State<Arc<Engine>>, Path(user): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(engine.profile(&user)?).into_response())
}

async fn scenes(State(engine): State<Arc<Engine>>, Path(user): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(engine.scenes(&user)?).into_response())
}

async fn stats(State(engine): State<Arc<Engine>>, Path(user): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(engine.stats(&user)?).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn require_token(State(token): State<Arc<String>>, req: Request, next: Next) -> Response {
    let ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|h| h.to_str().ok())
        .and_then(|h| h.strip_prefix("Bearer "))
        .is_some_and(|t| t == token.as_str());
    if ok {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

/// The service router; with `token` set every request needs
/// `Authorization: Bearer <token>`.
pub fn router(engine: Arc<Engine>, token: Option<String>) -> Router {
    let app = Router::new()
        .route("/v1/memories", post(ingest))
        .route("/v1/search", post(search))
        .route("/v1/answer", post(answer))
        .route("/v1/profile/:user_id", get(profile))
        .route("/v1/scenes/:user_id", get(scenes))
        .route("/v1/stats/:user_id", get(stats))
        .fallback(not_found)
        .with_state(engine);
    match token {
        Some(t) => app.layer(middleware::from_fn_with_state(Arc::new(t), require_token)),
        None => app,
    }
}
