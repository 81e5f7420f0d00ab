//! JSON API for the operator console.
//!
//! Reads are served from an in-memory baseline behind a read-write lock.
//! Confirmation is the only mutation: it runs under a single writer mutex,
//! saves the updated baseline to disk and only then swaps it in, so readers
//! never see a state that is not persisted.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bacscope_core::flowmap::{AnomalyLog, Baseline, ConfirmError, ConfirmRequest, GraphDelta};
use bacscope_core::graph::{GraphJson, LayerFilter};
use bacscope_core::{FlowKey, Timestamp};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::commands::{self, CommandError};
use crate::config::AppConfig;

pub const OPERATOR_HEADER: &str = "x-operator-id";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let (Some(Value::Object(extra)), Value::Object(b)) = (self.extra, &mut body) {
            b.extend(extra);
        }
        (self.status, Json(json!({ "error": body }))).into_response()
    }
}

impl From<ConfirmError> for ApiError {
    fn from(e: ConfirmError) -> Self {
        match e {
            ConfirmError::StaleDelta { requested, current } => ApiError {
                status: StatusCode::CONFLICT,
                code: "stale_delta",
                message: e.to_string(),
                extra: Some(
                    json!({ "requested_generation": requested, "current_generation": current }),
                ),
            },
            ConfirmError::NotInDelta(_) => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "not_in_delta",
                e.to_string(),
            ),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    cfg: AppConfig,
    baseline: RwLock<Option<Arc<Baseline>>>,
    writer: Mutex<()>,
    anomalies: Mutex<()>,
}

impl AppState {
    /// Loads the configured baseline if the file exists. A missing file
    /// serves an empty graph until `analyze` has run.
    pub fn new(cfg: AppConfig) -> Result<Self, CommandError> {
        let baseline = match &cfg.baseline {
            Some(p) if p.exists() => Some(commands::load_baseline(&cfg)?),
            _ => None,
        };
        Ok(Self::with_baseline(cfg, baseline))
    }

    pub fn with_baseline(cfg: AppConfig, baseline: Option<Baseline>) -> Self {
        Self {
            cfg,
            baseline: RwLock::new(baseline.map(Arc::new)),
            writer: Mutex::new(()),
            anomalies: Mutex::new(()),
        }
    }

    fn snapshot(&self) -> Option<Arc<Baseline>> {
        self.baseline.read().expect("baseline lock").clone()
    }

    fn swap(&self, next: Baseline) {
        *self.baseline.write().expect("baseline lock") = Some(Arc::new(next));
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/tree/{date}", get(tree))
        .route("/api/graph", get(graph))
        .route("/api/delta", get(delta))
        .route("/api/delta/confirm", post(confirm))
        .route("/api/disappeared", get(disappeared))
        .route("/api/anomalies", get(anomalies))
        .route("/api/anomalies/{id}/ack", post(acknowledge))
        .route("/api/flows", get(flows))
        .route("/api/baseline/reload", post(reload))
        .fallback(|| async {
            ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
        })
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)
}

async fn tree(State(state): State<Arc<AppState>>, Path(date): Path<String>) -> ApiResult<Response> {
    let day: NaiveDate = date.parse().map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_date",
            format!("`{date}` is not YYYY-MM-DD"),
        )
    })?;
    let unknown = || {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_date",
            format!("no scored tree for {day}"),
        )
    };
    if let Some(dir) = &state.cfg.trees_dir {
        let path = commands::tree_path(dir, day);
        if let Ok(Ok(text)) = blocking(move || std::fs::read_to_string(path)).await {
            let value: Value = serde_json::from_str(&text).map_err(ApiError::internal)?;
            return Ok(Json(value).into_response());
        }
    }
    if state.cfg.cov_dir.is_none() || state.cfg.sensor_meta.is_none() {
        return Err(unknown());
    }
    let cfg = state.cfg.clone();
    let tree = blocking(move || commands::score(&cfg, day))
        .await?
        .map_err(ApiError::internal)?;
    if tree.event_count() == 0 {
        return Err(unknown());
    }
    Ok(Json(tree).into_response())
}

#[derive(Debug, Deserialize)]
struct GraphQuery {
    layer: Option<String>,
}

async fn graph(
    State(state): State<Arc<AppState>>,
    Query(q): Query<GraphQuery>,
) -> ApiResult<Json<GraphJson>> {
    let layer: LayerFilter = match q.layer.as_deref() {
        None | Some("") => LayerFilter::Both,
        Some(l) => l
            .parse()
            .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_layer", e))?,
    };
    let json = match state.snapshot() {
        Some(b) => b.current_graph(layer).to_json(),
        None => GraphJson {
            nodes: Vec::new(),
            edges: Vec::new(),
        },
    };
    Ok(Json(json))
}

async fn delta(State(state): State<Arc<AppState>>) -> Json<GraphDelta> {
    Json(
        state
            .snapshot()
            .map(|b| b.pending_delta())
            .unwrap_or_default(),
    )
}

async fn disappeared(State(state): State<Arc<AppState>>) -> Json<Value> {
    let d = state.snapshot().map(|b| b.disappeared());
    Json(serde_json::to_value(d.unwrap_or_default()).unwrap_or_default())
}

fn operator(headers: &HeaderMap) -> ApiResult<String> {
    match headers.get(OPERATOR_HEADER).map(|v| v.to_str()) {
        Some(Ok(id)) if !id.trim().is_empty() => Ok(id.trim().to_string()),
        Some(_) => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_operator",
            "X-Operator-Id must be non-empty text",
        )),
        None => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "missing_operator",
            "X-Operator-Id header is required to confirm",
        )),
    }
}

#[derive(Debug, Serialize)]
struct ConfirmResponse {
    generation: u64,
    reference: bacscope_core::ReferenceGraph,
    pending: GraphDelta,
}

async fn confirm(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ConfirmResponse>> {
    let operator = operator(&headers)?;
    let request: ConfirmRequest = serde_json::from_slice(&body).map_err(|e| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "malformed_confirmation",
            e.to_string(),
        )
    })?;

    let _writer = state.writer.lock().await;
    let current = state.snapshot().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no_baseline",
            "no baseline has been built yet",
        )
    })?;
    let mut next = (*current).clone();
    next.confirm(&request, &operator, commands::now())?;
    if next.reference == current.reference {
        // Nothing new; skip the write.
        return Ok(Json(ConfirmResponse {
            generation: next.generation(),
            pending: next.pending_delta(),
            reference: next.reference,
        }));
    }
    if let Some(path) = state.cfg.baseline.clone() {
        let to_save = next.clone();
        blocking(move || to_save.save(path))
            .await?
            .map_err(ApiError::internal)?;
    }
    let response = ConfirmResponse {
        generation: next.generation(),
        pending: next.pending_delta(),
        reference: next.reference.clone(),
    };
    state.swap(next);
    Ok(Json(response))
}

/// Re-read the baseline file, e.g. after `bacscope regenerate`.
async fn reload(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let _writer = state.writer.lock().await;
    let cfg = state.cfg.clone();
    let loaded = blocking(move || commands::load_baseline(&cfg))
        .await?
        .map_err(|e| ApiError::new(StatusCode::CONFLICT, "reload_failed", e.to_string()))?;
    let generation = loaded.generation();
    state.swap(loaded);
    Ok(Json(json!({ "generation": generation })))
}

#[derive(Debug, Deserialize)]
struct AnomalyQuery {
    since: Option<String>,
}

fn parse_since(text: &str) -> Option<Timestamp> {
    if let Ok(secs) = text.parse::<f64>() {
        return secs.is_finite().then(|| Timestamp::from_secs_f64(secs));
    }
    chrono::DateTime::parse_from_rfc3339(text)
        .ok()
        .map(|dt| Timestamp::from_parts(dt.timestamp(), dt.timestamp_subsec_nanos()))
}

fn log_path(state: &AppState) -> Option<PathBuf> {
    state.cfg.anomaly_log.clone()
}

async fn anomalies(
    State(state): State<Arc<AppState>>,
    Query(q): Query<AnomalyQuery>,
) -> ApiResult<Json<Value>> {
    let since = match q.since.as_deref() {
        None | Some("") => None,
        Some(t) => Some(parse_since(t).ok_or_else(|| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                "bad_since",
                format!("`{t}` is neither epoch seconds nor RFC 3339"),
            )
        })?),
    };
    let Some(path) = log_path(&state) else {
        return Ok(Json(json!([])));
    };
    // Reopened per request: the log file is the source of truth and
    // `bacscope check` may have appended since.
    let records = blocking(move || AnomalyLog::open(path).map(|log| log.since(since)))
        .await?
        .map_err(ApiError::internal)?;
    Ok(Json(
        serde_json::to_value(records).map_err(ApiError::internal)?,
    ))
}

async fn acknowledge(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> ApiResult<Json<Value>> {
    let not_found = || {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_anomaly",
            format!("no anomaly with id {id}"),
        )
    };
    let Some(path) = log_path(&state) else {
        return Err(not_found());
    };
    let _guard = state.anomalies.lock().await;
    let record = blocking(move || AnomalyLog::open(path)?.acknowledge(id, commands::now()))
        .await?
        .map_err(ApiError::internal)?
        .ok_or_else(not_found)?;
    Ok(Json(
        serde_json::to_value(record).map_err(ApiError::internal)?,
    ))
}

#[derive(Debug, Serialize)]
struct FlowRow<'a> {
    source: String,
    destination: String,
    key: &'a FlowKey,
    count: u64,
    tau: Option<f64>,
    sigma: Option<f64>,
    mean_length: f64,
    sd_length: f64,
    class: bacscope_core::Pattern,
    insufficient: bool,
    threshold: f64,
}

async fn flows(State(state): State<Arc<AppState>>) -> Json<Value> {
    let Some(b) = state.snapshot() else {
        return Json(json!({ "flows": [], "untypable": 0 }));
    };
    let map = &b.flow_map;
    let rows: Vec<FlowRow> = map
        .flows
        .entries()
        .map(|e| FlowRow {
            source: e.key.src.to_string(),
            destination: e.key.dst.to_string(),
            key: &e.key,
            count: e.stats.count,
            tau: e.stats.tau(),
            sigma: e.stats.sigma(),
            mean_length: e.stats.mean_length(),
            sd_length: e.stats.sd_length(),
            class: e.class.pattern(),
            insufficient: e.insufficient,
            threshold: map.threshold(&e.key),
        })
        .collect();
    Json(json!({ "flows": rows, "untypable": map.flows.untypable }))
}

pub async fn serve(cfg: AppConfig) -> anyhow::Result<()> {
    let listen = cfg.listen;
    let state = Arc::new(AppState::new(cfg)?);
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
