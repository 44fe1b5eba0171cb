//! REST surface over the classification pipeline.
//!
//! Endpoints:
//! - `POST /classify` — one JSON record in, a classification out.
//! - `POST /classify/batch` — JSON Lines in, a summary out
//!   (`?verbose=1` adds per-record results).
//! - `GET /stats` — pipeline counters snapshot.
//! - `GET /health` — `ok` or `degraded` (models missing).
//! - `GET|POST|DELETE /lists/{whitelist|blacklist}` — list contents and
//!   manual mutations.
//!
//! Every 4xx/5xx response carries `{"error": code, "message": text}`.

pub mod config;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use mondeo::dga::{BigramModel, DgaThresholds};
use mondeo::forest::ForestModel;
use mondeo::ingest::parse_record_line;
use mondeo::lists::{load_list_file, ListKind, UpdateSource};
use mondeo::pipeline::{Classification, Pipeline, PipelineConfig, PipelineError};
use mondeo::rate::RateConfig;
use mondeo::record::validate_domain_name;
use mondeo::verdict::FinalVerdict;
use mondeo::SuffixRules;

pub use config::{ConfigError, ServiceConfig};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load {what} from {path}: {message}")]
    Load {
        what: &'static str,
        path: String,
        message: String,
    },
    #[error("cannot bind {addr}: {0}", addr = .1)]
    Bind(#[source] std::io::Error, SocketAddr),
    #[error("runtime error: {0}")]
    Runtime(String),
}

/// Shared state behind the router.
pub struct AppState {
    pipeline: Pipeline,
    max_batch_lines: usize,
}

impl AppState {
    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }
}

/// Builds the pipeline from configured paths. Configured-but-unreadable
/// files fail startup; absent model paths leave the service degraded.
pub fn build_state(cfg: &ServiceConfig) -> Result<Arc<AppState>, ServiceError> {
    let load_err =
        |what: &'static str, path: &std::path::Path, message: String| ServiceError::Load {
            what,
            path: path.display().to_string(),
            message,
        };

    let forest = match &cfg.models.forest {
        Some(path) => Some(
            ForestModel::load_file(path)
                .map_err(|e| load_err("forest model", path, e.to_string()))?,
        ),
        None => None,
    };
    let dga_model = match &cfg.models.dga {
        Some(path) => Some(
            BigramModel::load_file(path).map_err(|e| load_err("dga model", path, e.to_string()))?,
        ),
        None => None,
    };

    let rate = RateConfig::new(cfg.rate.delta_f, cfg.rate.k).map_err(|e| {
        ServiceError::Config(ConfigError::Invalid {
            key: "rate".into(),
            message: e.to_string(),
        })
    })?;
    let thresholds = DgaThresholds::new(cfg.dga.lower, cfg.dga.upper).map_err(|e| {
        ServiceError::Config(ConfigError::Invalid {
            key: "dga".into(),
            message: e.to_string(),
        })
    })?;

    let pipeline = Pipeline::new(PipelineConfig {
        rules: SuffixRules::default(),
        rate,
        thresholds,
        feedback_enabled: cfg.feedback.enabled,
        allow_feedback_whitelist: cfg.feedback.allow_whitelist,
        dga_model,
        forest,
        remote_url: cfg.dga.remote_url.clone(),
        remote_timeout: Duration::from_millis(cfg.dga.timeout_ms),
    });

    let rules = pipeline.rules().clone();
    for (kind, path) in [
        (ListKind::Whitelist, &cfg.lists.whitelist),
        (ListKind::Blacklist, &cfg.lists.blacklist),
    ] {
        if let Some(path) = path {
            let (list, _report) = load_list_file(path, kind, &rules)
                .map_err(|e| load_err("domain list", path, e.to_string()))?;
            pipeline.lists().install(list);
        }
    }

    Ok(Arc::new(AppState {
        pipeline,
        max_batch_lines: cfg.service.max_batch_lines,
    }))
}

/// The service router over shared state.
pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/classify", axum::routing::post(classify))
        .route("/classify/batch", axum::routing::post(classify_batch))
        .route("/stats", get(stats))
        .route("/health", get(health))
        .route(
            "/lists/:kind",
            get(get_list).post(post_list).delete(delete_list),
        )
        .layer(DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(state)
}

/// A handle on a running server, for embedding and tests.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Starts the server on a background thread and returns once it is bound.
pub fn spawn(cfg: ServiceConfig) -> Result<ServerHandle, ServiceError> {
    let state = build_state(&cfg)?;
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();

    let thread = std::thread::spawn(move || {
        let runtime = match tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
        {
            Ok(rt) => rt,
            Err(e) => {
                let _ = addr_tx.send(Err(ServiceError::Runtime(e.to_string())));
                return;
            }
        };
        runtime.block_on(async move {
            let listener = match TcpListener::bind(cfg.listen).await {
                Ok(l) => l,
                Err(e) => {
                    let _ = addr_tx.send(Err(ServiceError::Bind(e, cfg.listen)));
                    return;
                }
            };
            let addr = listener
                .local_addr()
                .expect("bound listener has an address");
            spawn_eviction(state.clone(), cfg.rate.max_idle_secs);
            let _ = addr_tx.send(Ok(addr));
            let server = axum::serve(listener, router(state)).with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            });
            if let Err(e) = server.await {
                eprintln!("server error: {e}");
            }
        });
    });

    match addr_rx.recv() {
        Ok(Ok(addr)) => Ok(ServerHandle {
            addr,
            shutdown: Some(shutdown_tx),
            thread: Some(thread),
        }),
        Ok(Err(e)) => {
            let _ = thread.join();
            Err(e)
        }
        Err(_) => Err(ServiceError::Runtime(
            "server thread exited before binding".into(),
        )),
    }
}

/// Runs the server on the current thread until interrupted.
pub fn run_blocking(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = build_state(&cfg)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServiceError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = TcpListener::bind(cfg.listen)
            .await
            .map_err(|e| ServiceError::Bind(e, cfg.listen))?;
        let addr = listener
            .local_addr()
            .expect("bound listener has an address");
        eprintln!("listening on http://{addr}");
        spawn_eviction(state.clone(), cfg.rate.max_idle_secs);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ServiceError::Runtime(e.to_string()))
    })
}

/// Periodically drops idle per-source rate state.
fn spawn_eviction(state: Arc<AppState>, max_idle_secs: u64) {
    let max_idle = Duration::from_secs(max_idle_secs.max(1));
    let period = (max_idle / 4).max(Duration::from_secs(1));
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(period);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticker.tick().await;
            state.pipeline.rate_store().evict_stale(max_idle);
        }
    });
}

// ---------------------------------------------------------------------------
// Handlers
// ---------------------------------------------------------------------------

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }

    fn not_ready(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "not_ready",
            message: message.into(),
        }
    }

    fn too_large(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::PAYLOAD_TOO_LARGE,
            code: "payload_too_large",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

fn parse_kind(kind: &str) -> Result<ListKind, ApiError> {
    match kind {
        "whitelist" => Ok(ListKind::Whitelist),
        "blacklist" => Ok(ListKind::Blacklist),
        other => Err(ApiError::not_found(format!("unknown list kind {other:?}"))),
    }
}

async fn classify(
    State(state): State<Arc<AppState>>,
    body: String,
) -> Result<Json<Classification>, ApiError> {
    let record = parse_record_line(1, &body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let result = tokio::task::spawn_blocking(move || state.pipeline.process(&record))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    match result {
        Ok(classification) => Ok(Json(classification)),
        Err(PipelineError::NotReady(what)) => Err(ApiError::not_ready(what)),
    }
}

#[derive(Deserialize)]
struct BatchQuery {
    #[serde(default)]
    verbose: Option<u8>,
}

#[derive(Serialize)]
struct BatchSummary {
    total: u64,
    benign: u64,
    infected: u64,
    per_phase_exits: [u64; 4],
    errors: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    results: Option<Vec<Classification>>,
}

async fn classify_batch(
    State(state): State<Arc<AppState>>,
    Query(query): Query<BatchQuery>,
    body: String,
) -> Result<Json<BatchSummary>, ApiError> {
    let max = state.max_batch_lines;
    let lines = body.lines().filter(|l| !l.trim().is_empty()).count();
    if lines > max {
        return Err(ApiError::too_large(format!(
            "batch of {lines} lines exceeds limit {max}"
        )));
    }

    let verbose = query.verbose.unwrap_or(0) == 1;
    let summary = tokio::task::spawn_blocking(move || {
        let items = body
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(idx, line)| parse_record_line(idx + 1, line));
        let (classifications, stats) = state.pipeline.process_stream(items);
        let benign = classifications
            .iter()
            .filter(|c| c.verdict == FinalVerdict::Benign)
            .count() as u64;
        let infected = classifications.len() as u64 - benign;
        let per_phase_exits = [
            stats.phases[0].exits_benign + stats.phases[0].exits_infected,
            stats.phases[1].exits_benign + stats.phases[1].exits_infected,
            stats.phases[2].exits_benign + stats.phases[2].exits_infected,
            stats.phases[3].exits_benign + stats.phases[3].exits_infected,
        ];
        BatchSummary {
            total: stats.total_packets + stats.records_skipped,
            benign,
            infected,
            per_phase_exits,
            errors: stats.records_skipped,
            results: verbose.then_some(classifications),
        }
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;

    Ok(Json(summary))
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<mondeo::PipelineStats> {
    Json(state.pipeline.stats())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let status = if state.pipeline.is_ready() {
        "ok"
    } else {
        "degraded"
    };
    Json(serde_json::json!({ "status": status }))
}

#[derive(Serialize)]
struct ListView {
    kind: String,
    revision: u64,
    entries: Vec<String>,
}

async fn get_list(
    State(state): State<Arc<AppState>>,
    Path(kind): Path<String>,
) -> Result<Json<ListView>, ApiError> {
    let list_kind = parse_kind(&kind)?;
    let (entries, revision) = state.pipeline.lists().snapshot(list_kind);
    Ok(Json(ListView {
        kind,
        revision,
        entries,
    }))
}

#[derive(Deserialize)]
struct DomainBody {
    domain: String,
}

#[derive(Serialize)]
struct MutationView {
    kind: String,
    revision: u64,
    domain: String,
    applied: bool,
}

fn parse_domain_body(body: &str) -> Result<String, ApiError> {
    let parsed: DomainBody = serde_json::from_str(body)
        .map_err(|e| ApiError::bad_request(format!("body must be {{\"domain\": string}}: {e}")))?;
    validate_domain_name(&parsed.domain).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(parsed.domain)
}

async fn post_list(
    State(state): State<Arc<AppState>>,
    Path(kind): Path<String>,
    body: String,
) -> Result<Json<MutationView>, ApiError> {
    let list_kind = parse_kind(&kind)?;
    let domain = parse_domain_body(&body)?;
    let outcome = state
        .pipeline
        .lists()
        .update(list_kind, &domain, UpdateSource::Manual)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(MutationView {
        kind,
        revision: outcome.revision,
        domain,
        applied: outcome.applied,
    }))
}

async fn delete_list(
    State(state): State<Arc<AppState>>,
    Path(kind): Path<String>,
    body: String,
) -> Result<Json<MutationView>, ApiError> {
    let list_kind = parse_kind(&kind)?;
    let domain = parse_domain_body(&body)?;
    let removed = state
        .pipeline
        .lists()
        .remove(list_kind, &domain)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (_, revision) = state.pipeline.lists().snapshot(list_kind);
    Ok(Json(MutationView {
        kind,
        revision,
        domain,
        applied: removed,
    }))
}
