//! HTTP API over the store, the pipeline, the review queue and synthesis.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{info, warn};

use assertflow_core::agent::AgentRuntime;
use assertflow_core::bridge::{BridgeConfig, BridgeError, SynthJob};
use assertflow_core::ir::{validate_artifact, DesignSpec, PipelineArtifact, PipelineRun, Stage, StageStatus};
use assertflow_core::pipeline::{new_run_id, run_pipeline, save_run, PipelineConfig, RunOptions};
use assertflow_core::review::{ReviewError, ReviewQueue, ReviewVerdict, StateFilter};
use assertflow_core::store::{FileStore, Store, StoreError, StoreSource};
use assertflow_core::sva::{check_syntax, lex};

use crate::ops;

/// What the service needs besides the store.
#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub store_root: PathBuf,
    pub pipeline_config: Option<PathBuf>,
    pub bridge_config: Option<PathBuf>,
    pub suites: Option<PathBuf>,
    pub token: Option<String>,
}

pub struct AppState {
    store: Arc<dyn Store>,
    queue: ReviewQueue,
    pipeline: Option<(PipelineConfig, Arc<AgentRuntime>)>,
    bridge: Option<(BridgeConfig, Arc<AgentRuntime>)>,
    suites: Option<PathBuf>,
    token: Option<String>,
    /// Synthesis and verdict handling touch the same jobs; run them one at a time.
    jobs: Mutex<()>,
}

impl AppState {
    pub fn open(config: &ServiceConfig) -> anyhow::Result<Arc<Self>> {
        let store: Arc<dyn Store> = Arc::new(FileStore::open(&config.store_root)?);
        let queue = ReviewQueue::open(store.clone())?;
        let pipeline = match &config.pipeline_config {
            Some(p) => {
                let (cfg, runtime) = PipelineConfig::load(p)?;
                Some((cfg, Arc::new(runtime)))
            }
            None => None,
        };
        let bridge = match &config.bridge_config {
            Some(p) => {
                let (cfg, runtime) = BridgeConfig::load(p)?;
                Some((cfg, Arc::new(runtime)))
            }
            None => None,
        };
        Ok(Arc::new(AppState {
            store,
            queue,
            pipeline,
            bridge,
            suites: config.suites.clone(),
            token: config.token.clone().filter(|t| !t.is_empty()),
            jobs: Mutex::new(()),
        }))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"error": message.into()}),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::NotFound(_) => ApiError::not_found(e.to_string()),
            ReviewError::Conflict { ref existing, .. } => ApiError {
                status: StatusCode::CONFLICT,
                body: json!({"error": e.to_string(), "existing": existing}),
            },
            ReviewError::MissingReviewer => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            ReviewError::Store(_) => ApiError::internal(e),
        }
    }
}

impl From<BridgeError> for ApiError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::MissingReviewer
            | BridgeError::Unverified(_)
            | BridgeError::Schema { .. }
            | BridgeError::InvalidConfig(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            BridgeError::Pending(_) => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            BridgeError::Review(r) => r.into(),
            other => ApiError::internal(other),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::internal(e)
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn require_token(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/artifacts/{stage}", get(get_stage_artifacts))
        .route("/review/queue", get(review_queue))
        .route("/review/{item}", get(review_item))
        .route("/review/{item}/verdict", post(post_verdict))
        .route("/bridge/synth", post(bridge_synth))
        .route("/bridge/jobs/{id}", get(bridge_job))
        .route("/datasets/{id}", get(get_dataset))
        .route("/metrics/{run}", get(get_metrics))
        .route("/sva/lint", post(lint))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serve until the listener fails or the process receives ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RunBody {
    Wrapped { spec: DesignSpec },
    Bare(DesignSpec),
}

fn run_summary(run: &PipelineRun) -> Value {
    json!({
        "run_id": run.run_id,
        "status": run.status(),
        "counts": run.counts(),
        "run": run,
    })
}

async fn create_run(State(state): State<Arc<AppState>>, Json(body): Json<RunBody>) -> ApiResult<Response> {
    let spec = match body {
        RunBody::Wrapped { spec } | RunBody::Bare(spec) => spec,
    };
    let (config, runtime) = state
        .pipeline
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no pipeline config loaded"))?;
    let sealed = PipelineArtifact::DesignSpec(DesignSpec {
        id: String::new(),
        ..spec.clone()
    })
    .seal();
    let report = validate_artifact(&sealed, &StoreSource(state.store.as_ref()));
    if !report.ok {
        return Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({"error": "design spec is invalid", "violations": report.violations}),
        });
    }
    state.store.put_artifact(&sealed)?;
    let run_id = new_run_id();
    let run = PipelineRun::new(&run_id, sealed.id(), serde_json::to_value(&config).expect("serializable"));
    save_run(state.store.as_ref(), &run).map_err(ApiError::internal)?;
    let store = state.store.clone();
    let options = RunOptions {
        run_id: Some(run_id.clone()),
        stop_after: None,
    };
    tokio::task::spawn_blocking(move || {
        match run_pipeline(&spec, &config, &runtime, store.as_ref(), &options) {
            Ok(run) => info!(run = %run.run_id, status = ?run.status(), "run finished"),
            Err(e) => warn!(run = ?options.run_id, "run aborted: {e}"),
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"run_id": run_id}))).into_response())
}

fn load_run(state: &AppState, id: &str) -> ApiResult<PipelineRun> {
    match assertflow_core::pipeline::load_run(state.store.as_ref(), id) {
        Ok(Some(run)) => Ok(run),
        Ok(None) => Err(ApiError::not_found(format!("run `{id}` not found"))),
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(run_summary(&load_run(&state, &id)?)))
}

async fn get_stage_artifacts(
    State(state): State<Arc<AppState>>,
    Path((id, stage)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let run = load_run(&state, &id)?;
    let stage = Stage::parse(&stage).ok_or_else(|| ApiError::not_found(format!("unknown stage `{stage}`")))?;
    let record = run.stage(stage);
    let artifacts = record
        .artifacts
        .iter()
        .map(|a| state.store.get_artifact(a).map(|a| a.to_document()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Json(json!({
        "run_id": run.run_id,
        "stage": stage,
        "status": record.status,
        "artifacts": artifacts,
    })))
}

#[derive(Deserialize)]
struct QueueQuery {
    state: Option<String>,
}

async fn review_queue(State(state): State<Arc<AppState>>, Query(q): Query<QueueQuery>) -> ApiResult<Json<Value>> {
    let filter = match q.state.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s) => Some(
            StateFilter::parse(s)
                .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown state `{s}`")))?,
        ),
    };
    let items = state.queue.list(filter)?;
    Ok(Json(json!({"items": items})))
}

async fn review_item(State(state): State<Arc<AppState>>, Path(item): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(serde_json::to_value(state.queue.get(&item)?).expect("serializable")))
}

#[derive(Deserialize)]
struct VerdictBody {
    verdict: ReviewVerdict,
    #[serde(default)]
    reviewer: String,
    #[serde(default)]
    reason: Option<String>,
}

async fn post_verdict(
    State(state): State<Arc<AppState>>,
    Path(item): Path<String>,
    Json(body): Json<VerdictBody>,
) -> ApiResult<Json<Value>> {
    blocking(move || -> ApiResult<Json<Value>> {
        let _guard = state.jobs.lock().expect("jobs lock");
        let decided = state.queue.decide(&item, body.verdict, &body.reviewer, body.reason)?;
        // Candidates waiting on this item move on now.
        ops::refresh_jobs(&state.queue, state.store.as_ref())?;
        Ok(Json(serde_json::to_value(decided).expect("serializable")))
    })
    .await?
}

async fn bridge_synth(
    State(state): State<Arc<AppState>>,
    Json(request): Json<ops::SynthRequest>,
) -> ApiResult<(StatusCode, Json<SynthJob>)> {
    blocking(move || -> ApiResult<(StatusCode, Json<SynthJob>)> {
        let (config, runtime) = state
            .bridge
            .as_ref()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no bridge config loaded"))?;
        let _guard = state.jobs.lock().expect("jobs lock");
        let job = ops::synth(&request, config, runtime, state.store.as_ref(), Some(&state.queue))?;
        Ok((StatusCode::CREATED, Json(job)))
    })
    .await?
}

async fn bridge_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SynthJob>> {
    SynthJob::load(state.store.as_ref(), &id)?
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("job `{id}` not found")))
}

async fn get_dataset(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let dataset = ops::get_dataset(state.store.as_ref(), &id)
        .map_err(ApiError::internal)?
        .ok_or_else(|| ApiError::not_found(format!("dataset `{id}` not found")))?;
    Ok(Json(serde_json::to_value(dataset).expect("serializable")))
}

async fn get_metrics(State(state): State<Arc<AppState>>, Path(run): Path<String>) -> ApiResult<Json<Value>> {
    if matches!(load_run(&state, &run)?.status(), StageStatus::Pending | StageStatus::Running) {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("run `{run}` is still in progress")));
    }
    let suites = state
        .suites
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no trace suites configured"))?;
    let report = blocking(move || ops::metrics_for_run(state.store.as_ref(), &run, &suites))
        .await?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("{e:#}")))?;
    Ok(Json(serde_json::to_value(report).expect("serializable")))
}

#[derive(Deserialize)]
struct LintBody {
    source: String,
}

/// Syntax report plus the token list clients use for highlighting.
async fn lint(Json(body): Json<LintBody>) -> Json<Value> {
    let report = check_syntax(&body.source);
    let tokens = lex(&body.source).unwrap_or_default();
    Json(json!({"ok": report.ok, "diagnostics": report.diagnostics, "tokens": tokens}))
}
