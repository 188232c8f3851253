//! HTTP API over the shared pipeline. All bodies are JSON.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chromactl_core::calibrate::DEFAULT_SWEEP_POINTS;
use chromactl_core::translate::BackendKind;
use chromactl_core::Modifier;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::pipeline::{App, MixOptions, PipelineError, EXIT_BACKEND, EXIT_DEVICE};

pub const DEFAULT_HISTORY_LIMIT: usize = 50;

#[derive(Debug)]
pub struct ApiError(pub PipelineError);

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        ApiError(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<chromactl_core::CheckReport>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = match &e {
            PipelineError::RunNotFound(_) => StatusCode::NOT_FOUND,
            PipelineError::DeviceBusy => StatusCode::CONFLICT,
            PipelineError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ if e.exit_code() == EXIT_BACKEND => StatusCode::SERVICE_UNAVAILABLE,
            _ if e.exit_code() == EXIT_DEVICE => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let body = ErrorBody {
            code: e.code().to_string(),
            message: e.to_string(),
            report: e.report().cloned(),
        };
        (status, Json(json!({ "error": body }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Run blocking pipeline work off the async runtime.
async fn blocking<T, F>(app: &Arc<App>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&App) -> Result<T, PipelineError> + Send + 'static,
{
    let app = app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| ApiError(PipelineError::Io(std::io::Error::other(e.to_string()))))?
        .map_err(ApiError)
}

#[derive(Debug, Clone, Deserialize)]
pub struct MixBody {
    pub text: String,
    pub volume_ml: Option<f64>,
    pub backend: Option<BackendKind>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TextBody {
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CalibrateBody {
    pub pump: Option<usize>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct HistoryQuery {
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AdjustBody {
    pub run_id: u64,
    pub modifier: Modifier,
}

async fn mix(State(app): State<Arc<App>>, Json(body): Json<MixBody>) -> ApiResult<crate::pipeline::RunRecord> {
    let opts = MixOptions {
        volume_ml: body.volume_ml,
        backend: body.backend.unwrap_or(BackendKind::RuleBased),
    };
    let out = blocking(&app, move |a| a.mix(&body.text, &opts)).await?;
    Ok(Json(out.record))
}

async fn check(State(app): State<Arc<App>>, Json(body): Json<TextBody>) -> ApiResult<chromactl_core::CheckReport> {
    Ok(Json(blocking(&app, move |a| a.check(&body.text)).await?))
}

async fn execute(State(app): State<Arc<App>>, Json(body): Json<TextBody>) -> ApiResult<chromactl_core::DispenseResult> {
    Ok(Json(blocking(&app, move |a| a.execute(&body.text)).await?))
}

async fn state(State(app): State<Arc<App>>) -> Json<crate::pipeline::StateReport> {
    Json(app.state())
}

/// One pump returns its `FitResult`; no pump calibrates all and returns a list.
async fn calibrate(State(app): State<Arc<App>>, Json(body): Json<CalibrateBody>) -> Result<Response, ApiError> {
    let points = body.points.unwrap_or(DEFAULT_SWEEP_POINTS);
    let pump = body.pump;
    let fits = blocking(&app, move |a| a.calibrate(pump, points)).await?;
    Ok(match pump {
        Some(_) => Json(&fits[0].fit).into_response(),
        None => Json(&fits).into_response(),
    })
}

async fn history(State(app): State<Arc<App>>, Query(q): Query<HistoryQuery>) -> Json<Vec<crate::pipeline::RunRecord>> {
    Json(app.history().recent(q.limit.unwrap_or(DEFAULT_HISTORY_LIMIT)))
}

async fn adjust(State(app): State<Arc<App>>, Json(body): Json<AdjustBody>) -> ApiResult<crate::pipeline::RunRecord> {
    let out = blocking(&app, move |a| a.adjust(body.run_id, body.modifier)).await?;
    Ok(Json(out.record))
}

async fn colors(State(app): State<Arc<App>>) -> Json<crate::pipeline::ColorsReport> {
    Json(app.colors())
}

async fn refill(State(app): State<Arc<App>>) -> Json<chromactl_core::DeviceState> {
    Json(app.refill())
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/api/mix", post(mix))
        .route("/api/program/check", post(check))
        .route("/api/program/execute", post(execute))
        .route("/api/state", get(state))
        .route("/api/calibrate", post(calibrate))
        .route("/api/history", get(history))
        .route("/api/adjust", post(adjust))
        .route("/api/colors", get(colors))
        .route("/api/device/refill", post(refill))
        .with_state(app)
}

pub async fn serve(app: Arc<App>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
