//! REST API. Handlers hand all session work to the blocking pool; errors
//! are problem-details JSON `{code, message, detail}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use linddun_core::dfd::{Dfd, DotOptions, EdgeId, RankDir};
use linddun_core::model::{ApplicationProfile, Methodology, ReportMeta, SessionId, ThreatId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::app::{App, AppError, GenerateDfdRequest, GoRequest, ProRequest, ThreatPatch};

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(code = %self.code, "{}", self.message);
        }
        (status, Json(self.to_json())).into_response()
    }
}

/// `Json` with rejections reported as problem details.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = AppError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Self(v)),
            Err(rejection) => Err(json_rejection(rejection)),
        }
    }
}

fn json_rejection(r: JsonRejection) -> AppError {
    let status = r.status().as_u16();
    let code = if status == 413 {
        "PAYLOAD_TOO_LARGE"
    } else {
        "MALFORMED_REQUEST"
    };
    AppError::new(status, code, r.body_text())
}

/// Body that may be empty; an empty body means the default value.
fn optional_json<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, AppError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| AppError::new(400, "MALFORMED_REQUEST", e.to_string()))
}

async fn blocking<T, F>(f: F) -> Result<T, AppError>
where
    F: FnOnce() -> Result<T, AppError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::new(500, "INTERNAL", format!("worker failed: {e}")))?
}

type ApiResult<T> = Result<Json<T>, AppError>;

/// Build the router. The body limit leaves room for base64 overhead on top
/// of the configured upload size.
pub fn router(app: Arc<App>) -> Router {
    let body_limit = app.config.max_upload_bytes / 3 * 4 + 64 * 1024;
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/profile", get(get_profile).put(put_profile))
        .route("/sessions/{id}/dfd", get(get_dfd).put(put_dfd))
        .route("/sessions/{id}/dfd/import-csv", post(import_csv))
        .route("/sessions/{id}/dfd/export-csv", get(export_csv))
        .route("/sessions/{id}/dfd/generate", post(generate_dfd))
        .route("/sessions/{id}/dfd/dot", get(dfd_dot))
        .route("/sessions/{id}/elicit/zero-shot", post(elicit_zero_shot))
        .route("/sessions/{id}/elicit/go", post(elicit_go))
        .route("/sessions/{id}/elicit/pro", post(elicit_pro))
        .route("/sessions/{id}/assessment/import", post(import_threats))
        .route("/sessions/{id}/assessment/{threat_id}/impact", post(generate_impact))
        .route("/sessions/{id}/assessment/{threat_id}/controls", post(select_controls))
        .route("/sessions/{id}/assessment/{threat_id}", patch(patch_threat))
        .route("/sessions/{id}/report/meta", put(put_report_meta).get(get_report_meta))
        .route("/sessions/{id}/report", post(build_report))
        .fallback(|| async { AppError::new(404, "NOT_FOUND", "no such endpoint") })
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(app)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    app_name: Option<String>,
}

async fn create_session(
    State(app): State<Arc<App>>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), AppError> {
    let name = optional_json::<CreateSession>(&body)?.app_name;
    let s = blocking(move || app.create_session(name)).await?;
    Ok((StatusCode::CREATED, Json(serde_json::to_value(&s).expect("session serializes"))))
}

async fn list_sessions(State(app): State<Arc<App>>) -> ApiResult<Value> {
    let list = blocking(move || app.list_sessions()).await?;
    Ok(Json(json!({ "sessions": list })))
}

async fn get_session(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Value> {
    let s = blocking(move || app.load(&SessionId(id))).await?;
    Ok(Json(serde_json::to_value(&s).expect("session serializes")))
}

fn to_json<T: Serialize>(v: T) -> Json<Value> {
    Json(serde_json::to_value(v).expect("response serializes"))
}

async fn get_profile(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || app.profile(&SessionId(id))).await.map(to_json)
}

async fn put_profile(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    ApiJson(profile): ApiJson<ApplicationProfile>,
) -> ApiResult<Value> {
    blocking(move || app.set_profile(&SessionId(id), profile)).await.map(to_json)
}

async fn get_dfd(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || app.dfd(&SessionId(id))).await.map(to_json)
}

async fn put_dfd(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    ApiJson(dfd): ApiJson<Dfd>,
) -> ApiResult<Value> {
    blocking(move || app.set_dfd(&SessionId(id), dfd)).await.map(to_json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CsvBody {
    csv: String,
}

/// Accepts the CSV document as the raw body or as `{"csv": "..."}`.
async fn import_csv(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let body = String::from_utf8(body.to_vec())
        .map_err(|_| AppError::new(400, "MALFORMED_REQUEST", "the CSV document is not UTF-8"))?;
    let text = if body.trim_start().starts_with('{') {
        serde_json::from_str::<CsvBody>(&body)
            .map_err(|e| AppError::new(400, "MALFORMED_REQUEST", e.to_string()))?
            .csv
    } else {
        body
    };
    blocking(move || app.import_csv(&SessionId(id), &text)).await.map(to_json)
}

async fn export_csv(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Response, AppError> {
    let csv = blocking(move || app.export_csv(&SessionId(id))).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn generate_dfd(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<GenerateDfdRequest>,
) -> ApiResult<Value> {
    blocking(move || app.generate_dfd(&SessionId(id), req)).await.map(to_json)
}

#[derive(Debug, Default, Deserialize)]
struct DotQuery {
    #[serde(default)]
    rankdir: Option<String>,
    #[serde(default)]
    highlight: Option<String>,
}

async fn dfd_dot(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<DotQuery>,
) -> ApiResult<Value> {
    let rankdir = match q.rankdir.as_deref() {
        None => RankDir::default(),
        Some(r) => r.parse::<RankDir>().map_err(|e| AppError::invalid(e.to_string()))?,
    };
    let options = DotOptions {
        rankdir,
        highlight_edge: q.highlight.map(EdgeId),
    };
    let dot = blocking(move || app.dot(&SessionId(id), &options)).await?;
    Ok(Json(json!({ "dot": dot })))
}

async fn elicit_zero_shot(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Value> {
    let threats = blocking(move || app.elicit_zero_shot(&SessionId(id))).await?;
    Ok(Json(json!({ "threats": threats })))
}

async fn elicit_go(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<GoRequest>,
) -> ApiResult<Value> {
    blocking(move || app.elicit_go(&SessionId(id), req)).await.map(to_json)
}

async fn elicit_pro(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ProRequest>,
) -> ApiResult<Value> {
    blocking(move || app.elicit_pro(&SessionId(id), req)).await.map(to_json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportBody {
    methodology: Methodology,
}

async fn import_threats(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<ImportBody>,
) -> ApiResult<Value> {
    let m = body.methodology;
    let threats = blocking(move || app.import_threats(&SessionId(id), m)).await?;
    Ok(Json(json!({ "assessment_source": m, "threats": threats })))
}

async fn generate_impact(
    State(app): State<Arc<App>>,
    Path((id, tid)): Path<(String, String)>,
) -> ApiResult<Value> {
    blocking(move || app.generate_impact(&SessionId(id), &ThreatId(tid))).await.map(to_json)
}

async fn select_controls(
    State(app): State<Arc<App>>,
    Path((id, tid)): Path<(String, String)>,
) -> ApiResult<Value> {
    blocking(move || app.select_controls(&SessionId(id), &ThreatId(tid))).await.map(to_json)
}

async fn patch_threat(
    State(app): State<Arc<App>>,
    Path((id, tid)): Path<(String, String)>,
    ApiJson(patch): ApiJson<ThreatPatch>,
) -> ApiResult<Value> {
    blocking(move || app.patch_threat(&SessionId(id), &ThreatId(tid), patch)).await.map(to_json)
}

async fn get_report_meta(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || app.load(&SessionId(id)).map(|s| s.report_meta)).await.map(to_json)
}

async fn put_report_meta(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    ApiJson(meta): ApiJson<ReportMeta>,
) -> ApiResult<Value> {
    blocking(move || app.set_report_meta(&SessionId(id), meta)).await.map(to_json)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportBody {
    /// Freezes the report timestamp; the current time when absent.
    #[serde(default)]
    generated_at: Option<DateTime<Utc>>,
}

async fn build_report(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Value> {
    let at = optional_json::<ReportBody>(&body)?.generated_at;
    blocking(move || app.build_report(&SessionId(id), at)).await.map(to_json)
}
