use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, JsonRejection};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use tracing::{info, warn};

use pregcare_core::api::{
    Ack, AssignRequest, ErrorCode, ErrorReply, LoginRequest, LoginResponse, PatientDetail, PatientFileRequest,
    Principal, Stats,
};
use pregcare_core::dispatch::RequestView;
use pregcare_core::registry::{
    DoctorAccount, HelpRequest, PatientFile, PatientRecord, Record, RequestState, SuccoringUnit,
};
use pregcare_core::{FileId, PatientId, RequestId};

use crate::App;

type AppState = Arc<App>;

/// Error response: the status follows the code, the body is an ErrorReply.
pub struct ApiError(pub ErrorReply);

impl<E: Into<ErrorReply>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn err(code: ErrorCode, message: impl Into<String>) -> ApiError {
    ApiError(ErrorReply::new(code, message))
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v)
        .map_err(|e| err(ErrorCode::BadRequest, e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| err(ErrorCode::Internal, e.to_string()))
}

/// Principal behind the `Authorization: Bearer` token.
pub struct Auth(pub Principal);

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| err(ErrorCode::Unauthorized, "missing bearer token"))?;
        Ok(Auth(state.sessions.check(token.trim())?))
    }
}

impl Auth {
    fn console(&self) -> Result<(), ApiError> {
        if self.0.is_console() {
            Ok(())
        } else {
            Err(err(ErrorCode::Forbidden, "operator or admin session required"))
        }
    }
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/ingress/sms", post(ingress))
        .route("/auth/login", post(login))
        .route("/requests", get(list_requests))
        .route("/requests/{id}", get(get_request))
        .route("/requests/{id}/assign", post(assign))
        .route("/requests/{id}/complete", post(complete))
        .route("/requests/{id}/cancel", post(cancel))
        .route("/units", get(units))
        .route("/patients/{id}", get(patient))
        .route("/patients/{id}/file", post(patient_file))
        .route("/stats", get(stats))
        .with_state(app)
}

/// Stand-in for the carrier webhook. The body is the raw message payload;
/// `X-Sender-Phone` carries the originating number.
async fn ingress(
    State(app): State<AppState>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<Ack>, ApiError> {
    if let Some(expected) = &app.config.ingress_key {
        let given = headers.get("x-gateway-key").and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return Err(err(ErrorCode::Unauthorized, "bad gateway key"));
        }
    }
    let body = body.map_err(|e| err(ErrorCode::OversizedPayload, e.body_text()))?;
    let sender = headers
        .get("x-sender-phone")
        .map(|v| String::from_utf8_lossy(v.as_bytes()).into_owned())
        .unwrap_or_default();
    let reply = {
        let app = app.clone();
        let sender = sender.clone();
        blocking(move || app.ingress.handle(&body, &sender, app.clock.now())).await?
    };
    app.pool.submit_all(reply.queued);
    match reply.result {
        Ok(ack) => {
            info!(event = "ingress_ack", sender = %sender, ack = ?ack);
            Ok(Json(ack))
        }
        Err(e) => {
            warn!(event = "ingress_error", sender = %sender, code = %e.code, message = %e.message);
            Err(ApiError(e))
        }
    }
}

async fn login(
    State(app): State<AppState>,
    body: Result<Json<LoginRequest>, JsonRejection>,
) -> ApiResult<LoginResponse> {
    let req = json_body(body)?;
    let a = app.clone();
    let resp = blocking(move || a.sessions.login(&a.registry.read(), &req.username, &req.password)).await??;
    info!(event = "login", principal = ?resp.principal);
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    /// Comma-separated states; all when absent.
    state: Option<String>,
    since: Option<DateTime<Utc>>,
}

async fn list_requests(
    State(app): State<AppState>,
    auth: Auth,
    query: Result<Query<ListQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Vec<RequestView>> {
    auth.console()?;
    let Query(q) = query.map_err(|e| err(ErrorCode::BadRequest, e.body_text()))?;
    let states = q
        .state
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<RequestState>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| err(ErrorCode::BadRequest, e))?;
    Ok(Json(app.dispatcher.list_requests(&states, q.since)))
}

async fn get_request(State(app): State<AppState>, auth: Auth, Path(id): Path<String>) -> ApiResult<RequestView> {
    auth.console()?;
    Ok(Json(app.dispatcher.get_request(&RequestId::new(id))?))
}

fn actor(p: &Principal) -> String {
    match p {
        Principal::EmcOperator => "emc_operator".into(),
        Principal::Admin => "admin".into(),
        Principal::Doctor { doctor_id } => format!("doctor:{doctor_id}"),
    }
}

async fn assign(
    State(app): State<AppState>,
    auth: Auth,
    Path(id): Path<String>,
    body: Result<Json<AssignRequest>, JsonRejection>,
) -> ApiResult<RequestView> {
    auth.console()?;
    let req = json_body(body)?;
    let rid = RequestId::new(id);
    let a = app.clone();
    let r = rid.clone();
    blocking(move || a.dispatcher.assign_unit(&r, &req.unit_id, &actor(&auth.0))).await??;
    Ok(Json(app.dispatcher.get_request(&rid)?))
}

async fn complete(State(app): State<AppState>, auth: Auth, Path(id): Path<String>) -> ApiResult<RequestView> {
    auth.console()?;
    let rid = RequestId::new(id);
    let (a, r) = (app.clone(), rid.clone());
    blocking(move || a.dispatcher.complete_request(&r, &actor(&auth.0))).await??;
    Ok(Json(app.dispatcher.get_request(&rid)?))
}

async fn cancel(State(app): State<AppState>, auth: Auth, Path(id): Path<String>) -> ApiResult<RequestView> {
    auth.console()?;
    let rid = RequestId::new(id);
    let (a, r) = (app.clone(), rid.clone());
    blocking(move || a.dispatcher.cancel_request(&r, &actor(&auth.0))).await??;
    Ok(Json(app.dispatcher.get_request(&rid)?))
}

async fn units(State(app): State<AppState>, auth: Auth) -> ApiResult<Vec<SuccoringUnit>> {
    auth.console()?;
    Ok(Json(app.registry.read().units.values().cloned().collect()))
}

async fn patient(State(app): State<AppState>, _auth: Auth, Path(id): Path<String>) -> ApiResult<PatientDetail> {
    PatientDetail::collect(&app.registry.read(), &PatientId::new(&id))
        .map(Json)
        .ok_or_else(|| err(ErrorCode::NotFound, format!("patient {id} not found")))
}

/// Doctors record notes against a help request handled by their hospital.
async fn patient_file(
    State(app): State<AppState>,
    auth: Auth,
    Path(id): Path<String>,
    body: Result<Json<PatientFileRequest>, JsonRejection>,
) -> ApiResult<PatientFile> {
    let Principal::Doctor { doctor_id } = auth.0 else {
        return Err(err(ErrorCode::Forbidden, "doctor session required"));
    };
    let req = json_body(body)?;
    let Some(request_id) = req.request_id else {
        return Err(err(ErrorCode::BadRequest, "request_id is required"));
    };
    if req.notes.trim().is_empty() {
        return Err(err(ErrorCode::InvalidField, "notes must not be empty"));
    }
    let pid = PatientId::new(id);
    let a = app.clone();
    let file = blocking(move || {
        a.registry.write(|tx| -> Result<PatientFile, ApiError> {
            if !tx.exists::<PatientRecord>(pid.as_str()) {
                return Err(err(ErrorCode::NotFound, format!("patient {pid} not found")));
            }
            let doctor: DoctorAccount = tx
                .get(doctor_id.as_str())
                .ok_or_else(|| err(ErrorCode::Forbidden, "doctor account no longer exists"))?;
            let request: HelpRequest = tx
                .get(request_id.as_str())
                .filter(|r: &HelpRequest| r.patient_id == pid)
                .ok_or_else(|| {
                    err(
                        ErrorCode::NotFound,
                        format!("request {request_id} for patient {pid} not found"),
                    )
                })?;
            if request.hospital_id.as_ref() != Some(&doctor.hospital_id) {
                return Err(err(ErrorCode::Forbidden, "request was routed to another hospital"));
            }
            let file = PatientFile {
                file_id: FileId::new(tx.next_id(PatientFile::TABLE)),
                patient_id: pid.clone(),
                doctor_id: doctor.doctor_id,
                request_id: request.request_id,
                notes: req.notes.clone(),
                created_at: tx.now(),
            };
            tx.put(file.clone());
            Ok(file)
        })
    })
    .await??;
    info!(event = "patient_file", file_id = %file.file_id, patient_id = %file.patient_id);
    Ok(Json(file))
}

/// Operational counts; no personal data, so no session is needed.
async fn stats(State(app): State<AppState>) -> Json<Stats> {
    Json(Stats::collect(&app.registry.read(), app.config.poll_interval_ms))
}
