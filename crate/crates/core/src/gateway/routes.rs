use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{request_id_value, ApiError, Egress, GatewayState, JobView, SignedUrl, REQUEST_ID_HEADER};
use crate::audit::{Actor, EventDraft, Outcome};
use crate::auth::Caller;
use crate::broker::JobDescription;
use crate::catalog::{Action, ObjectUri, SignedRequest};
use crate::clock::Timestamp;

type St = State<Arc<GatewayState>>;
type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone)]
struct RequestId(String);

async fn assign_request_id(mut req: Request, next: Next) -> Response {
    let id = req
        .headers()
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty() && v.len() <= 128)
        .map(str::to_owned)
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    req.extensions_mut().insert(RequestId(id.clone()));
    let mut resp = next.run(req).await;
    resp.headers_mut().insert(REQUEST_ID_HEADER, request_id_value(&id));
    resp
}

pub fn router(state: Arc<GatewayState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/tokens/refresh", post(refresh_token))
        .route("/tokens/revoke", post(revoke_token))
        .route("/sessions", post(create_session))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/stdout", get(job_stdout))
        .route("/jobs/{id}/stderr", get(job_stderr))
        .route("/jobs/{id}/result", get(job_result))
        .route("/jobs/{id}/utilization", get(job_utilization))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/data/sign", post(sign_data))
        .route("/data/policy", post(set_policy))
        .route("/data/{bucket}/{*key}", get(get_data).put(put_data).delete(delete_data))
        .route("/audit", get(read_audit))
        .route("/audit/verify", get(verify_audit))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint") })
        .layer(middleware::from_fn(assign_request_id))
        .with_state(state)
}

fn bearer_token(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim().to_owned()).filter(|t| !t.is_empty())
}

/// The authenticated caller, or 401 before any other processing.
fn caller(st: &GatewayState, headers: &HeaderMap, rid: &RequestId) -> ApiResult<Caller> {
    let token = bearer_token(headers).ok_or_else(|| ApiError::unauthorized("missing bearer credential"))?;
    st.services.auth.validate(&token)?;
    Ok(Caller::bearer(token).with_request_id(rid.0.clone()))
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8], code: &str) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, code, e.to_string()))
}

fn octets(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
}

fn data_uri(bucket: &str, key: &str) -> ApiResult<String> {
    let uri = format!("s3://{bucket}/{key}");
    ObjectUri::parse(&uri).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidUri", e.to_string()))?;
    Ok(uri)
}

async fn health(State(st): St) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "now": st.services.clock.now().secs() }))
}

#[derive(Debug, Deserialize, Default)]
struct TokenBody {
    #[serde(alias = "refresh_token")]
    token: Option<String>,
}

/// The token to act on: the body's, else the bearer header's.
fn presented_token(headers: &HeaderMap, body: &[u8]) -> ApiResult<String> {
    let from_body = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        parse_json::<TokenBody>(body, "MalformedRequest")?.token
    };
    from_body
        .or_else(|| bearer_token(headers))
        .ok_or_else(|| ApiError::unauthorized("no token presented"))
}

async fn refresh_token(State(st): St, headers: HeaderMap, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let token = presented_token(&headers, &body)?;
    let issued = st.services.auth.refresh_access_token(&token)?;
    Ok(Json(json!({
        "access_token": issued.bearer,
        "token_id": issued.token.token_id.0,
        "expires_at": issued.token.expires_at.secs(),
    })))
}

async fn revoke_token(State(st): St, headers: HeaderMap, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let token = presented_token(&headers, &body)?;
    let id = st.services.auth.revoke_bearer(&token)?;
    Ok(Json(json!({ "revoked": id.0 })))
}

async fn create_session(State(st): St, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    let token = bearer_token(&headers).ok_or_else(|| ApiError::unauthorized("missing bearer credential"))?;
    let issued = st.services.auth.create_session(&token)?;
    Ok(Json(json!({
        "session_token": issued.bearer,
        "session_id": issued.token.session_id.0,
        "expires_at": issued.token.expires_at.secs(),
    })))
}

async fn submit_job(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let caller = caller(&st, &headers, &rid)?;
    let desc: JobDescription = parse_json(&body, "MalformedJob")?;
    let job_id = st.services.broker.submit_job(&caller, &desc)?;
    Ok(Json(json!({ "job_id": job_id })))
}

async fn job_status(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<JobView>> {
    let caller = caller(&st, &headers, &rid)?;
    let rec = st.services.broker.read_job(&caller, &id, "job_status")?;
    Ok(Json(JobView::from(&rec)))
}

async fn job_stdout(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let caller = caller(&st, &headers, &rid)?;
    Ok(octets(st.services.broker.read_job(&caller, &id, "job_stdout")?.stdout))
}

async fn job_stderr(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let caller = caller(&st, &headers, &rid)?;
    Ok(octets(st.services.broker.read_job(&caller, &id, "job_stderr")?.stderr))
}

async fn job_result(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let caller = caller(&st, &headers, &rid)?;
    let rec = st.services.broker.read_job(&caller, &id, "job_result")?;
    if !rec.status.is_terminal() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "NotTerminal",
            format!("job {id} is still {}", rec.status),
        ));
    }
    let uri = rec.result_uri.ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "NoResult", format!("job {id} ended {} without a result", rec.status))
    })?;
    let bytes = st.services.catalog.fetch(&caller, &uri.to_string(), Action::Read)?;
    Ok(octets(bytes))
}

async fn job_utilization(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let caller = caller(&st, &headers, &rid)?;
    let rec = st.services.broker.read_job(&caller, &id, "job_utilization")?;
    Ok(Json(rec.utilization).into_response())
}

async fn cancel_job(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let caller = caller(&st, &headers, &rid)?;
    st.services.broker.cancel_job(&caller, &id)?;
    Ok(Json(json!({ "job_id": id, "status": "cancelled" })))
}

async fn put_data(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path((bucket, key)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let caller = caller(&st, &headers, &rid)?;
    let stored = st.services.catalog.put_object(&caller, &data_uri(&bucket, &key)?, &body)?;
    Ok(Json(stored).into_response())
}

async fn delete_data(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path((bucket, key)): Path<(String, String)>,
) -> ApiResult<Json<serde_json::Value>> {
    let caller = caller(&st, &headers, &rid)?;
    let uri = data_uri(&bucket, &key)?;
    st.services.catalog.delete_object(&caller, &uri)?;
    Ok(Json(json!({ "deleted": uri })))
}

/// Query parameters of a signed URL; all absent for a bearer download.
#[derive(Debug, Default, Deserialize)]
struct SignedQuery {
    action: Option<Action>,
    actor: Option<String>,
    issued: Option<u64>,
    expires: Option<u64>,
    sig: Option<String>,
}

async fn get_data(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Path((bucket, key)): Path<(String, String)>,
    Query(q): Query<SignedQuery>,
) -> ApiResult<Response> {
    let uri = data_uri(&bucket, &key)?;
    let catalog = &st.services.catalog;
    let Some(sig) = q.sig else {
        let caller = caller(&st, &headers, &rid)?;
        let action = match st.egress {
            Egress::Open => Action::Read,
            Egress::EnclaveOnly => Action::Export,
        };
        return Ok(octets(catalog.fetch(&caller, &uri, action)?));
    };
    let bad = || ApiError::new(StatusCode::FORBIDDEN, "BadSignature", "incomplete signed request");
    let action = q.action.ok_or_else(bad)?;
    let actor = q.actor.as_deref().and_then(Actor::parse).ok_or_else(bad)?;
    let (issued, expires) = q.issued.zip(q.expires).ok_or_else(bad)?;
    if st.egress == Egress::EnclaveOnly && action != Action::Export {
        let role = st
            .services
            .auth
            .subject_for_actor(&actor)
            .map(|s| s.home_role_name())
            .unwrap_or_default();
        st.services.audit.append(
            EventDraft::new(actor, role, "get_object", &uri, Outcome::Denied)
                .request_id(Some(&rid.0))
                .detail("EgressDenied"),
        );
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "EgressDenied",
            "downloads from the enclave need a URL signed for export",
        ));
    }
    let req = SignedRequest {
        uri,
        action,
        actor,
        issued_at: Timestamp(issued),
        expires_at: Timestamp(expires),
        signature: sig,
    };
    Ok(octets(catalog.get_object(&req, Some(&rid.0))?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignBody {
    uri: String,
    #[serde(default = "default_sign_action")]
    action: Action,
    #[serde(default = "default_ttl")]
    ttl_secs: u64,
}

fn default_sign_action() -> Action {
    Action::Read
}

fn default_ttl() -> u64 {
    300
}

async fn sign_data(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<SignedUrl>> {
    let caller = caller(&st, &headers, &rid)?;
    let b: SignBody = parse_json(&body, "MalformedRequest")?;
    let req = st.services.catalog.sign_url(&caller, &b.uri, b.action, b.ttl_secs)?;
    let host = headers.get(header::HOST).and_then(|h| h.to_str().ok()).unwrap_or("localhost");
    Ok(Json(SignedUrl::for_request(&format!("http://{host}"), &req)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyBody {
    target: String,
    role: String,
    actions: Vec<Action>,
}

async fn set_policy(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let caller = caller(&st, &headers, &rid)?;
    let b: PolicyBody = parse_json(&body, "MalformedRequest")?;
    let role = crate::auth::RoleId::new(&b.role);
    st.services.catalog.set_policy(&caller, &b.target, &role, &b.actions)?;
    Ok(Json(json!({ "target": b.target, "role": b.role, "actions": b.actions })))
}

#[derive(Debug, Deserialize)]
struct Range {
    #[serde(default)]
    from: u64,
    to: Option<u64>,
}

async fn read_audit(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
    Query(range): Query<Range>,
) -> ApiResult<Response> {
    let caller = caller(&st, &headers, &rid)?;
    let events = st.services.catalog.read_audit(&caller, range.from, range.to.unwrap_or(u64::MAX))?;
    Ok(Json(events).into_response())
}

async fn verify_audit(
    State(st): St,
    Extension(rid): Extension<RequestId>,
    headers: HeaderMap,
) -> ApiResult<Json<serde_json::Value>> {
    let caller = caller(&st, &headers, &rid)?;
    let verdict = st.services.catalog.verify_chain(&caller)?;
    let length = st.services.audit.len();
    Ok(Json(match verdict {
        Ok(()) => json!({ "ok": true, "events": length }),
        Err(b) => json!({ "ok": false, "events": length, "break_index": b.index, "reason": b.reason }),
    }))
}
