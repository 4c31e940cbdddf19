//! Blocking HTTP client for the gateway.
//!
//! Holds a refresh token (usually from a token file), mints access tokens on
//! demand, and retries a request once with a fresh access token when the
//! gateway answers 401.

use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use reqwest::blocking::{RequestBuilder, Response};
use reqwest::{Method, StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ErrorBody, REQUEST_ID_HEADER};
use crate::audit::AuditEvent;
use crate::auth::{TokenFile, TokenFileError};
use crate::broker::{JobDescription, JobRecord, JobStatus, JobType, QueueTier, StatusChange, UtilizationSample};
use crate::catalog::{Action, ObjectUri, SignedRequest, StoredObject};
use crate::clock::Timestamp;

/// What `GET /jobs/{id}` returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: String,
    pub jobname: String,
    pub jobtype: JobType,
    pub queue: QueueTier,
    pub owner: String,
    pub owner_role: String,
    pub status: JobStatus,
    pub history: Vec<StatusChange>,
    pub attempts: u32,
    pub error: Option<String>,
    pub result_uri: Option<String>,
    pub walltime_minutes: u64,
    pub submitted_at: Timestamp,
}

impl From<&JobRecord> for JobView {
    fn from(r: &JobRecord) -> Self {
        JobView {
            job_id: r.job_id.clone(),
            jobname: r.jobname.clone(),
            jobtype: r.jobtype,
            queue: r.queue,
            owner: r.owner.clone(),
            owner_role: r.owner_role.to_string(),
            status: r.status,
            history: r.status_history.clone(),
            attempts: r.attempts,
            error: r.error.clone(),
            result_uri: r.result_uri.as_ref().map(ToString::to_string),
            walltime_minutes: r.walltime_minutes,
            submitted_at: r.submitted_at,
        }
    }
}

/// What `POST /data/sign` returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedUrl {
    pub url: String,
    pub uri: String,
    pub action: Action,
    pub actor: String,
    pub expires_at: u64,
    pub signature: String,
}

impl SignedUrl {
    pub fn for_request(base: &str, req: &SignedRequest) -> Self {
        let mut url = data_url(base, &req.uri).unwrap_or_else(|_| Url::parse("http://localhost/").unwrap());
        url.query_pairs_mut()
            .append_pair("action", req.action.as_str())
            .append_pair("actor", req.actor.as_str())
            .append_pair("issued", &req.issued_at.secs().to_string())
            .append_pair("expires", &req.expires_at.secs().to_string())
            .append_pair("sig", &req.signature);
        SignedUrl {
            url: url.to_string(),
            uri: req.uri.clone(),
            action: req.action,
            actor: req.actor.as_str().to_owned(),
            expires_at: req.expires_at.secs(),
            signature: req.signature.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
        request_id: Option<String>,
    },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("bad endpoint or URI: {0}")]
    Url(String),
    #[error(transparent)]
    TokenFile(#[from] TokenFileError),
    #[error("no credential configured")]
    NoCredential,
    #[error("timed out waiting for {0}")]
    Timeout(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// `base/data/<bucket>/<key segments>` with each segment percent-encoded.
fn data_url(base: &str, uri: &str) -> Result<Url, ClientError> {
    let parsed = ObjectUri::parse(uri).map_err(|e| ClientError::Url(e.to_string()))?;
    let mut url = Url::parse(base).map_err(|e| ClientError::Url(e.to_string()))?;
    url.path_segments_mut()
        .map_err(|_| ClientError::Url(base.to_owned()))?
        .pop_if_empty()
        .push("data")
        .push(parsed.bucket())
        .extend(parsed.key().split('/'));
    Ok(url)
}

#[derive(Debug)]
pub struct Client {
    endpoint: String,
    http: reqwest::blocking::Client,
    refresh_token: Option<String>,
    access_token: Mutex<Option<String>>,
}

impl Client {
    pub fn new(endpoint: &str) -> Self {
        Client {
            endpoint: endpoint.trim_end_matches('/').to_owned(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("http client builds"),
            refresh_token: None,
            access_token: Mutex::new(None),
        }
    }

    pub fn with_refresh_token(mut self, token: &str) -> Self {
        self.refresh_token = Some(token.to_owned());
        self
    }

    /// Uses a fixed access or session token; no refreshing.
    pub fn with_access_token(self, token: &str) -> Self {
        *self.access_token.lock().unwrap() = Some(token.to_owned());
        self
    }

    pub fn from_token_file(endpoint: &str, path: &Path) -> Result<Self, ClientError> {
        let file = TokenFile::load(path)?;
        Ok(Client::new(endpoint).with_refresh_token(&file.refresh_token))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint, path)
    }

    fn check(resp: Response) -> Result<Response, ClientError> {
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let request_id = resp
            .headers()
            .get(REQUEST_ID_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let text = resp.text().unwrap_or_default();
        let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => (b.error, b.message),
            Err(_) => ("HttpError".to_owned(), text),
        };
        Err(ClientError::Api { status, code, message, request_id })
    }

    /// Exchanges the refresh token for a new access token and caches it.
    pub fn refresh(&self) -> Result<String, ClientError> {
        let refresh = self.refresh_token.as_deref().ok_or(ClientError::NoCredential)?;
        let resp = self
            .http
            .post(self.url("/tokens/refresh"))
            .json(&json!({ "refresh_token": refresh }))
            .send()?;
        #[derive(Deserialize)]
        struct Minted {
            access_token: String,
        }
        let minted: Minted = Self::check(resp)?.json()?;
        *self.access_token.lock().unwrap() = Some(minted.access_token.clone());
        Ok(minted.access_token)
    }

    fn access(&self) -> Result<String, ClientError> {
        let cached = self.access_token.lock().unwrap().clone();
        match cached {
            Some(t) => Ok(t),
            None => self.refresh(),
        }
    }

    /// Sends an authenticated request, refreshing once on 401.
    fn send(&self, build: impl Fn(&reqwest::blocking::Client) -> RequestBuilder) -> Result<Response, ClientError> {
        let token = self.access()?;
        let resp = build(&self.http).bearer_auth(&token).send()?;
        if resp.status() == StatusCode::UNAUTHORIZED && self.refresh_token.is_some() {
            let token = self.refresh()?;
            return Self::check(build(&self.http).bearer_auth(&token).send()?);
        }
        Self::check(resp)
    }

    fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Ok(self.send(|h| h.get(self.url(path)))?.json()?)
    }

    fn get_bytes(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        Ok(self.send(|h| h.get(self.url(path)))?.bytes()?.to_vec())
    }

    fn post_json<T: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<T, ClientError> {
        Ok(self.send(|h| h.post(self.url(path)).json(body))?.json()?)
    }

    pub fn health(&self) -> Result<serde_json::Value, ClientError> {
        Ok(Self::check(self.http.get(self.url("/health")).send()?)?.json()?)
    }

    /// Revokes `token` (any kind). Revoking twice is fine.
    pub fn revoke(&self, token: &str) -> Result<String, ClientError> {
        let resp = self.http.post(self.url("/tokens/revoke")).json(&json!({ "token": token })).send()?;
        let v: serde_json::Value = Self::check(resp)?.json()?;
        Ok(v["revoked"].as_str().unwrap_or_default().to_owned())
    }

    /// Opens a session on the current access token; returns (token, expires_at).
    pub fn create_session(&self) -> Result<(String, u64), ClientError> {
        let v: serde_json::Value = self.send(|h| h.post(self.url("/sessions")))?.json()?;
        Ok((
            v["session_token"].as_str().unwrap_or_default().to_owned(),
            v["expires_at"].as_u64().unwrap_or_default(),
        ))
    }

    pub fn submit(&self, job: &JobDescription) -> Result<String, ClientError> {
        self.submit_raw(&serde_json::to_value(job).expect("job serializes"))
    }

    /// Submits an arbitrary JSON body, e.g. one read from a job file.
    pub fn submit_raw(&self, body: &serde_json::Value) -> Result<String, ClientError> {
        let v: serde_json::Value = self.post_json("/jobs", body)?;
        Ok(v["job_id"].as_str().unwrap_or_default().to_owned())
    }

    pub fn status(&self, job_id: &str) -> Result<JobView, ClientError> {
        self.get_json(&format!("/jobs/{job_id}"))
    }

    pub fn stdout(&self, job_id: &str) -> Result<Vec<u8>, ClientError> {
        self.get_bytes(&format!("/jobs/{job_id}/stdout"))
    }

    pub fn stderr(&self, job_id: &str) -> Result<Vec<u8>, ClientError> {
        self.get_bytes(&format!("/jobs/{job_id}/stderr"))
    }

    pub fn result(&self, job_id: &str) -> Result<Vec<u8>, ClientError> {
        self.get_bytes(&format!("/jobs/{job_id}/result"))
    }

    pub fn utilization(&self, job_id: &str) -> Result<Vec<UtilizationSample>, ClientError> {
        self.get_json(&format!("/jobs/{job_id}/utilization"))
    }

    pub fn cancel(&self, job_id: &str) -> Result<(), ClientError> {
        self.send(|h| h.post(self.url(&format!("/jobs/{job_id}/cancel"))))?;
        Ok(())
    }

    /// Polls until the job is terminal, backing off from 50 ms to 1 s.
    pub fn wait(&self, job_id: &str, timeout: Duration) -> Result<JobView, ClientError> {
        let deadline = Instant::now() + timeout;
        let mut pause = Duration::from_millis(50);
        loop {
            let view = self.status(job_id)?;
            if view.status.is_terminal() {
                return Ok(view);
            }
            if Instant::now() >= deadline {
                return Err(ClientError::Timeout(job_id.to_owned()));
            }
            std::thread::sleep(pause);
            pause = (pause * 2).min(Duration::from_secs(1));
        }
    }

    pub fn put(&self, uri: &str, bytes: Vec<u8>) -> Result<StoredObject, ClientError> {
        let url = data_url(&self.endpoint, uri)?;
        Ok(self.send(|h| h.request(Method::PUT, url.clone()).body(bytes.clone()))?.json()?)
    }

    pub fn get(&self, uri: &str) -> Result<Vec<u8>, ClientError> {
        let url = data_url(&self.endpoint, uri)?;
        Ok(self.send(|h| h.get(url.clone()))?.bytes()?.to_vec())
    }

    pub fn delete(&self, uri: &str) -> Result<(), ClientError> {
        let url = data_url(&self.endpoint, uri)?;
        self.send(|h| h.delete(url.clone()))?;
        Ok(())
    }

    pub fn sign(&self, uri: &str, action: Action, ttl_secs: u64) -> Result<SignedUrl, ClientError> {
        self.post_json("/data/sign", &json!({ "uri": uri, "action": action, "ttl_secs": ttl_secs }))
    }

    /// Downloads a signed URL; the signature is the only credential sent.
    pub fn fetch_signed(&self, url: &str) -> Result<Vec<u8>, ClientError> {
        Ok(Self::check(self.http.get(url).send()?)?.bytes()?.to_vec())
    }

    pub fn set_policy(&self, target: &str, role: &str, actions: &[Action]) -> Result<(), ClientError> {
        let _: serde_json::Value =
            self.post_json("/data/policy", &json!({ "target": target, "role": role, "actions": actions }))?;
        Ok(())
    }

    pub fn audit(&self, from: u64, to: Option<u64>) -> Result<Vec<AuditEvent>, ClientError> {
        let mut path = format!("/audit?from={from}");
        if let Some(to) = to {
            path.push_str(&format!("&to={to}"));
        }
        self.get_json(&path)
    }

    pub fn audit_verify(&self) -> Result<serde_json::Value, ClientError> {
        self.get_json("/audit/verify")
    }
}
