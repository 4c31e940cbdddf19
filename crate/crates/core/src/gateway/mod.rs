//! HTTP/JSON front end over auth, catalog and broker.
//!
//! Every response carries an `x-request-id` header (the client's, if it sent
//! one) and the same id is written into the audit events the request
//! produced. Errors are `{"error": <code>, "message": <text>}`.
//!
//! With [`Egress::EnclaveOnly`], `GET /data/...` serves only objects whose
//! policy grants `export` to the caller; signed URLs must be signed for
//! `export` too. Job results and streams are analysis outputs and are always
//! readable by the job's owner.

pub mod client;
mod routes;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};

pub use self::client::{Client, ClientError, JobView, SignedUrl};
pub use self::routes::router;
use crate::auth::AuthError;
use crate::broker::BrokerError;
use crate::catalog::CatalogError;
use crate::deployment::Services;

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Egress {
    /// Any readable object may be downloaded.
    #[default]
    Open,
    /// Downloads need an explicit `export` grant.
    EnclaveOnly,
}

#[derive(Debug, Clone)]
pub struct GatewayState {
    pub services: Services,
    pub egress: Egress,
}

impl GatewayState {
    pub fn new(services: Services, egress: Egress) -> Arc<Self> {
        Arc::new(GatewayState { services, egress })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_owned(),
            message: message.into(),
        }
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "AuthFailure", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            message: self.message,
        };
        (self.status, axum::Json(body)).into_response()
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let status = match &e {
            e if e.is_credential_failure() => StatusCode::UNAUTHORIZED,
            AuthError::AlreadyRegistered(_) | AuthError::DuplicatePrincipal(_) | AuthError::DuplicateRole(_) => {
                StatusCode::CONFLICT
            }
            AuthError::InvalidApproval(_) => StatusCode::FORBIDDEN,
            AuthError::UnknownJob(_) | AuthError::UnknownRole(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::CONFLICT,
        };
        let code = if status == StatusCode::UNAUTHORIZED { "AuthFailure" } else { e.code() };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        if let CatalogError::Auth(a) = e {
            return a.into();
        }
        let status = match &e {
            CatalogError::InvalidUri(_) => StatusCode::BAD_REQUEST,
            CatalogError::AccessDenied { .. } | CatalogError::BadSignature | CatalogError::ExpiredSignature => {
                StatusCode::FORBIDDEN
            }
            CatalogError::NotFound(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<BrokerError> for ApiError {
    fn from(e: BrokerError) -> Self {
        if let BrokerError::Auth(a) = e {
            return a.into();
        }
        let status = match &e {
            BrokerError::MalformedJob(_) => StatusCode::BAD_REQUEST,
            BrokerError::UnknownQueue(_) | BrokerError::UnknownJob(_) => StatusCode::NOT_FOUND,
            BrokerError::AccessDenied(_) => StatusCode::FORBIDDEN,
            BrokerError::AlreadyTerminal(_) | BrokerError::IllegalTransition { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

fn request_id_value(id: &str) -> HeaderValue {
    HeaderValue::from_str(id).unwrap_or_else(|_| HeaderValue::from_static("invalid"))
}

/// A gateway listening on a background thread; stops when dropped.
#[derive(Debug)]
pub struct GatewayHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl GatewayHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests and waits for in-flight ones to finish.
    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("gateway thread panicked"))),
            None => Ok(()),
        }
    }

    /// Blocks until the server stops on its own (it only does on error).
    pub fn wait(mut self) -> std::io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("gateway thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Binds `addr` (use port 0 for any free port) and serves on a new thread.
pub fn spawn(addr: &str, state: Arc<GatewayState>) -> std::io::Result<GatewayHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name("gateway".into()).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    })?;
    Ok(GatewayHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
