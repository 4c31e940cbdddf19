//! Identity registry, credentials and delegated role assumption.
//!
//! Principals are seeded by an administrator. A principal registers a client
//! once and receives a refresh token; the refresh token mints access tokens
//! valid for exactly one hour, and an access token can open a session valid
//! for exactly six hours. Any token can be revoked.
//!
//! Credentials travel as opaque url-safe base64 strings encoding a kind byte,
//! a 128-bit token id and a 256-bit secret. Only a SHA-256 of the secret is
//! kept, compared in constant time.
//!
//! Worker instances run under the instance-default role until they assume
//! the role of the principal owning the job they execute.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use crate::audit::{Actor, AuditLog, EventDraft, Outcome};
use crate::clock::{SharedClock, Timestamp};

pub const ACCESS_TOKEN_LIFETIME_SECS: u64 = 3600;
pub const SESSION_LIFETIME_SECS: u64 = 6 * 3600;
pub const INSTANCE_DEFAULT_ROLE: &str = "instance-default";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoleId(pub String);

impl RoleId {
    pub fn new(id: impl Into<String>) -> Self {
        RoleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub role_id: RoleId,
    pub description: String,
    pub is_instance_default: bool,
    /// May read the audit log and any job record.
    pub is_auditor: bool,
}

impl Role {
    pub fn new(id: &str, description: &str) -> Self {
        Role {
            role_id: RoleId::new(id),
            description: description.to_owned(),
            is_instance_default: false,
            is_auditor: false,
        }
    }

    pub fn auditor(mut self) -> Self {
        self.is_auditor = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub principal_id: String,
    pub display_name: String,
    /// The first role is the principal's home role: jobs run under it and
    /// objects they create are owned by it.
    pub roles: Vec<RoleId>,
    pub registered_at: Timestamp,
}

impl Principal {
    pub fn home_role(&self) -> Option<&RoleId> {
        self.roles.first()
    }

    pub fn has_role(&self, role: &RoleId) -> bool {
        self.roles.contains(role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Access,
    Session,
    Refresh,
}

impl TokenKind {
    fn tag(self) -> u8 {
        match self {
            TokenKind::Access => b'A',
            TokenKind::Session => b'S',
            TokenKind::Refresh => b'R',
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            b'A' => Some(TokenKind::Access),
            b'S' => Some(TokenKind::Session),
            b'R' => Some(TokenKind::Refresh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub String);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    pub token_id: TokenId,
    pub principal_id: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub revoked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: TokenId,
    pub principal_id: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub backing_token_id: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshToken {
    pub token_id: TokenId,
    pub principal_id: String,
    pub issued_at: Timestamp,
    pub revoked: bool,
}

/// A freshly minted token together with the bearer string the holder presents.
/// The bearer string is only ever available here.
#[derive(Debug, Clone)]
pub struct Issued<T> {
    pub token: T,
    pub bearer: String,
}

/// Administrator sign-off allowing one principal to register a client.
#[derive(Debug, Clone)]
pub struct RegistrationApproval {
    principal_id: String,
}

impl RegistrationApproval {
    pub fn principal_id(&self) -> &str {
        &self.principal_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleGrant {
    pub instance_id: String,
    pub assumed_role: RoleId,
    pub job_id: String,
    pub granted_at: Timestamp,
    pub released: bool,
}

/// What the broker vouches for when a worker asks to take on a job owner's role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobAssignment {
    pub job_id: String,
    pub instance_id: String,
    pub owner_role: RoleId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("unknown principal `{0}`")]
    UnknownPrincipal(String),
    #[error("principal `{0}` already exists")]
    DuplicatePrincipal(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("role `{0}` already exists")]
    DuplicateRole(String),
    #[error("exactly one instance-default role may exist")]
    InstanceDefaultExists,
    #[error("principal `{0}` already holds an unrevoked refresh token")]
    AlreadyRegistered(String),
    #[error("registration approval does not match principal `{0}`")]
    InvalidApproval(String),
    #[error("unknown token")]
    UnknownToken,
    #[error("token has expired")]
    ExpiredToken,
    #[error("token has been revoked")]
    RevokedToken,
    #[error("instance `{instance_id}` already holds an unreleased grant for job `{job_id}`")]
    GrantConflict { instance_id: String, job_id: String },
    #[error("no active grant for instance `{instance_id}` and job `{job_id}`")]
    NoActiveGrant { instance_id: String, job_id: String },
    #[error("unknown job `{0}`")]
    UnknownJob(String),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::UnknownPrincipal(_) => "UnknownPrincipal",
            AuthError::DuplicatePrincipal(_) => "DuplicatePrincipal",
            AuthError::UnknownRole(_) => "UnknownRole",
            AuthError::DuplicateRole(_) => "DuplicateRole",
            AuthError::InstanceDefaultExists => "InstanceDefaultExists",
            AuthError::AlreadyRegistered(_) => "AlreadyRegistered",
            AuthError::InvalidApproval(_) => "InvalidApproval",
            AuthError::UnknownToken => "UnknownToken",
            AuthError::ExpiredToken => "ExpiredToken",
            AuthError::RevokedToken => "RevokedToken",
            AuthError::GrantConflict { .. } => "GrantConflict",
            AuthError::NoActiveGrant { .. } => "NoActiveGrant",
            AuthError::UnknownJob(_) => "UnknownJob",
        }
    }

    /// Whether the error means the presented credential is not usable.
    pub fn is_credential_failure(&self) -> bool {
        matches!(
            self,
            AuthError::UnknownToken | AuthError::ExpiredToken | AuthError::RevokedToken | AuthError::UnknownPrincipal(_)
        )
    }
}

#[derive(Debug, Clone)]
struct StoredToken {
    kind: TokenKind,
    principal_id: String,
    secret_digest: [u8; 32],
    issued_at: Timestamp,
    expires_at: Option<Timestamp>,
    revoked: bool,
    backing: Option<TokenId>,
}

#[derive(Debug, Default)]
struct AuthState {
    roles: HashMap<RoleId, Role>,
    principals: HashMap<String, Principal>,
    tokens: HashMap<TokenId, StoredToken>,
    grants: HashMap<String, RoleGrant>,
}

#[derive(Debug)]
pub struct AuthService {
    clock: SharedClock,
    audit: Arc<AuditLog>,
    state: Mutex<AuthState>,
}

fn digest(secret: &[u8]) -> [u8; 32] {
    Sha256::digest(secret).into()
}

fn encode_bearer(kind: TokenKind, id: &[u8; 16], secret: &[u8; 32]) -> String {
    let mut raw = Vec::with_capacity(49);
    raw.push(kind.tag());
    raw.extend_from_slice(id);
    raw.extend_from_slice(secret);
    URL_SAFE_NO_PAD.encode(raw)
}

struct DecodedBearer {
    kind: TokenKind,
    id: TokenId,
    secret: [u8; 32],
}

fn decode_bearer(bearer: &str) -> Option<DecodedBearer> {
    let raw = URL_SAFE_NO_PAD.decode(bearer.trim()).ok()?;
    if raw.len() != 49 {
        return None;
    }
    Some(DecodedBearer {
        kind: TokenKind::from_tag(raw[0])?,
        id: TokenId(hex::encode(&raw[1..17])),
        secret: raw[17..].try_into().ok()?,
    })
}

/// Extracts the token id from a bearer string without validating it.
pub fn token_id_of(bearer: &str) -> Option<TokenId> {
    decode_bearer(bearer).map(|d| d.id)
}

impl AuthService {
    /// Creates a registry holding only the instance-default role.
    pub fn new(clock: SharedClock, audit: Arc<AuditLog>) -> Self {
        let mut state = AuthState::default();
        let default_role = Role {
            role_id: RoleId::new(INSTANCE_DEFAULT_ROLE),
            description: "minimal worker privileges".into(),
            is_instance_default: true,
            is_auditor: false,
        };
        state.roles.insert(default_role.role_id.clone(), default_role);
        AuthService {
            clock,
            audit,
            state: Mutex::new(state),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn instance_default_role(&self) -> RoleId {
        RoleId::new(INSTANCE_DEFAULT_ROLE)
    }

    pub fn add_role(&self, role: Role) -> Result<(), AuthError> {
        let mut state = self.state.lock().unwrap();
        if role.is_instance_default {
            return Err(AuthError::InstanceDefaultExists);
        }
        if state.roles.contains_key(&role.role_id) {
            return Err(AuthError::DuplicateRole(role.role_id.0));
        }
        state.roles.insert(role.role_id.clone(), role);
        Ok(())
    }

    pub fn role(&self, id: &RoleId) -> Option<Role> {
        self.state.lock().unwrap().roles.get(id).cloned()
    }

    pub fn roles(&self) -> Vec<Role> {
        let mut roles: Vec<Role> = self.state.lock().unwrap().roles.values().cloned().collect();
        roles.sort_by(|a, b| a.role_id.cmp(&b.role_id));
        roles
    }

    pub fn is_auditor_role(&self, id: &RoleId) -> bool {
        self.role(id).is_some_and(|r| r.is_auditor)
    }

    pub fn add_principal(
        &self,
        principal_id: &str,
        display_name: &str,
        roles: &[&str],
    ) -> Result<Principal, AuthError> {
        let now = self.clock.now();
        let mut state = self.state.lock().unwrap();
        if state.principals.contains_key(principal_id) {
            return Err(AuthError::DuplicatePrincipal(principal_id.to_owned()));
        }
        let mut seen = BTreeSet::new();
        let mut role_ids = Vec::new();
        for r in roles {
            let id = RoleId::new(*r);
            let role = state
                .roles
                .get(&id)
                .ok_or_else(|| AuthError::UnknownRole((*r).to_owned()))?;
            if role.is_instance_default {
                return Err(AuthError::UnknownRole((*r).to_owned()));
            }
            if seen.insert(id.clone()) {
                role_ids.push(id);
            }
        }
        let principal = Principal {
            principal_id: principal_id.to_owned(),
            display_name: display_name.to_owned(),
            roles: role_ids,
            registered_at: now,
        };
        state
            .principals
            .insert(principal_id.to_owned(), principal.clone());
        Ok(principal)
    }

    pub fn principal(&self, principal_id: &str) -> Option<Principal> {
        self.state.lock().unwrap().principals.get(principal_id).cloned()
    }

    pub fn approve_registration(&self, principal_id: &str) -> Result<RegistrationApproval, AuthError> {
        if self.principal(principal_id).is_none() {
            return Err(AuthError::UnknownPrincipal(principal_id.to_owned()));
        }
        Ok(RegistrationApproval {
            principal_id: principal_id.to_owned(),
        })
    }

    fn mint(
        state: &mut AuthState,
        kind: TokenKind,
        principal_id: &str,
        issued_at: Timestamp,
        lifetime: Option<u64>,
        backing: Option<TokenId>,
    ) -> (TokenId, String) {
        let mut rng = rand::thread_rng();
        loop {
            let mut id = [0u8; 16];
            let mut secret = [0u8; 32];
            rng.fill_bytes(&mut id);
            rng.fill_bytes(&mut secret);
            let token_id = TokenId(hex::encode(id));
            if state.tokens.contains_key(&token_id) {
                continue;
            }
            state.tokens.insert(
                token_id.clone(),
                StoredToken {
                    kind,
                    principal_id: principal_id.to_owned(),
                    secret_digest: digest(&secret),
                    issued_at,
                    expires_at: lifetime.map(|l| issued_at.plus(l)),
                    revoked: false,
                    backing,
                },
            );
            return (token_id, encode_bearer(kind, &id, &secret));
        }
    }

    /// One-time client registration. A new refresh token can only be issued
    /// once every earlier one for the principal has been revoked.
    pub fn register_client(
        &self,
        principal_id: &str,
        approval: &RegistrationApproval,
    ) -> Result<Issued<RefreshToken>, AuthError> {
        let now = self.clock.now();
        let mut state = self.state.lock().unwrap();
        if !state.principals.contains_key(principal_id) {
            return Err(AuthError::UnknownPrincipal(principal_id.to_owned()));
        }
        if approval.principal_id != principal_id {
            return Err(AuthError::InvalidApproval(principal_id.to_owned()));
        }
        let already = state
            .tokens
            .values()
            .any(|t| t.kind == TokenKind::Refresh && t.principal_id == principal_id && !t.revoked);
        if already {
            return Err(AuthError::AlreadyRegistered(principal_id.to_owned()));
        }
        let (token_id, bearer) =
            Self::mint(&mut state, TokenKind::Refresh, principal_id, now, None, None);
        Ok(Issued {
            token: RefreshToken {
                token_id,
                principal_id: principal_id.to_owned(),
                issued_at: now,
                revoked: false,
            },
            bearer,
        })
    }

    /// Looks a bearer string up and checks its secret. Expiry and revocation
    /// are left to the caller.
    fn lookup<'a>(
        state: &'a AuthState,
        bearer: &str,
    ) -> Result<(TokenId, &'a StoredToken), AuthError> {
        let decoded = decode_bearer(bearer).ok_or(AuthError::UnknownToken)?;
        let stored = state.tokens.get(&decoded.id).ok_or(AuthError::UnknownToken)?;
        let matches: bool = digest(&decoded.secret).ct_eq(&stored.secret_digest).into();
        if !matches || stored.kind != decoded.kind {
            return Err(AuthError::UnknownToken);
        }
        Ok((decoded.id, stored))
    }

    pub fn refresh_access_token(&self, refresh_bearer: &str) -> Result<Issued<AccessToken>, AuthError> {
        let now = self.clock.now();
        let mut state = self.state.lock().unwrap();
        let (_, stored) = Self::lookup(&state, refresh_bearer)?;
        if stored.kind != TokenKind::Refresh {
            return Err(AuthError::UnknownToken);
        }
        if stored.revoked {
            return Err(AuthError::RevokedToken);
        }
        let principal_id = stored.principal_id.clone();
        let (token_id, bearer) = Self::mint(
            &mut state,
            TokenKind::Access,
            &principal_id,
            now,
            Some(ACCESS_TOKEN_LIFETIME_SECS),
            None,
        );
        Ok(Issued {
            token: AccessToken {
                token_id,
                principal_id,
                issued_at: now,
                expires_at: now.plus(ACCESS_TOKEN_LIFETIME_SECS),
                revoked: false,
            },
            bearer,
        })
    }

    fn check_live(stored: &StoredToken, now: Timestamp) -> Result<(), AuthError> {
        if stored.revoked {
            return Err(AuthError::RevokedToken);
        }
        match stored.expires_at {
            Some(expires) if now >= expires => Err(AuthError::ExpiredToken),
            _ => Ok(()),
        }
    }

    pub fn create_session(&self, access_bearer: &str) -> Result<Issued<Session>, AuthError> {
        let now = self.clock.now();
        let mut state = self.state.lock().unwrap();
        let (backing_id, stored) = Self::lookup(&state, access_bearer)?;
        if stored.kind != TokenKind::Access {
            return Err(AuthError::UnknownToken);
        }
        Self::check_live(stored, now)?;
        let principal_id = stored.principal_id.clone();
        let (session_id, bearer) = Self::mint(
            &mut state,
            TokenKind::Session,
            &principal_id,
            now,
            Some(SESSION_LIFETIME_SECS),
            Some(backing_id.clone()),
        );
        Ok(Issued {
            token: Session {
                session_id,
                principal_id,
                issued_at: now,
                expires_at: now.plus(SESSION_LIFETIME_SECS),
                backing_token_id: backing_id,
            },
            bearer,
        })
    }

    /// Resolves an access token or session to its principal. Refresh tokens
    /// authenticate nothing; they only mint.
    pub fn validate(&self, bearer: &str) -> Result<Principal, AuthError> {
        let now = self.clock.now();
        let state = self.state.lock().unwrap();
        let (_, stored) = Self::lookup(&state, bearer)?;
        match stored.kind {
            TokenKind::Refresh => return Err(AuthError::UnknownToken),
            TokenKind::Access => Self::check_live(stored, now)?,
            TokenKind::Session => {
                Self::check_live(stored, now)?;
                // Revoking the backing token ends the session; its expiry does not.
                let backing_revoked = stored
                    .backing
                    .as_ref()
                    .and_then(|id| state.tokens.get(id))
                    .is_some_and(|t| t.revoked);
                if backing_revoked {
                    return Err(AuthError::RevokedToken);
                }
            }
        }
        state
            .principals
            .get(&stored.principal_id)
            .cloned()
            .ok_or_else(|| AuthError::UnknownPrincipal(stored.principal_id.clone()))
    }

    /// Permanently invalidates a token of any kind. Idempotent.
    pub fn revoke(&self, token_id: &TokenId) -> Result<(), AuthError> {
        let mut state = self.state.lock().unwrap();
        let stored = state.tokens.get_mut(token_id).ok_or(AuthError::UnknownToken)?;
        stored.revoked = true;
        Ok(())
    }

    /// Revokes the token a bearer string names. The secret must match.
    pub fn revoke_bearer(&self, bearer: &str) -> Result<TokenId, AuthError> {
        let id = {
            let state = self.state.lock().unwrap();
            Self::lookup(&state, bearer)?.0
        };
        self.revoke(&id)?;
        Ok(id)
    }

    pub fn token_info(&self, token_id: &TokenId) -> Option<(TokenKind, String, Timestamp, bool)> {
        let state = self.state.lock().unwrap();
        state
            .tokens
            .get(token_id)
            .map(|t| (t.kind, t.principal_id.clone(), t.issued_at, t.revoked))
    }

    /// The role an instance's data accesses are evaluated against right now.
    pub fn effective_role(&self, instance_id: &str) -> RoleId {
        let state = self.state.lock().unwrap();
        state
            .grants
            .get(instance_id)
            .filter(|g| !g.released)
            .map(|g| g.assumed_role.clone())
            .unwrap_or_else(|| RoleId::new(INSTANCE_DEFAULT_ROLE))
    }

    pub fn active_grant(&self, instance_id: &str) -> Option<RoleGrant> {
        let state = self.state.lock().unwrap();
        state.grants.get(instance_id).filter(|g| !g.released).cloned()
    }

    pub fn assume_role(&self, assignment: &JobAssignment) -> Result<RoleGrant, AuthError> {
        let now = self.clock.now();
        let mut state = self.state.lock().unwrap();
        if let Some(g) = state.grants.get(&assignment.instance_id).filter(|g| !g.released) {
            return Err(AuthError::GrantConflict {
                instance_id: assignment.instance_id.clone(),
                job_id: g.job_id.clone(),
            });
        }
        if !state.roles.contains_key(&assignment.owner_role) {
            return Err(AuthError::UnknownRole(assignment.owner_role.0.clone()));
        }
        let grant = RoleGrant {
            instance_id: assignment.instance_id.clone(),
            assumed_role: assignment.owner_role.clone(),
            job_id: assignment.job_id.clone(),
            granted_at: now,
            released: false,
        };
        state
            .grants
            .insert(assignment.instance_id.clone(), grant.clone());
        self.audit.append(EventDraft::new(
            Actor::instance(&assignment.instance_id),
            assignment.owner_role.as_str(),
            "role_assume",
            assignment.job_id.as_str(),
            Outcome::Allowed,
        ));
        Ok(grant)
    }

    pub fn release_role(&self, instance_id: &str, job_id: &str) -> Result<(), AuthError> {
        self.release_inner(instance_id, Some(job_id), None)
    }

    /// Releases whatever grant a lost or terminated instance still holds.
    pub fn release_instance(&self, instance_id: &str, reason: &str) -> bool {
        self.release_inner(instance_id, None, Some(reason)).is_ok()
    }

    fn release_inner(
        &self,
        instance_id: &str,
        job_id: Option<&str>,
        reason: Option<&str>,
    ) -> Result<(), AuthError> {
        let mut state = self.state.lock().unwrap();
        let no_grant = || AuthError::NoActiveGrant {
            instance_id: instance_id.to_owned(),
            job_id: job_id.unwrap_or("*").to_owned(),
        };
        let grant = state
            .grants
            .get_mut(instance_id)
            .filter(|g| !g.released && job_id.is_none_or(|j| g.job_id == j))
            .ok_or_else(no_grant)?;
        grant.released = true;
        let mut draft = EventDraft::new(
            Actor::instance(instance_id),
            grant.assumed_role.as_str(),
            "role_release",
            grant.job_id.as_str(),
            Outcome::Allowed,
        );
        if let Some(reason) = reason {
            draft = draft.detail(reason);
        }
        self.audit.append(draft);
        Ok(())
    }
}

/// How a request identifies itself: a bearer credential from a user, or a
/// worker instance inside the enclave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Identity {
    Bearer(String),
    Instance(String),
}

/// An identity plus the gateway request id echoed into audit events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub identity: Identity,
    pub request_id: Option<String>,
}

impl Caller {
    pub fn bearer(credential: impl Into<String>) -> Self {
        Caller {
            identity: Identity::Bearer(credential.into()),
            request_id: None,
        }
    }

    pub fn instance(instance_id: impl Into<String>) -> Self {
        Caller {
            identity: Identity::Instance(instance_id.into()),
            request_id: None,
        }
    }

    pub fn with_request_id(mut self, request_id: impl Into<String>) -> Self {
        self.request_id = Some(request_id.into());
        self
    }
}

/// A resolved caller: who it is and which roles its accesses are checked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subject {
    pub actor: Actor,
    /// Candidate roles in preference order; the first is the home role.
    pub roles: Vec<RoleId>,
    pub principal: Option<Principal>,
}

impl Subject {
    pub fn home_role(&self) -> Option<&RoleId> {
        self.roles.first()
    }

    pub fn home_role_name(&self) -> String {
        self.home_role().map(|r| r.0.clone()).unwrap_or_default()
    }
}

impl AuthService {
    pub fn resolve(&self, caller: &Caller) -> Result<Subject, AuthError> {
        match &caller.identity {
            Identity::Bearer(bearer) => {
                let principal = self.validate(bearer)?;
                Ok(Subject {
                    actor: Actor::principal(&principal.principal_id),
                    roles: principal.roles.clone(),
                    principal: Some(principal),
                })
            }
            Identity::Instance(id) => Ok(self.instance_subject(id)),
        }
    }

    pub fn instance_subject(&self, instance_id: &str) -> Subject {
        Subject {
            actor: Actor::instance(instance_id),
            roles: vec![self.effective_role(instance_id)],
            principal: None,
        }
    }

    /// Re-derives the subject behind an actor recorded in a signed request.
    pub fn subject_for_actor(&self, actor: &Actor) -> Option<Subject> {
        if let Some(id) = actor.instance_id() {
            return Some(self.instance_subject(id));
        }
        let principal = self.principal(actor.principal_id()?)?;
        Some(Subject {
            actor: actor.clone(),
            roles: principal.roles.clone(),
            principal: Some(principal),
        })
    }
}

/// Client-side credential file: `key=value` lines, `#` comments, one
/// required `refresh_token=<base64>` entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFile {
    pub refresh_token: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TokenFileError {
    #[error("token file i/o: {0}")]
    Io(#[from] io::Error),
    #[error("token file has no refresh_token entry")]
    MissingRefreshToken,
    #[error("refresh_token is not valid base64")]
    BadEncoding,
}

impl TokenFile {
    pub fn new(refresh_bearer: &str) -> Self {
        TokenFile {
            refresh_token: refresh_bearer.to_owned(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, TokenFileError> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(("refresh_token", value)) = line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                let valid = URL_SAFE_NO_PAD.decode(value).is_ok() || STANDARD.decode(value).is_ok();
                if !valid || value.is_empty() {
                    return Err(TokenFileError::BadEncoding);
                }
                return Ok(TokenFile::new(value));
            }
        }
        Err(TokenFileError::MissingRefreshToken)
    }

    pub fn render(&self) -> String {
        format!("refresh_token={}\n", self.refresh_token)
    }

    pub fn load(path: &Path) -> Result<Self, TokenFileError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Writes the file readable by its owner only.
    pub fn save(&self, path: &Path) -> Result<(), TokenFileError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.render())?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
        }
        Ok(())
    }
}
