//! Protected object store.
//!
//! Objects are addressed as `s3://<bucket>/<key>` and guarded by a
//! default-deny policy table keyed by role. Reads go through signed requests.
//! Every data operation, allowed or denied, appends exactly one event to the
//! shared audit log. Reads promote objects into a bounded hot tier with LRU
//! eviction.

mod blob;
pub mod policy;
pub mod signing;
pub mod tier;
pub mod uri;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

pub use self::blob::sha256;
use self::blob::BlobStore;
pub use self::policy::{AccessPolicy, Action, Decision, PolicyTable};
pub use self::signing::{RequestSigner, SignedRequest};
pub use self::tier::{Migration, Tier, TierManager, TierState};
pub use self::uri::{InvalidUri, ObjectUri};
use crate::audit::{Actor, AuditEvent, AuditLog, ChainBreak, EventDraft, Outcome};
use crate::auth::{AuthError, AuthService, Caller, RoleId, Subject, INSTANCE_DEFAULT_ROLE};
use crate::clock::{SharedClock, Timestamp};

/// SHA-256 content digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Checksum(pub [u8; 32]);

impl Checksum {
    pub fn of(bytes: &[u8]) -> Self {
        Checksum(sha256(bytes))
    }
}

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Checksum {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Checksum {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("checksum must be 32 bytes"))?;
        Ok(Checksum(arr))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredObject {
    pub uri: ObjectUri,
    pub size_bytes: u64,
    pub owner_role: RoleId,
    pub checksum: Checksum,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error(transparent)]
    InvalidUri(#[from] InvalidUri),
    #[error("access denied: {action} on {target}")]
    AccessDenied { action: Action, target: String },
    #[error("request signature does not verify")]
    BadSignature,
    #[error("signed request expired")]
    ExpiredSignature,
    #[error("no such object `{0}`")]
    NotFound(String),
    #[error("stored bytes of `{0}` do not match their checksum")]
    ChecksumMismatch(String),
    #[error("authentication failed: {0}")]
    Auth(#[from] AuthError),
    #[error("storage i/o: {0}")]
    Io(String),
}

impl CatalogError {
    /// Short code recorded in audit details and API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::InvalidUri(_) => "InvalidUri",
            CatalogError::AccessDenied { .. } => "AccessDenied",
            CatalogError::BadSignature => "BadSignature",
            CatalogError::ExpiredSignature => "ExpiredSignature",
            CatalogError::NotFound(_) => "NotFound",
            CatalogError::ChecksumMismatch(_) => "ChecksumMismatch",
            CatalogError::Auth(_) => "AuthFailure",
            CatalogError::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for CatalogError {
    fn from(e: std::io::Error) -> Self {
        CatalogError::Io(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct CatalogConfig {
    pub data_dir: PathBuf,
    pub hot_capacity_bytes: u64,
    pub signing_key: Vec<u8>,
    /// Enables the at-rest stream transform on stored files.
    pub at_rest_key: Option<[u8; 32]>,
    pub idle_demotion_secs: Option<u64>,
}

impl CatalogConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        let mut key = vec![0u8; 32];
        rand::RngCore::fill_bytes(&mut rand::thread_rng(), &mut key);
        CatalogConfig {
            data_dir: data_dir.into(),
            hot_capacity_bytes: 64 * 1024 * 1024,
            signing_key: key,
            at_rest_key: None,
            idle_demotion_secs: None,
        }
    }

    pub fn hot_capacity(mut self, bytes: u64) -> Self {
        self.hot_capacity_bytes = bytes;
        self
    }

    pub fn signing_key(mut self, key: &[u8]) -> Self {
        self.signing_key = key.to_vec();
        self
    }

    pub fn encrypt_at_rest(mut self, key: [u8; 32]) -> Self {
        self.at_rest_key = Some(key);
        self
    }
}

/// What survives a restart: object metadata, bucket owners and policy rows.
/// Bytes live in the content-addressed cold store; tier residency is rebuilt.
#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexSnapshot {
    objects: Vec<StoredObject>,
    bucket_owners: BTreeMap<String, RoleId>,
    policies: Vec<AccessPolicy>,
}

struct CatalogState {
    objects: HashMap<String, StoredObject>,
    bucket_owners: HashMap<String, RoleId>,
    policies: PolicyTable,
    tiers: TierManager,
}

pub struct Catalog {
    clock: SharedClock,
    auth: Arc<AuthService>,
    audit: Arc<AuditLog>,
    signer: RequestSigner,
    blobs: BlobStore,
    state: Mutex<CatalogState>,
}

impl fmt::Debug for Catalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Catalog").field("blobs", &self.blobs).finish()
    }
}

/// Outcome of an operation body: the role that was checked, and the result.
type Checked<T> = (Option<RoleId>, Result<T, CatalogError>);

impl Catalog {
    pub fn open(
        config: CatalogConfig,
        clock: SharedClock,
        auth: Arc<AuthService>,
        audit: Arc<AuditLog>,
    ) -> Result<Self, CatalogError> {
        let blobs = BlobStore::open(&config.data_dir, config.at_rest_key)?;
        let mut tiers = TierManager::new(config.hot_capacity_bytes);
        if let Some(idle) = config.idle_demotion_secs {
            tiers = tiers.with_idle_demotion(idle);
        }
        let mut state = CatalogState {
            objects: HashMap::new(),
            bucket_owners: HashMap::new(),
            policies: PolicyTable::new(),
            tiers,
        };
        if let Some(bytes) = blobs.load_index()? {
            let snapshot: IndexSnapshot =
                serde_json::from_slice(&bytes).map_err(|e| CatalogError::Io(format!("catalog index: {e}")))?;
            for obj in snapshot.objects {
                state.tiers.track(&obj.uri.to_string(), obj.size_bytes);
                state.objects.insert(obj.uri.to_string(), obj);
            }
            state.bucket_owners.extend(snapshot.bucket_owners);
            for row in snapshot.policies {
                state.policies.grant(&row.target, &row.role_id, row.allowed_actions);
            }
        }
        blobs.clear_hot()?;
        Ok(Catalog {
            clock,
            auth,
            audit,
            signer: RequestSigner::new(&config.signing_key),
            blobs,
            state: Mutex::new(state),
        })
    }

    fn persist_index(&self, state: &CatalogState) -> Result<(), CatalogError> {
        let mut objects: Vec<StoredObject> = state.objects.values().cloned().collect();
        objects.sort_by(|a, b| a.uri.cmp(&b.uri));
        let snapshot = IndexSnapshot {
            objects,
            bucket_owners: state.bucket_owners.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            policies: state.policies.rows(),
        };
        let bytes = serde_json::to_vec(&snapshot).expect("index serializes");
        Ok(self.blobs.save_index(&bytes)?)
    }

    fn lock(&self) -> MutexGuard<'_, CatalogState> {
        self.state.lock().unwrap()
    }

    fn record<T>(
        &self,
        actor: Actor,
        role: Option<RoleId>,
        action: &str,
        target: &str,
        request_id: Option<&str>,
        result: &Result<T, CatalogError>,
    ) {
        let role = role.map(|r| r.0).unwrap_or_default();
        let draft = match result {
            Ok(_) => EventDraft::new(actor, role, action, target, Outcome::Allowed),
            Err(e) => EventDraft::new(actor, role, action, target, Outcome::Denied).detail(e.code()),
        };
        self.audit.append(draft.request_id(request_id));
    }

    /// Finds a role among the subject's candidates that is granted `action`
    /// on `target`.
    fn authorize(
        state: &CatalogState,
        subject: &Subject,
        target: &str,
        action: Action,
    ) -> Result<RoleId, CatalogError> {
        subject
            .roles
            .iter()
            .find(|r| state.policies.check(r, target, action) == Decision::Allowed)
            .cloned()
            .ok_or_else(|| CatalogError::AccessDenied {
                action,
                target: target.to_owned(),
            })
    }

    /// Write permission for `uri`: on the object if it exists, else on its
    /// bucket, else (new bucket) the caller becomes the bucket owner. The
    /// instance-default role never creates buckets.
    fn authorize_write(
        state: &CatalogState,
        subject: &Subject,
        uri: &ObjectUri,
    ) -> Result<RoleId, CatalogError> {
        let key = uri.to_string();
        if state.objects.contains_key(&key) {
            return Self::authorize(state, subject, &key, Action::Write);
        }
        if state.bucket_owners.contains_key(uri.bucket()) {
            return Self::authorize(state, subject, &uri.bucket_target(), Action::Write);
        }
        match subject.home_role() {
            Some(r) if r.as_str() != INSTANCE_DEFAULT_ROLE => Ok(r.clone()),
            _ => Err(CatalogError::AccessDenied {
                action: Action::Write,
                target: uri.bucket_target(),
            }),
        }
    }

    fn resolve(&self, caller: &Caller) -> (Actor, Result<Subject, CatalogError>) {
        match self.auth.resolve(caller) {
            Ok(s) => (s.actor.clone(), Ok(s)),
            Err(e) => (Actor::anonymous(), Err(e.into())),
        }
    }

    pub fn put_object(
        &self,
        caller: &Caller,
        uri: &str,
        bytes: &[u8],
    ) -> Result<StoredObject, CatalogError> {
        let (actor, subject) = self.resolve(caller);
        let (role, result) = match subject {
            Ok(subject) => self.put_checked(&subject, uri, bytes),
            Err(e) => (None, Err(e)),
        };
        self.record(actor, role, "put_object", uri, caller.request_id.as_deref(), &result);
        result
    }

    fn put_checked(&self, subject: &Subject, uri: &str, bytes: &[u8]) -> Checked<StoredObject> {
        let home = subject.home_role().cloned();
        let uri = match ObjectUri::parse(uri) {
            Ok(u) => u,
            Err(e) => return (home, Err(e.into())),
        };
        let mut state = self.lock();
        let role = match Self::authorize_write(&state, subject, &uri) {
            Ok(r) => r,
            Err(e) => return (home, Err(e)),
        };
        let result = self.store(&mut state, uri, bytes, &role);
        (Some(role), result)
    }

    fn store(
        &self,
        state: &mut CatalogState,
        uri: ObjectUri,
        bytes: &[u8],
        role: &RoleId,
    ) -> Result<StoredObject, CatalogError> {
        let key = uri.to_string();
        let checksum = Checksum::of(bytes);
        self.blobs.put_cold(&checksum.0, bytes)?;
        let now = self.clock.now();
        let object = match state.objects.get(&key).cloned() {
            Some(existing) => {
                let updated = StoredObject {
                    size_bytes: bytes.len() as u64,
                    checksum,
                    ..existing.clone()
                };
                state.objects.insert(key.clone(), updated.clone());
                self.release_blob(state, &existing.checksum)?;
                state.tiers.track(&key, updated.size_bytes);
                if state.tiers.state(&key).is_some_and(|t| t.tier == Tier::Hot) {
                    self.blobs.promote(&key, &checksum.0)?;
                }
                for m in state.tiers.maintain(now) {
                    self.blobs.demote(&m.uri)?;
                }
                updated
            }
            None => {
                state
                    .bucket_owners
                    .entry(uri.bucket().to_owned())
                    .or_insert_with(|| role.clone());
                let bucket_owner = state.bucket_owners[uri.bucket()].clone();
                state
                    .policies
                    .grant(&uri.bucket_target(), &bucket_owner, [Action::Write]);
                state
                    .policies
                    .grant(&key, role, [Action::Read, Action::Write, Action::Delete]);
                let object = StoredObject {
                    uri,
                    size_bytes: bytes.len() as u64,
                    owner_role: role.clone(),
                    checksum,
                    created_at: now,
                };
                state.objects.insert(key.clone(), object.clone());
                state.tiers.track(&key, object.size_bytes);
                object
            }
        };
        self.persist_index(state)?;
        Ok(object)
    }

    /// Drops a cold blob once no object references its content.
    fn release_blob(&self, state: &CatalogState, checksum: &Checksum) -> Result<(), CatalogError> {
        if !state.objects.values().any(|o| o.checksum == *checksum) {
            self.blobs.remove_cold(&checksum.0)?;
        }
        Ok(())
    }

    /// Stores an object on behalf of the enclave administrator, owned by
    /// `owner_role`. Used to load protected datasets.
    pub fn ingest(&self, uri: &str, bytes: &[u8], owner_role: &RoleId) -> Result<StoredObject, CatalogError> {
        let result = (|| {
            let uri = ObjectUri::parse(uri)?;
            let mut state = self.lock();
            self.store(&mut state, uri, bytes, owner_role)
        })();
        self.record(Actor::system(), Some(owner_role.clone()), "put_object", uri, None, &result);
        result
    }

    pub fn sign_url(
        &self,
        caller: &Caller,
        uri: &str,
        action: Action,
        ttl_secs: u64,
    ) -> Result<SignedRequest, CatalogError> {
        let (actor, subject) = self.resolve(caller);
        let (role, result) = match subject {
            Ok(subject) => self.sign_checked(&subject, uri, action, ttl_secs),
            Err(e) => (None, Err(e)),
        };
        self.record(actor, role, "sign_url", uri, caller.request_id.as_deref(), &result);
        result
    }

    fn sign_checked(
        &self,
        subject: &Subject,
        uri: &str,
        action: Action,
        ttl_secs: u64,
    ) -> Checked<SignedRequest> {
        let home = subject.home_role().cloned();
        let parsed = match ObjectUri::parse(uri) {
            Ok(u) => u,
            Err(e) => return (home, Err(e.into())),
        };
        let state = self.lock();
        let role = match action {
            Action::Write => Self::authorize_write(&state, subject, &parsed),
            _ => Self::authorize(&state, subject, uri, action),
        };
        match role {
            Ok(role) => {
                let req = self.signer.sign(
                    &parsed.to_string(),
                    action,
                    subject.actor.clone(),
                    self.clock.now(),
                    ttl_secs,
                );
                (Some(role), Ok(req))
            }
            Err(e) => (home, Err(e)),
        }
    }

    /// Serves a signed read (`read` or `export` action). Access is
    /// re-checked against the signer's roles at read time.
    pub fn get_object(&self, req: &SignedRequest, request_id: Option<&str>) -> Result<Vec<u8>, CatalogError> {
        let subject = self.auth.subject_for_actor(&req.actor);
        let home = subject.as_ref().and_then(|s| s.home_role().cloned());
        let (role, result) = self.get_checked(req, subject.as_ref(), home);
        self.record(req.actor.clone(), role, "get_object", &req.uri, request_id, &result);
        result
    }

    fn get_checked(
        &self,
        req: &SignedRequest,
        subject: Option<&Subject>,
        home: Option<RoleId>,
    ) -> Checked<Vec<u8>> {
        if !self.signer.verify(req) {
            return (home, Err(CatalogError::BadSignature));
        }
        let now = self.clock.now();
        if now >= req.expires_at {
            return (home, Err(CatalogError::ExpiredSignature));
        }
        let denied = || CatalogError::AccessDenied {
            action: req.action,
            target: req.uri.clone(),
        };
        let Some(subject) = subject else {
            return (home, Err(denied()));
        };
        if !matches!(req.action, Action::Read | Action::Export) {
            return (home, Err(denied()));
        }
        let mut state = self.lock();
        let mut role = match Self::authorize(&state, subject, &req.uri, req.action) {
            Ok(r) => r,
            Err(e) => return (home, Err(e)),
        };
        if req.action == Action::Export {
            // Export implies the bytes may be read at all.
            role = match Self::authorize(&state, subject, &req.uri, Action::Read) {
                Ok(_) => role,
                Err(e) => return (home, Err(e)),
            };
        }
        let result = self.read_and_promote(&mut state, &req.uri, now);
        (Some(role), result)
    }

    fn read_and_promote(
        &self,
        state: &mut CatalogState,
        uri: &str,
        now: Timestamp,
    ) -> Result<Vec<u8>, CatalogError> {
        let object = state
            .objects
            .get(uri)
            .cloned()
            .ok_or_else(|| CatalogError::NotFound(uri.to_owned()))?;
        let bytes = match self.blobs.read_hot(uri, &object.checksum.0)? {
            Some(b) => b,
            None => self.blobs.read_cold(&object.checksum.0)?,
        };
        if Checksum::of(&bytes) != object.checksum {
            return Err(CatalogError::ChecksumMismatch(uri.to_owned()));
        }
        for m in state.tiers.record_access(uri, now) {
            self.apply_migration(state, &m)?;
        }
        Ok(bytes)
    }

    fn apply_migration(&self, state: &CatalogState, m: &Migration) -> Result<(), CatalogError> {
        match m.to {
            Tier::Hot => {
                let checksum = state.objects[&m.uri].checksum;
                self.blobs.promote(&m.uri, &checksum.0)?;
            }
            Tier::Cold => self.blobs.demote(&m.uri)?,
        }
        Ok(())
    }

    /// Signs and serves a read in one step. Both steps are audited.
    pub fn fetch(&self, caller: &Caller, uri: &str, action: Action) -> Result<Vec<u8>, CatalogError> {
        let req = self.sign_url(caller, uri, action, 60)?;
        self.get_object(&req, caller.request_id.as_deref())
    }

    pub fn delete_object(&self, caller: &Caller, uri: &str) -> Result<(), CatalogError> {
        let (actor, subject) = self.resolve(caller);
        let (role, result) = match subject {
            Ok(subject) => {
                let home = subject.home_role().cloned();
                let mut state = self.lock();
                match Self::authorize(&state, &subject, uri, Action::Delete) {
                    Ok(role) => {
                        let result = match state.objects.remove(uri) {
                            Some(obj) => {
                                state.policies.remove_target(uri);
                                if state.tiers.forget(uri) {
                                    let _ = self.blobs.demote(uri);
                                }
                                self.release_blob(&state, &obj.checksum)
                                    .and_then(|_| self.persist_index(&state))
                            }
                            None => Err(CatalogError::NotFound(uri.to_owned())),
                        };
                        (Some(role), result)
                    }
                    Err(e) => (home, Err(e)),
                }
            }
            Err(e) => (None, Err(e)),
        };
        self.record(actor, role, "delete_object", uri, caller.request_id.as_deref(), &result);
        result
    }

    /// Grants `actions` on `target` (object URI or `s3://<bucket>`) to
    /// `role`. Only the object's owner (or bucket owner) may do this.
    pub fn set_policy(
        &self,
        caller: &Caller,
        target: &str,
        role: &RoleId,
        actions: &[Action],
    ) -> Result<(), CatalogError> {
        let (actor, subject) = self.resolve(caller);
        let (checked_role, result) = match subject {
            Ok(subject) => {
                let mut state = self.lock();
                let owner = state
                    .objects
                    .get(target)
                    .map(|o| o.owner_role.clone())
                    .or_else(|| {
                        target
                            .strip_prefix("s3://")
                            .filter(|b| !b.contains('/'))
                            .and_then(|b| state.bucket_owners.get(b).cloned())
                    });
                match owner {
                    Some(owner) if subject.roles.contains(&owner) => {
                        state.policies.grant(target, role, actions.iter().copied());
                        (Some(owner), self.persist_index(&state))
                    }
                    _ => (
                        subject.home_role().cloned(),
                        Err(CatalogError::AccessDenied {
                            action: Action::Write,
                            target: target.to_owned(),
                        }),
                    ),
                }
            }
            Err(e) => (None, Err(e)),
        };
        let detail = format!(
            "{}:{}",
            role,
            actions.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",")
        );
        let draft = match &result {
            Ok(()) => EventDraft::new(actor, checked_role.map(|r| r.0).unwrap_or_default(), "policy_set", target, Outcome::Allowed).detail(detail),
            Err(e) => EventDraft::new(actor, checked_role.map(|r| r.0).unwrap_or_default(), "policy_set", target, Outcome::Denied).detail(e.code()),
        };
        self.audit.append(draft.request_id(caller.request_id.as_deref()));
        result
    }

    /// Administrative grant, audited as the system actor.
    pub fn grant(&self, target: &str, role: &RoleId, actions: &[Action]) {
        {
            let mut state = self.lock();
            state.policies.grant(target, role, actions.iter().copied());
            if let Err(e) = self.persist_index(&state) {
                tracing::warn!("catalog index not saved: {e}");
            }
        }
        let detail = actions.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",");
        self.audit.append(
            EventDraft::new(Actor::system(), role.as_str(), "policy_grant", target, Outcome::Allowed)
                .detail(detail),
        );
    }

    pub fn check_access(&self, role: &RoleId, target: &str, action: Action) -> Decision {
        self.lock().policies.check(role, target, action)
    }

    pub fn policies_for(&self, target: &str) -> Vec<AccessPolicy> {
        self.lock().policies.rows_for(target)
    }

    pub fn object(&self, uri: &str) -> Option<StoredObject> {
        self.lock().objects.get(uri).cloned()
    }

    pub fn objects(&self) -> Vec<StoredObject> {
        let mut all: Vec<StoredObject> = self.lock().objects.values().cloned().collect();
        all.sort_by(|a, b| a.uri.cmp(&b.uri));
        all
    }

    pub fn tier_state(&self, uri: &str) -> Option<TierState> {
        self.lock().tiers.state(uri)
    }

    pub fn hot_set(&self) -> Vec<String> {
        self.lock().tiers.hot_set()
    }

    pub fn hot_bytes(&self) -> u64 {
        self.lock().tiers.hot_bytes()
    }

    pub fn hot_capacity(&self) -> u64 {
        self.lock().tiers.capacity()
    }

    pub fn set_hot_capacity(&self, bytes: u64) {
        self.lock().tiers.set_capacity(bytes);
    }

    pub fn run_tier_maintenance(&self, now: Timestamp) -> Result<Vec<Migration>, CatalogError> {
        let mut state = self.lock();
        let migrations = state.tiers.maintain(now);
        for m in &migrations {
            self.apply_migration(&state, m)?;
        }
        Ok(migrations)
    }

    pub fn hot_file_count(&self) -> usize {
        self.blobs.hot_file_count().unwrap_or(0)
    }

    /// Re-reads an object's cold bytes and checks them against its checksum.
    pub fn verify_object(&self, uri: &str) -> Result<(), CatalogError> {
        let object = self
            .object(uri)
            .ok_or_else(|| CatalogError::NotFound(uri.to_owned()))?;
        let bytes = self.blobs.read_cold(&object.checksum.0)?;
        if Checksum::of(&bytes) == object.checksum {
            Ok(())
        } else {
            Err(CatalogError::ChecksumMismatch(uri.to_owned()))
        }
    }

    fn require_auditor(&self, caller: &Caller) -> Result<Subject, CatalogError> {
        let subject = self.auth.resolve(caller)?;
        if subject.roles.iter().any(|r| self.auth.is_auditor_role(r)) {
            Ok(subject)
        } else {
            Err(CatalogError::AccessDenied {
                action: Action::Read,
                target: "audit".into(),
            })
        }
    }

    /// Audit events with `from <= seq < to`. Auditors only.
    pub fn read_audit(&self, caller: &Caller, from: u64, to: u64) -> Result<Vec<AuditEvent>, CatalogError> {
        self.require_auditor(caller)?;
        Ok(self.audit.range(from, to))
    }

    /// Recomputes every hash link. Auditors only.
    pub fn verify_chain(&self, caller: &Caller) -> Result<Result<(), ChainBreak>, CatalogError> {
        self.require_auditor(caller)?;
        Ok(self.audit.verify())
    }

    pub fn signer(&self) -> &RequestSigner {
        &self.signer
    }
}
