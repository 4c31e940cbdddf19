//! Job intake, tiered queues and job records.
//!
//! Delivery is at-least-once: a dequeued job stays invisible until its
//! visibility deadline, which the holding worker pushes forward with
//! heartbeats. A delivery that lapses puts the job back in its queue at its
//! original position; after `max_attempts` lapses the job fails. Terminal
//! status is recorded once, from whichever live delivery reports first.
//! Expired deliveries are reaped lazily at the start of every operation.

pub mod job;
mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

pub use self::job::{
    is_legal_history, Delivery, JobDescription, JobRecord, JobStatus, JobType, Payload, QueueTier,
    StatusChange, UtilizationSample, DEFAULT_RUNNER_KIND,
};
pub use self::store::JobJournal;
use crate::audit::{Actor, AuditLog, EventDraft, Outcome};
use crate::auth::{AuthError, AuthService, Caller, JobAssignment, Subject};
use crate::catalog::ObjectUri;
use crate::clock::{SharedClock, Timestamp};

pub const DEFAULT_VISIBILITY_SECS: u64 = 120;
pub const HEARTBEAT_INTERVAL_SECS: u64 = 30;
pub const MAX_ATTEMPTS: u32 = 3;
/// Utilization is only kept for jobs that have run longer than this.
pub const UTILIZATION_THRESHOLD_SECS: u64 = 300;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub visibility_secs: u64,
    pub max_attempts: u32,
    pub journal: Option<PathBuf>,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            visibility_secs: DEFAULT_VISIBILITY_SECS,
            max_attempts: MAX_ATTEMPTS,
            journal: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BrokerError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("unknown queue `{0}`")]
    UnknownQueue(String),
    #[error("malformed job: {0}")]
    MalformedJob(String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("instance `{instance_id}` does not serve the {queue} queue")]
    WrongPool { instance_id: String, queue: QueueTier },
    #[error("no live delivery of `{job_id}` to `{instance_id}`")]
    NoLiveDelivery { job_id: String, instance_id: String },
    #[error("job `{0}` already reached a terminal status")]
    AlreadyTerminal(String),
    #[error("access denied to job `{0}`")]
    AccessDenied(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("utilization sample at {t_offset}s precedes the {UTILIZATION_THRESHOLD_SECS}s threshold")]
    TooEarly { t_offset: u64 },
    #[error("job `{job_id}` cannot go from {from} to {to}")]
    IllegalTransition { job_id: String, from: JobStatus, to: JobStatus },
    #[error("job store: {0}")]
    Io(String),
}

impl BrokerError {
    pub fn code(&self) -> &'static str {
        match self {
            BrokerError::Auth(_) => "AuthFailure",
            BrokerError::UnknownQueue(_) => "UnknownQueue",
            BrokerError::MalformedJob(_) => "MalformedJob",
            BrokerError::UnknownInstance(_) => "UnknownInstance",
            BrokerError::WrongPool { .. } => "WrongPool",
            BrokerError::NoLiveDelivery { .. } => "NoLiveDelivery",
            BrokerError::AlreadyTerminal(_) => "AlreadyTerminal",
            BrokerError::AccessDenied(_) => "AccessDenied",
            BrokerError::UnknownJob(_) => "UnknownJob",
            BrokerError::TooEarly { .. } => "TooEarly",
            BrokerError::IllegalTransition { .. } => "IllegalTransition",
            BrokerError::Io(_) => "StoreError",
        }
    }
}

#[derive(Debug, Default)]
struct State {
    jobs: HashMap<String, JobRecord>,
    /// Visible queued jobs per tier, keyed by submission order.
    queues: HashMap<QueueTier, BTreeMap<u64, String>>,
    /// Live (or not yet reaped) deliveries by job id.
    deliveries: HashMap<String, Delivery>,
    instances: HashMap<String, QueueTier>,
    next_seq: u64,
    journal: Option<JobJournal>,
}

impl State {
    fn persist(&mut self, job_id: &str) -> Result<(), BrokerError> {
        if let (Some(journal), Some(rec)) = (self.journal.as_mut(), self.jobs.get(job_id)) {
            journal.append(rec).map_err(|e| BrokerError::Io(e.to_string()))?;
        }
        Ok(())
    }

    fn enqueue(&mut self, job_id: &str) {
        let rec = &self.jobs[job_id];
        self.queues
            .entry(rec.queue)
            .or_default()
            .insert(rec.seq, job_id.to_owned());
    }

    fn record_mut(&mut self, job_id: &str) -> Result<&mut JobRecord, BrokerError> {
        self.jobs
            .get_mut(job_id)
            .ok_or_else(|| BrokerError::UnknownJob(job_id.to_owned()))
    }

    /// The delivery of `job_id` to `instance_id`, if it is still live.
    fn live_delivery(&self, instance_id: &str, job_id: &str, now: Timestamp) -> Result<&Delivery, BrokerError> {
        self.deliveries
            .get(job_id)
            .filter(|d| d.instance_id == instance_id && d.is_live(now))
            .ok_or_else(|| BrokerError::NoLiveDelivery {
                job_id: job_id.to_owned(),
                instance_id: instance_id.to_owned(),
            })
    }
}

fn transition(rec: &mut JobRecord, to: JobStatus, now: Timestamp) -> Result<(), BrokerError> {
    if !rec.status.can_become(to) {
        return Err(BrokerError::IllegalTransition {
            job_id: rec.job_id.clone(),
            from: rec.status,
            to,
        });
    }
    rec.status = to;
    rec.status_history.push(StatusChange { status: to, at: now });
    Ok(())
}

fn plain_filename(name: &str) -> bool {
    !name.is_empty() && name != "." && name != ".." && !name.contains('/') && !name.contains('\0')
}

fn requirement_line_ok(line: &str) -> bool {
    let name_ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    match line.split_once("==") {
        Some((name, version)) => name_ok(name.trim()) && name_ok(version.trim()),
        None => name_ok(line),
    }
}

struct Validated {
    queue: QueueTier,
    payload: Payload,
    inputs: Vec<ObjectUri>,
    outputs: Vec<ObjectUri>,
    walltime_minutes: u64,
}

fn validate(desc: &JobDescription) -> Result<Validated, BrokerError> {
    let malformed = |m: &str| BrokerError::MalformedJob(m.to_owned());
    let queue: QueueTier = desc.queue.parse().map_err(BrokerError::UnknownQueue)?;
    if desc.walltime_minutes <= 0 {
        return Err(malformed("walltime_minutes must be positive"));
    }
    let payload = match desc.jobtype {
        JobType::Script => {
            if desc.payload_b64.is_some() {
                return Err(malformed("script jobs take no payload_b64"));
            }
            let (Some(executable), Some(script_name), Some(script)) =
                (&desc.executable, &desc.script_name, &desc.script)
            else {
                return Err(malformed("script jobs need executable, script_name and script"));
            };
            if executable.split_whitespace().next().is_none() {
                return Err(malformed("executable is empty"));
            }
            if !plain_filename(script_name) {
                return Err(malformed("script_name must be a plain file name"));
            }
            Payload::Script {
                executable: executable.clone(),
                script_name: script_name.clone(),
                script: script.clone(),
            }
        }
        JobType::CannedFunction => {
            if desc.script.is_some() || desc.script_name.is_some() {
                return Err(malformed("canned jobs take no script"));
            }
            let text = desc
                .payload_b64
                .as_deref()
                .ok_or_else(|| malformed("canned jobs need payload_b64"))?;
            let bytes = crate::b64::decode(text).map_err(|_| malformed("payload_b64 is not base64"))?;
            let runner = desc.executable.clone().unwrap_or_else(|| DEFAULT_RUNNER_KIND.to_owned());
            if runner.is_empty() || runner.contains(char::is_whitespace) {
                return Err(malformed("runner kind must be a single word"));
            }
            Payload::Canned { runner, bytes }
        }
    };
    let parse_all = |uris: &[String]| -> Result<Vec<ObjectUri>, BrokerError> {
        uris.iter()
            .map(|u| ObjectUri::parse(u).map_err(|e| BrokerError::MalformedJob(e.to_string())))
            .collect()
    };
    let inputs = parse_all(&desc.inputs)?;
    let outputs = parse_all(&desc.outputs)?;
    let mut names = HashSet::new();
    if !outputs.iter().all(|o| names.insert(o.basename())) {
        return Err(malformed("two outputs share a basename"));
    }
    for line in desc.requirements.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if !requirement_line_ok(line) {
            return Err(BrokerError::MalformedJob(format!("bad requirement `{line}`")));
        }
    }
    Ok(Validated {
        queue,
        payload,
        inputs,
        outputs,
        walltime_minutes: desc.walltime_minutes as u64,
    })
}

#[derive(Debug)]
pub struct Broker {
    clock: SharedClock,
    auth: Arc<AuthService>,
    audit: Arc<AuditLog>,
    config: BrokerConfig,
    state: Mutex<State>,
}

impl Broker {
    /// Opens the broker, replaying the journal if one is configured. Jobs
    /// caught mid-delivery by a restart go back to their queue.
    pub fn open(
        config: BrokerConfig,
        clock: SharedClock,
        auth: Arc<AuthService>,
        audit: Arc<AuditLog>,
    ) -> Result<Self, BrokerError> {
        let mut state = State {
            next_seq: 1,
            ..State::default()
        };
        if let Some(path) = &config.journal {
            let (journal, records) = JobJournal::open(path).map_err(|e| BrokerError::Io(e.to_string()))?;
            state.journal = Some(journal);
            let now = clock.now();
            for mut rec in records {
                state.next_seq = state.next_seq.max(rec.seq + 1);
                let requeue = matches!(rec.status, JobStatus::Pending | JobStatus::Staging | JobStatus::Running);
                if requeue {
                    transition(&mut rec, JobStatus::Queued, now)?;
                }
                let id = rec.job_id.clone();
                let queued = rec.status == JobStatus::Queued;
                state.jobs.insert(id.clone(), rec);
                if requeue {
                    state.persist(&id)?;
                }
                if queued {
                    state.enqueue(&id);
                }
            }
        }
        Ok(Broker {
            clock,
            auth,
            audit,
            config,
            state: Mutex::new(state),
        })
    }

    pub fn in_memory(clock: SharedClock, auth: Arc<AuthService>, audit: Arc<AuditLog>) -> Self {
        Self::open(BrokerConfig::default(), clock, auth, audit).expect("no journal to open")
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Locks state after reaping lapsed deliveries.
    fn lock(&self, now: Timestamp) -> MutexGuard<'_, State> {
        let mut state = self.state.lock().unwrap();
        self.reap(&mut state, now);
        state
    }

    fn log(&self, actor: &Actor, role: &str, action: &str, target: &str, outcome: Outcome, request_id: Option<&str>, detail: Option<&str>) {
        let mut draft = EventDraft::new(actor.clone(), role, action, target, outcome).request_id(request_id);
        if let Some(d) = detail {
            draft = draft.detail(d);
        }
        self.audit.append(draft);
    }

    fn log_instance(&self, instance_id: &str, action: &str, job_id: &str, outcome: Outcome, detail: Option<&str>) {
        let role = self.auth.effective_role(instance_id);
        self.log(&Actor::instance(instance_id), role.as_str(), action, job_id, outcome, None, detail);
    }

    fn reap(&self, state: &mut State, now: Timestamp) {
        let expired: Vec<Delivery> = state
            .deliveries
            .values()
            .filter(|d| !d.is_live(now))
            .cloned()
            .collect();
        for d in expired {
            state.deliveries.remove(&d.job_id);
            let Some(rec) = state.jobs.get_mut(&d.job_id) else { continue };
            if rec.status.is_terminal() {
                continue;
            }
            let (action, detail) = if d.attempt >= self.config.max_attempts {
                rec.error = Some("max attempts".into());
                transition(rec, JobStatus::Failed, now).expect("staging/running can fail");
                ("job_fail", "max attempts")
            } else {
                transition(rec, JobStatus::Queued, now).expect("staging/running can requeue");
                ("job_redeliver", "visibility timeout")
            };
            let role = rec.owner_role.clone();
            if rec.status == JobStatus::Queued {
                state.enqueue(&d.job_id);
            }
            if let Err(e) = state.persist(&d.job_id) {
                tracing::error!("persisting {}: {e}", d.job_id);
            }
            self.log(&Actor::system(), role.as_str(), action, &d.job_id, Outcome::Allowed, None, Some(detail));
        }
    }

    fn resolve(&self, caller: &Caller, action: &str, target: &str) -> Result<Subject, BrokerError> {
        self.auth.resolve(caller).map_err(|e| {
            self.log(&Actor::anonymous(), "", action, target, Outcome::Denied, caller.request_id.as_deref(), Some("AuthFailure"));
            BrokerError::Auth(e)
        })
    }

    pub fn submit_job(&self, caller: &Caller, desc: &JobDescription) -> Result<String, BrokerError> {
        let subject = self.resolve(caller, "job_submit", "-")?;
        let rid = caller.request_id.as_deref();
        let role = subject.home_role_name();
        let deny = |err: BrokerError| {
            self.log(&subject.actor, &role, "job_submit", "-", Outcome::Denied, rid, Some(err.code()));
            err
        };
        let (Some(principal), Some(owner_role)) = (subject.principal.as_ref(), subject.home_role()) else {
            return Err(deny(BrokerError::AccessDenied("-".into())));
        };
        let v = validate(desc).map_err(deny)?;

        let now = self.now();
        let mut state = self.lock(now);
        let seq = state.next_seq;
        state.next_seq += 1;
        let job_id = format!("job-{seq:06}");
        let mut rec = JobRecord {
            job_id: job_id.clone(),
            owner: principal.principal_id.clone(),
            owner_role: owner_role.clone(),
            queue: v.queue,
            jobtype: desc.jobtype,
            jobname: desc.jobname.clone(),
            payload: v.payload,
            inputs: v.inputs,
            outputs: v.outputs,
            requirements: desc.requirements.clone(),
            walltime_minutes: v.walltime_minutes,
            status: JobStatus::Pending,
            status_history: vec![StatusChange { status: JobStatus::Pending, at: now }],
            stdout: Vec::new(),
            stderr: Vec::new(),
            utilization: Vec::new(),
            result_uri: None,
            error: None,
            attempts: 0,
            terminal_attempt: None,
            started_running_at: None,
            submitted_at: now,
            seq,
        };
        transition(&mut rec, JobStatus::Queued, now)?;
        state.jobs.insert(job_id.clone(), rec);
        state.persist(&job_id)?;
        state.enqueue(&job_id);
        drop(state);
        self.log(&subject.actor, &role, "job_submit", &job_id, Outcome::Allowed, rid, Some(v.queue.as_str()));
        Ok(job_id)
    }

    /// Owner or auditor read of a job record. `action` names the audit event.
    pub fn read_job(&self, caller: &Caller, job_id: &str, action: &str) -> Result<JobRecord, BrokerError> {
        let subject = self.resolve(caller, action, job_id)?;
        let rid = caller.request_id.as_deref();
        let role = subject.home_role_name();
        let rec = self.lock(self.now()).jobs.get(job_id).cloned();
        let Some(rec) = rec else {
            self.log(&subject.actor, &role, action, job_id, Outcome::Denied, rid, Some("UnknownJob"));
            return Err(BrokerError::UnknownJob(job_id.to_owned()));
        };
        let is_owner = subject.principal.as_ref().is_some_and(|p| p.principal_id == rec.owner);
        let auditor = subject.roles.iter().find(|r| self.auth.is_auditor_role(r));
        if !is_owner && auditor.is_none() {
            self.log(&subject.actor, &role, action, job_id, Outcome::Denied, rid, Some("AccessDenied"));
            return Err(BrokerError::AccessDenied(job_id.to_owned()));
        }
        let role = if is_owner { role } else { auditor.unwrap().0.clone() };
        self.log(&subject.actor, &role, action, job_id, Outcome::Allowed, rid, None);
        Ok(rec)
    }

    pub fn job_status(&self, caller: &Caller, job_id: &str) -> Result<(JobStatus, Vec<StatusChange>), BrokerError> {
        let rec = self.read_job(caller, job_id, "job_status")?;
        Ok((rec.status, rec.status_history))
    }

    pub fn cancel_job(&self, caller: &Caller, job_id: &str) -> Result<(), BrokerError> {
        let subject = self.resolve(caller, "job_cancel", job_id)?;
        let rid = caller.request_id.as_deref();
        let role = subject.home_role_name();
        let now = self.now();
        let mut state = self.lock(now);
        let result = (|| {
            let rec = state.record_mut(job_id)?;
            if subject.principal.as_ref().is_none_or(|p| p.principal_id != rec.owner) {
                return Err(BrokerError::AccessDenied(job_id.to_owned()));
            }
            transition(rec, JobStatus::Cancelled, now)?;
            let (tier, seq) = (rec.queue, rec.seq);
            state.queues.entry(tier).or_default().remove(&seq);
            state.persist(job_id)
        })();
        drop(state);
        let (outcome, detail) = match &result {
            Ok(()) => (Outcome::Allowed, None),
            Err(e) => (Outcome::Denied, Some(e.code())),
        };
        self.log(&subject.actor, &role, "job_cancel", job_id, outcome, rid, detail);
        result
    }

    pub fn register_instance(&self, instance_id: &str, pool: QueueTier) {
        self.state.lock().unwrap().instances.insert(instance_id.to_owned(), pool);
    }

    /// Forgets an instance. Deliveries it holds are left to lapse.
    pub fn deregister_instance(&self, instance_id: &str) -> bool {
        self.state.lock().unwrap().instances.remove(instance_id).is_some()
    }

    pub fn instance_pool(&self, instance_id: &str) -> Option<QueueTier> {
        self.state.lock().unwrap().instances.get(instance_id).copied()
    }

    pub fn dequeue(&self, instance_id: &str, queue: QueueTier, visibility_secs: u64) -> Result<Option<Delivery>, BrokerError> {
        let now = self.now();
        let mut state = self.lock(now);
        match state.instances.get(instance_id) {
            None => return Err(BrokerError::UnknownInstance(instance_id.to_owned())),
            Some(&pool) if pool != queue => {
                return Err(BrokerError::WrongPool {
                    instance_id: instance_id.to_owned(),
                    queue,
                })
            }
            _ => {}
        }
        let Some((_, job_id)) = state.queues.entry(queue).or_default().pop_first() else {
            return Ok(None);
        };
        let rec = state.jobs.get_mut(&job_id).expect("queued jobs have records");
        transition(rec, JobStatus::Staging, now)?;
        rec.attempts += 1;
        let delivery = Delivery {
            job_id: job_id.clone(),
            instance_id: instance_id.to_owned(),
            delivered_at: now,
            visibility_deadline: now.plus(visibility_secs),
            attempt: rec.attempts,
        };
        state.deliveries.insert(job_id.clone(), delivery.clone());
        state.persist(&job_id)?;
        drop(state);
        let detail = format!("attempt {}", delivery.attempt);
        self.log_instance(instance_id, "job_deliver", &job_id, Outcome::Allowed, Some(&detail));
        Ok(Some(delivery))
    }

    /// Extends a live delivery's deadline by `extend_secs`.
    pub fn heartbeat(&self, instance_id: &str, job_id: &str, extend_secs: u64) -> Result<Timestamp, BrokerError> {
        let now = self.now();
        let mut state = self.lock(now);
        state.live_delivery(instance_id, job_id, now)?;
        let d = state.deliveries.get_mut(job_id).expect("checked live");
        d.visibility_deadline = d.visibility_deadline.plus(extend_secs);
        Ok(d.visibility_deadline)
    }

    /// What the worker presents to auth to take on the owner's role.
    pub fn assignment(&self, instance_id: &str, job_id: &str) -> Result<JobAssignment, BrokerError> {
        let now = self.now();
        let state = self.lock(now);
        let rec = state
            .jobs
            .get(job_id)
            .ok_or_else(|| BrokerError::UnknownJob(job_id.to_owned()))?;
        state.live_delivery(instance_id, job_id, now)?;
        Ok(JobAssignment {
            job_id: job_id.to_owned(),
            instance_id: instance_id.to_owned(),
            owner_role: rec.owner_role.clone(),
        })
    }

    /// Staging finished; the payload starts now.
    pub fn start_job(&self, instance_id: &str, job_id: &str) -> Result<(), BrokerError> {
        let now = self.now();
        let mut state = self.lock(now);
        state.live_delivery(instance_id, job_id, now)?;
        let rec = state.record_mut(job_id)?;
        transition(rec, JobStatus::Running, now)?;
        rec.started_running_at = Some(now);
        state.persist(job_id)?;
        drop(state);
        self.log_instance(instance_id, "job_start", job_id, Outcome::Allowed, None);
        Ok(())
    }

    fn finish(
        &self,
        instance_id: &str,
        job_id: &str,
        to: JobStatus,
        apply: impl FnOnce(&mut JobRecord),
    ) -> Result<(), BrokerError> {
        let now = self.now();
        let mut state = self.lock(now);
        let rec = state.record_mut(job_id)?;
        if rec.status.is_terminal() {
            return Err(BrokerError::AlreadyTerminal(job_id.to_owned()));
        }
        let attempt = state.live_delivery(instance_id, job_id, now)?.attempt;
        let rec = state.record_mut(job_id)?;
        transition(rec, to, now)?;
        rec.terminal_attempt = Some(attempt);
        apply(rec);
        state.deliveries.remove(job_id);
        state.persist(job_id)?;
        drop(state);
        let action = if to == JobStatus::Completed { "job_complete" } else { "job_fail" };
        self.log_instance(instance_id, action, job_id, Outcome::Allowed, Some(&format!("attempt {attempt}")));
        Ok(())
    }

    pub fn complete_job(
        &self,
        instance_id: &str,
        job_id: &str,
        result_uri: ObjectUri,
        stdout: Vec<u8>,
        stderr: Vec<u8>,
    ) -> Result<(), BrokerError> {
        self.finish(instance_id, job_id, JobStatus::Completed, |rec| {
            rec.result_uri = Some(result_uri);
            rec.stdout = stdout;
            rec.stderr = stderr;
        })
    }

    pub fn fail_job(
        &self,
        instance_id: &str,
        job_id: &str,
        error: &str,
        stdout: Vec<u8>,
        stderr: Vec<u8>,
    ) -> Result<(), BrokerError> {
        self.finish(instance_id, job_id, JobStatus::Failed, |rec| {
            rec.error = Some(error.to_owned());
            rec.stdout = stdout;
            rec.stderr = stderr;
        })
    }

    /// Moves every running job past its walltime to `walltime_exceeded`.
    pub fn enforce_walltime(&self, now: Timestamp) -> Vec<String> {
        let mut state = self.lock(now);
        let mut overdue: Vec<(u64, String)> = state
            .jobs
            .values()
            .filter(|r| r.status == JobStatus::Running)
            .filter(|r| r.running_secs(now).is_some_and(|s| s > r.walltime_secs()))
            .map(|r| (r.seq, r.job_id.clone()))
            .collect();
        overdue.sort();
        let mut out = Vec::new();
        for (_, job_id) in overdue {
            let attempt = state.deliveries.remove(&job_id).map(|d| d.attempt);
            let rec = state.jobs.get_mut(&job_id).expect("listed above");
            transition(rec, JobStatus::WalltimeExceeded, now).expect("running can exceed walltime");
            rec.terminal_attempt = attempt;
            rec.error = Some(format!("walltime of {} minutes exceeded", rec.walltime_minutes));
            let role = rec.owner_role.clone();
            if let Err(e) = state.persist(&job_id) {
                tracing::error!("persisting {job_id}: {e}");
            }
            self.log(&Actor::system(), role.as_str(), "job_walltime", &job_id, Outcome::Allowed, None, None);
            out.push(job_id);
        }
        out
    }

    /// Reaps lapsed deliveries and enforces walltimes.
    pub fn tick(&self, now: Timestamp) -> Vec<String> {
        self.enforce_walltime(now)
    }

    /// Captured streams so far; a killed payload's partial output survives.
    pub fn append_streams(&self, job_id: &str, stdout: &[u8], stderr: &[u8]) {
        let mut state = self.state.lock().unwrap();
        if let Some(rec) = state.jobs.get_mut(job_id).filter(|r| r.status == JobStatus::WalltimeExceeded) {
            rec.stdout.extend_from_slice(stdout);
            rec.stderr.extend_from_slice(stderr);
            let _ = state.persist(job_id);
        }
    }

    pub fn record_utilization(&self, instance_id: &str, job_id: &str, sample: UtilizationSample) -> Result<(), BrokerError> {
        let now = self.now();
        let mut state = self.lock(now);
        state.live_delivery(instance_id, job_id, now)?;
        if sample.t_offset_seconds <= UTILIZATION_THRESHOLD_SECS {
            return Err(BrokerError::TooEarly { t_offset: sample.t_offset_seconds });
        }
        let rec = state.record_mut(job_id)?;
        if rec.status != JobStatus::Running {
            return Err(BrokerError::IllegalTransition {
                job_id: job_id.to_owned(),
                from: rec.status,
                to: JobStatus::Running,
            });
        }
        let sample = UtilizationSample {
            job_id: job_id.to_owned(),
            cpu_fraction: sample.cpu_fraction.clamp(0.0, 1.0),
            ..sample
        };
        let at = rec.utilization.partition_point(|s| s.t_offset_seconds <= sample.t_offset_seconds);
        rec.utilization.insert(at, sample);
        state.persist(job_id)
    }

    pub fn job(&self, job_id: &str) -> Option<JobRecord> {
        self.lock(self.now()).jobs.get(job_id).cloned()
    }

    /// All records in submission order.
    pub fn jobs(&self) -> Vec<JobRecord> {
        let state = self.lock(self.now());
        let mut all: Vec<JobRecord> = state.jobs.values().cloned().collect();
        all.sort_by_key(|r| r.seq);
        all
    }

    /// Visible queued jobs in a tier.
    pub fn queue_depth(&self, queue: QueueTier) -> usize {
        self.lock(self.now()).queues.get(&queue).map_or(0, |q| q.len())
    }

    pub fn live_delivery(&self, job_id: &str) -> Option<Delivery> {
        let now = self.now();
        let state = self.lock(now);
        state.deliveries.get(job_id).filter(|d| d.is_live(now)).cloned()
    }

    /// Instances currently holding a live delivery.
    pub fn busy_instances(&self) -> HashSet<String> {
        let now = self.now();
        let state = self.lock(now);
        state
            .deliveries
            .values()
            .filter(|d| d.is_live(now))
            .map(|d| d.instance_id.clone())
            .collect()
    }

    pub fn journal_path(&self) -> Option<PathBuf> {
        self.state.lock().unwrap().journal.as_ref().map(|j| j.path().to_owned())
    }
}
