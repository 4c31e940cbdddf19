//! Execution agent for one worker instance.
//!
//! A worker is a step-driven state machine so that simulations can advance
//! it one stage at a time (and kill it between any two stages):
//!
//! ```text
//! idle → delivered → assumed → staged-in → env-ready → running → executed
//!      → reporting → releasing → idle
//! ```
//!
//! Every data access happens under `Caller::instance`, so the catalog checks
//! it against whatever role the instance holds at that moment. Heartbeats go
//! out from every stage that holds a delivery; losing the delivery abandons
//! the job without a report.

pub mod env;
pub mod executor;
pub mod sampler;
pub mod sandbox;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

pub use self::env::{Activation, PackageMirror, UnknownRequirement};
pub use self::executor::{
    ExitStatus, Executor, Finished, LaunchSpec, ProcessExecutor, RunningPayload, SimulatedExecutor, SimulatedRun, Usage,
};
pub use self::sampler::{UtilizationSampler, DEFAULT_SAMPLE_INTERVAL_SECS};
pub use self::sandbox::Sandbox;
use crate::auth::{AuthError, AuthService, Caller, RoleId};
use crate::broker::{
    Broker, Delivery, JobRecord, Payload, QueueTier, UtilizationSample, DEFAULT_VISIBILITY_SECS,
    HEARTBEAT_INTERVAL_SECS,
};
use crate::catalog::{Action, Catalog, CatalogError, Checksum, ObjectUri};
use crate::clock::{SharedClock, Timestamp};

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub sandbox_root: PathBuf,
    pub mirror: PackageMirror,
    /// Runner command (program and leading args) per canned payload kind.
    pub runners: HashMap<String, Vec<String>>,
    pub visibility_secs: u64,
    pub heartbeat_interval_secs: u64,
    pub heartbeat_extend_secs: u64,
    pub sample_interval_secs: u64,
    pub keep_sandboxes: bool,
}

impl WorkerConfig {
    pub fn new(sandbox_root: impl Into<PathBuf>) -> Self {
        WorkerConfig {
            sandbox_root: sandbox_root.into(),
            mirror: PackageMirror::empty(),
            runners: HashMap::new(),
            visibility_secs: DEFAULT_VISIBILITY_SECS,
            heartbeat_interval_secs: HEARTBEAT_INTERVAL_SECS,
            heartbeat_extend_secs: HEARTBEAT_INTERVAL_SECS,
            sample_interval_secs: DEFAULT_SAMPLE_INTERVAL_SECS,
            keep_sandboxes: false,
        }
    }

    pub fn runner(mut self, kind: &str, command: &[&str]) -> Self {
        self.runners
            .insert(kind.to_owned(), command.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn mirror(mut self, root: impl Into<PathBuf>) -> Self {
        self.mirror = PackageMirror::new(root);
        self
    }

    pub fn sample_interval(mut self, secs: u64) -> Self {
        self.sample_interval_secs = secs;
        self
    }
}

/// Why a job failed on the worker side. The code becomes the job's error.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkerError {
    #[error("inputs share basename `{0}`")]
    StagingConflict(String),
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error(transparent)]
    UnknownRequirement(#[from] UnknownRequirement),
    #[error("no runner registered for payload kind `{0}`")]
    RunnerMissing(String),
    #[error("declared output {0} was not produced")]
    MissingOutput(String),
    #[error("runner exited cleanly without writing a result file")]
    MissingResult,
    #[error("could not start payload: {0}")]
    LaunchFailed(String),
    #[error("catalog: {0}")]
    Catalog(String),
    #[error("sandbox: {0}")]
    Io(String),
}

impl WorkerError {
    pub fn code(&self) -> &'static str {
        match self {
            WorkerError::StagingConflict(_) => "StagingConflict",
            WorkerError::AccessDenied(_) => "AccessDenied",
            WorkerError::ChecksumMismatch(_) => "ChecksumMismatch",
            WorkerError::UnknownRequirement(_) => "UnknownRequirement",
            WorkerError::RunnerMissing(_) => "RunnerMissing",
            WorkerError::MissingOutput(_) => "MissingOutput",
            WorkerError::MissingResult => "MissingResult",
            WorkerError::LaunchFailed(_) => "LaunchFailed",
            WorkerError::Catalog(_) => "CatalogError",
            WorkerError::Io(_) => "SandboxError",
        }
    }

    fn from_catalog(uri: &str, e: CatalogError) -> Self {
        match e {
            CatalogError::AccessDenied { .. } => WorkerError::AccessDenied(uri.to_owned()),
            CatalogError::ChecksumMismatch(_) => WorkerError::ChecksumMismatch(uri.to_owned()),
            other => WorkerError::Catalog(format!("{uri}: {other}")),
        }
    }
}

fn io_err(e: std::io::Error) -> WorkerError {
    WorkerError::Io(e.to_string())
}

/// Where a job's result blob lands: a per-role results bucket.
pub fn result_uri_for(job_id: &str, owner_role: &RoleId) -> ObjectUri {
    let mut role: String = owner_role
        .as_str()
        .chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' { c } else { '-' }
        })
        .collect();
    role.truncate(63 - "results-".len());
    ObjectUri::new(&format!("results-{role}"), &format!("{job_id}/result")).expect("sanitized bucket and plain key")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Idle,
    Delivered,
    Assumed,
    StagedIn,
    EnvReady,
    Running,
    Executed,
    Reporting,
    Releasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Nothing to do: no job held and the queue was empty.
    Idle,
    /// Moved to the given stage.
    Progress(Stage),
    /// A payload is running and has not finished.
    Waiting,
}

enum Report {
    Complete(ObjectUri, Vec<u8>, Vec<u8>),
    Fail(String, Vec<u8>, Vec<u8>),
}

struct Active {
    delivery: Delivery,
    record: JobRecord,
    stage: Stage,
    sandbox: Option<Sandbox>,
    activation: Activation,
    payload: Option<Box<dyn RunningPayload>>,
    started_at: Timestamp,
    sampler: UtilizationSampler,
    next_heartbeat: Timestamp,
    finished: Option<Finished>,
    report: Option<Report>,
}

impl Active {
    fn fail(&mut self, err: WorkerError, stdout: Vec<u8>, mut stderr: Vec<u8>) {
        stderr.extend_from_slice(format!("kotta-worker: {}: {err}\n", err.code()).as_bytes());
        self.report = Some(Report::Fail(err.code().to_owned(), stdout, stderr));
        self.stage = Stage::Reporting;
    }
}

pub struct Worker {
    instance_id: String,
    pool: QueueTier,
    config: WorkerConfig,
    clock: SharedClock,
    broker: Arc<Broker>,
    auth: Arc<AuthService>,
    catalog: Arc<Catalog>,
    executor: Arc<dyn Executor>,
    active: Option<Active>,
}

impl std::fmt::Debug for Worker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Worker")
            .field("instance_id", &self.instance_id)
            .field("pool", &self.pool)
            .field("stage", &self.stage())
            .finish()
    }
}

impl Worker {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        instance_id: &str,
        pool: QueueTier,
        config: WorkerConfig,
        clock: SharedClock,
        broker: Arc<Broker>,
        auth: Arc<AuthService>,
        catalog: Arc<Catalog>,
        executor: Arc<dyn Executor>,
    ) -> Self {
        Worker {
            instance_id: instance_id.to_owned(),
            pool,
            config,
            clock,
            broker,
            auth,
            catalog,
            executor,
            active: None,
        }
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn pool(&self) -> QueueTier {
        self.pool
    }

    pub fn stage(&self) -> Stage {
        self.active.as_ref().map_or(Stage::Idle, |a| a.stage)
    }

    pub fn current_job(&self) -> Option<&str> {
        self.active.as_ref().map(|a| a.delivery.job_id.as_str())
    }

    /// True while a real process is executing, so callers should give it wall time.
    pub fn waiting_on_external(&self) -> bool {
        self.active
            .as_ref()
            .and_then(|a| a.payload.as_ref())
            .is_some_and(|p| p.is_external())
    }

    fn caller(&self) -> Caller {
        Caller::instance(&self.instance_id)
    }

    /// Advances by one stage.
    pub fn step(&mut self) -> StepOutcome {
        let now = self.clock.now();
        let Some(mut active) = self.active.take() else {
            return self.poll_queue(now);
        };
        if active.stage != Stage::Releasing
            && active.stage != Stage::Reporting
            && now >= active.next_heartbeat
        {
            match self
                .broker
                .heartbeat(&self.instance_id, &active.delivery.job_id, self.config.heartbeat_extend_secs)
            {
                Ok(_) => active.next_heartbeat = now.plus(self.config.heartbeat_interval_secs),
                Err(e) => {
                    tracing::info!("{}: lost {}: {e}", self.instance_id, active.delivery.job_id);
                    self.abandon(active);
                    return StepOutcome::Progress(Stage::Idle);
                }
            }
        }
        let outcome = self.advance(&mut active, now);
        if active.stage == Stage::Idle {
            return StepOutcome::Progress(Stage::Idle);
        }
        self.active = Some(active);
        outcome
    }

    /// Steps until the worker idles or waits on a running payload.
    pub fn run_ready(&mut self) -> StepOutcome {
        loop {
            match self.step() {
                StepOutcome::Progress(_) => continue,
                other => return other,
            }
        }
    }

    fn poll_queue(&mut self, now: Timestamp) -> StepOutcome {
        let delivery = match self.broker.dequeue(&self.instance_id, self.pool, self.config.visibility_secs) {
            Ok(Some(d)) => d,
            Ok(None) => return StepOutcome::Idle,
            Err(e) => {
                tracing::warn!("{}: dequeue failed: {e}", self.instance_id);
                return StepOutcome::Idle;
            }
        };
        let Some(record) = self.broker.job(&delivery.job_id) else {
            return StepOutcome::Idle;
        };
        self.active = Some(Active {
            delivery,
            record,
            stage: Stage::Delivered,
            sandbox: None,
            activation: Activation::default(),
            payload: None,
            started_at: now,
            sampler: UtilizationSampler::new(self.config.sample_interval_secs),
            next_heartbeat: now.plus(self.config.heartbeat_interval_secs),
            finished: None,
            report: None,
        });
        StepOutcome::Progress(Stage::Delivered)
    }

    fn advance(&mut self, a: &mut Active, now: Timestamp) -> StepOutcome {
        let job_id = a.delivery.job_id.clone();
        match a.stage {
            Stage::Idle => {}
            Stage::Delivered => {
                let assumed = self
                    .broker
                    .assignment(&self.instance_id, &job_id)
                    .map_err(|e| e.to_string())
                    .and_then(|asg| self.auth.assume_role(&asg).map_err(|e| {
                        if let AuthError::GrantConflict { .. } = e {
                            self.auth.release_instance(&self.instance_id, "stale_grant");
                        }
                        e.to_string()
                    }));
                match assumed {
                    Ok(_) => a.stage = Stage::Assumed,
                    Err(e) => {
                        tracing::warn!("{}: cannot assume role for {job_id}: {e}", self.instance_id);
                        self.drop_job(a, false);
                    }
                }
            }
            Stage::Assumed => match self.stage_in(a) {
                Ok(()) => a.stage = Stage::StagedIn,
                Err(e) => a.fail(e, Vec::new(), Vec::new()),
            },
            Stage::StagedIn => match self.config.mirror.resolve(&a.record.requirements) {
                Ok(act) => {
                    a.activation = act;
                    a.stage = Stage::EnvReady;
                }
                Err(e) => a.fail(e.into(), Vec::new(), Vec::new()),
            },
            Stage::EnvReady => match self.launch_spec(a, now) {
                Err(e) => a.fail(e, Vec::new(), Vec::new()),
                Ok(spec) => {
                    if self.broker.start_job(&self.instance_id, &job_id).is_err() {
                        self.drop_job(a, true);
                        return StepOutcome::Progress(Stage::Idle);
                    }
                    a.started_at = now;
                    match self.executor.start(&spec) {
                        Ok(p) => {
                            a.payload = Some(p);
                            a.stage = Stage::Running;
                        }
                        Err(e) => a.fail(WorkerError::LaunchFailed(format!("{}: {e}", spec.command[0])), Vec::new(), Vec::new()),
                    }
                }
            },
            Stage::Running => return self.supervise(a, now),
            Stage::Executed => {
                let f = a.finished.take().expect("executed stage holds an outcome");
                match f.exit {
                    ExitStatus::Ok => match self.stage_out(a) {
                        Ok(uri) => {
                            a.report = Some(Report::Complete(uri, f.stdout, f.stderr));
                            a.stage = Stage::Reporting;
                        }
                        Err(e) => a.fail(e, f.stdout, f.stderr),
                    },
                    other => {
                        let error = match other {
                            ExitStatus::Nonzero(c) => format!("exit status {c}"),
                            ExitStatus::Timeout => "timeout".into(),
                            _ => "crashed".into(),
                        };
                        a.report = Some(Report::Fail(error, f.stdout, f.stderr));
                        a.stage = Stage::Reporting;
                    }
                }
            }
            Stage::Reporting => {
                let result = match a.report.take().expect("reporting stage holds a report") {
                    Report::Complete(uri, out, err) => self.broker.complete_job(&self.instance_id, &job_id, uri, out, err),
                    Report::Fail(error, out, err) => self.broker.fail_job(&self.instance_id, &job_id, &error, out, err),
                };
                if let Err(e) = result {
                    tracing::info!("{}: report for {job_id} rejected: {e}", self.instance_id);
                }
                a.stage = Stage::Releasing;
            }
            Stage::Releasing => {
                self.drop_job(a, true);
            }
        }
        StepOutcome::Progress(a.stage)
    }

    fn supervise(&mut self, a: &mut Active, now: Timestamp) -> StepOutcome {
        let job_id = a.delivery.job_id.clone();
        let elapsed = now.since(a.started_at);
        let payload = a.payload.as_mut().expect("running stage holds a payload");
        if elapsed > a.record.walltime_secs() {
            let f = payload.kill();
            a.payload = None;
            self.broker.enforce_walltime(now);
            self.broker.append_streams(&job_id, &f.stdout, &f.stderr);
            a.stage = Stage::Releasing;
            return StepOutcome::Progress(Stage::Releasing);
        }
        if let Some(offset) = a.sampler.due(elapsed) {
            let usage = payload.usage(now);
            let sample = UtilizationSample {
                job_id: job_id.clone(),
                t_offset_seconds: offset,
                cpu_fraction: usage.cpu_fraction,
                mem_bytes: usage.mem_bytes,
            };
            if let Err(e) = self.broker.record_utilization(&self.instance_id, &job_id, sample) {
                tracing::debug!("{}: utilization sample dropped: {e}", self.instance_id);
            }
        }
        match payload.poll(now) {
            Some(f) => {
                a.payload = None;
                a.finished = Some(f);
                a.stage = Stage::Executed;
                StepOutcome::Progress(Stage::Executed)
            }
            None => StepOutcome::Waiting,
        }
    }

    fn stage_in(&self, a: &mut Active) -> Result<(), WorkerError> {
        let dup = Sandbox::collisions(a.record.inputs.iter().map(|u| u.basename()));
        if let Some(name) = dup.into_iter().next() {
            return Err(WorkerError::StagingConflict(name));
        }
        let mut sandbox = Sandbox::create(
            &self.config.sandbox_root,
            &self.instance_id,
            &a.delivery.job_id,
            self.config.keep_sandboxes,
        )
        .map_err(io_err)?;
        let caller = self.caller();
        for uri in &a.record.inputs {
            let text = uri.to_string();
            let bytes = self
                .catalog
                .fetch(&caller, &text, Action::Read)
                .map_err(|e| WorkerError::from_catalog(&text, e))?;
            if self.catalog.object(&text).map(|o| o.checksum) != Some(Checksum::of(&bytes)) {
                return Err(WorkerError::ChecksumMismatch(text));
            }
            sandbox.write_input(&text, uri.basename(), &bytes).map_err(io_err)?;
        }
        a.sandbox = Some(sandbox);
        Ok(())
    }

    fn launch_spec(&self, a: &Active, now: Timestamp) -> Result<LaunchSpec, WorkerError> {
        let sandbox = a.sandbox.as_ref().expect("staged jobs have a sandbox");
        let work = sandbox.work_dir();
        let command = match &a.record.payload {
            Payload::Script { executable, script_name, script } => {
                std::fs::write(work.join(script_name), script).map_err(io_err)?;
                executable.split_whitespace().map(str::to_owned).collect()
            }
            Payload::Canned { runner, bytes } => {
                let base = self
                    .config
                    .runners
                    .get(runner)
                    .ok_or_else(|| WorkerError::RunnerMissing(runner.clone()))?;
                let meta = sandbox.meta_dir();
                let args = serde_json::json!({
                    "job_id": a.delivery.job_id,
                    "inputs": a.record.inputs.iter().map(|u| u.basename()).collect::<Vec<_>>(),
                    "outputs": a.record.outputs.iter().map(|u| u.basename()).collect::<Vec<_>>(),
                });
                std::fs::write(meta.join("payload.bin"), bytes).map_err(io_err)?;
                std::fs::write(meta.join("args.json"), args.to_string()).map_err(io_err)?;
                let mut cmd = base.clone();
                for f in ["payload.bin", "args.json", "result.bin"] {
                    cmd.push(meta.join(f).display().to_string());
                }
                cmd
            }
        };
        Ok(LaunchSpec {
            job_id: a.delivery.job_id.clone(),
            command,
            work_dir: work,
            path_prepend: a.activation.path_prepend(),
            env: a.activation.env(),
            started_at: now,
        })
    }

    fn stage_out(&self, a: &Active) -> Result<ObjectUri, WorkerError> {
        let sandbox = a.sandbox.as_ref().expect("executed jobs have a sandbox");
        let caller = self.caller();
        let mut written = Vec::new();
        for out in &a.record.outputs {
            let text = out.to_string();
            let path = sandbox
                .produced(out.basename())
                .ok_or_else(|| WorkerError::MissingOutput(text.clone()))?;
            let bytes = std::fs::read(path).map_err(io_err)?;
            self.catalog
                .put_object(&caller, &text, &bytes)
                .map_err(|e| WorkerError::from_catalog(&text, e))?;
            written.push(text);
        }
        let blob = match &a.record.payload {
            Payload::Canned { .. } => {
                std::fs::read(sandbox.meta_dir().join("result.bin")).map_err(|_| WorkerError::MissingResult)?
            }
            Payload::Script { .. } => serde_json::to_vec_pretty(&serde_json::json!({
                "job_id": a.delivery.job_id,
                "attempt": a.delivery.attempt,
                "exit": "ok",
                "outputs": written,
            }))
            .expect("manifest serializes"),
        };
        let uri = result_uri_for(&a.delivery.job_id, &a.record.owner_role);
        let text = uri.to_string();
        self.catalog
            .put_object(&caller, &text, &blob)
            .map_err(|e| WorkerError::from_catalog(&text, e))?;
        Ok(uri)
    }

    /// Ends the worker's hold on a job: kills any payload, releases the
    /// grant if asked, and removes the sandbox.
    fn drop_job(&mut self, a: &mut Active, release: bool) {
        if let Some(mut p) = a.payload.take() {
            p.kill();
        }
        if release {
            if let Err(e) = self.auth.release_role(&self.instance_id, &a.delivery.job_id) {
                tracing::debug!("{}: {e}", self.instance_id);
            }
        }
        a.sandbox = None;
        a.stage = Stage::Idle;
    }

    /// The delivery is gone (lapsed, redelivered or walltime-terminated).
    fn abandon(&mut self, mut a: Active) {
        if let Some(mut p) = a.payload.take() {
            let f = p.kill();
            self.broker.append_streams(&a.delivery.job_id, &f.stdout, &f.stderr);
        }
        let granted = a.stage != Stage::Delivered;
        self.drop_job(&mut a, granted);
    }

    /// Simulates losing the instance: in-flight work vanishes without a
    /// report, and auth closes whatever grant it held.
    pub fn crash(&mut self) {
        if let Some(mut a) = self.active.take() {
            if let Some(mut p) = a.payload.take() {
                p.kill();
            }
        }
        self.auth.release_instance(&self.instance_id, "instance_lost");
    }

    /// Polls and executes until `shutdown` is set, backing off while idle.
    pub fn run(&mut self, shutdown: &AtomicBool) {
        let mut backoff = Duration::from_millis(50);
        while !shutdown.load(Ordering::Relaxed) {
            match self.step() {
                StepOutcome::Idle => {
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_secs(2));
                }
                StepOutcome::Progress(_) => backoff = Duration::from_millis(50),
                StepOutcome::Waiting => std::thread::sleep(Duration::from_millis(20)),
            }
        }
        if let Some(a) = self.active.take() {
            self.abandon(a);
        }
    }
}

#[cfg(test)]
mod tests;
