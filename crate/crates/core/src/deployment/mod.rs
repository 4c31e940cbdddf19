//! Wiring: one enclave = auth + catalog + broker + autoscaler + workers on a
//! shared clock and a shared audit log.
//!
//! [`Enclave::tick`] runs one round of the control loop: the autoscaler
//! advances its pools, workers are started on instances that became ready
//! and torn down on instances that went away, every worker runs until it
//! blocks, and the broker reaps lapsed deliveries and overrun walltimes.
//! [`Simulation`] drives an enclave on a manual clock; [`serve`] drives it
//! on the system clock from a background thread.

pub mod site;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub use self::site::{SiteConfig, SiteError};
use crate::audit::AuditLog;
use crate::auth::AuthService;
use crate::autoscaler::{Autoscaler, AutoscalerConfig, InterruptionEvent, PoolEvent, TerminationReason};
use crate::broker::{Broker, BrokerConfig};
use crate::catalog::{Catalog, CatalogConfig};
use crate::clock::{Clock, ManualClock, SharedClock, Timestamp};
use crate::worker::{Executor, Worker, WorkerConfig};

/// The shared services a front end (gateway, CLI, tests) talks to.
#[derive(Debug, Clone)]
pub struct Services {
    pub clock: SharedClock,
    pub audit: Arc<AuditLog>,
    pub auth: Arc<AuthService>,
    pub catalog: Arc<Catalog>,
    pub broker: Arc<Broker>,
}

#[derive(Debug, thiserror::Error)]
pub enum EnclaveError {
    #[error("audit log: {0}")]
    Audit(std::io::Error),
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Broker(#[from] crate::broker::BrokerError),
    #[error(transparent)]
    Autoscaler(#[from] crate::autoscaler::ConfigError),
}

#[derive(Debug, Clone)]
pub struct EnclaveConfig {
    pub catalog: CatalogConfig,
    pub broker: BrokerConfig,
    pub autoscaler: AutoscalerConfig,
    pub worker: WorkerConfig,
    /// Mirror of the audit chain on disk, resumed across restarts.
    pub audit_file: Option<PathBuf>,
}

impl EnclaveConfig {
    /// Catalog under `data_dir/catalog`, sandboxes under `data_dir/sandboxes`,
    /// with the job journal and audit file kept in memory only.
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        let dir = data_dir.into();
        EnclaveConfig {
            catalog: CatalogConfig::new(dir.join("catalog")),
            broker: BrokerConfig::default(),
            autoscaler: AutoscalerConfig::default(),
            worker: WorkerConfig::new(dir.join("sandboxes")),
            audit_file: None,
        }
    }

    /// Keeps the job journal and audit chain under `data_dir` as well.
    pub fn durable(mut self, data_dir: impl Into<PathBuf>) -> Self {
        let dir = data_dir.into();
        self.broker.journal = Some(dir.join("jobs.jsonl"));
        self.audit_file = Some(dir.join("audit.jsonl"));
        self
    }
}

/// What one tick did.
#[derive(Debug, Clone, Default)]
pub struct TickReport {
    pub now: Timestamp,
    pub pool_events: Vec<PoolEvent>,
    /// Jobs the broker reaped this tick (lapsed deliveries, walltime).
    pub reaped: Vec<String>,
    /// Some worker is waiting on a real process and needs wall time.
    pub waiting_on_external: bool,
}

#[derive(Debug)]
pub struct Enclave {
    services: Services,
    autoscaler: Autoscaler,
    workers: BTreeMap<String, Worker>,
    worker_config: WorkerConfig,
    executor: Arc<dyn Executor>,
    kills: u64,
}

impl Enclave {
    pub fn new(config: EnclaveConfig, clock: SharedClock, executor: Arc<dyn Executor>) -> Result<Self, EnclaveError> {
        let audit = Arc::new(match &config.audit_file {
            Some(path) => {
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(EnclaveError::Audit)?;
                }
                AuditLog::with_file_sink(clock.clone(), path).map_err(EnclaveError::Audit)?
            }
            None => AuditLog::new(clock.clone()),
        });
        let auth = Arc::new(AuthService::new(clock.clone(), audit.clone()));
        let catalog = Arc::new(Catalog::open(config.catalog, clock.clone(), auth.clone(), audit.clone())?);
        let broker = Arc::new(Broker::open(config.broker, clock.clone(), auth.clone(), audit.clone())?);
        let autoscaler = Autoscaler::new(config.autoscaler, clock.clone(), broker.clone())?;
        Ok(Enclave {
            services: Services { clock, audit, auth, catalog, broker },
            autoscaler,
            workers: BTreeMap::new(),
            worker_config: config.worker,
            executor,
            kills: 0,
        })
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn now(&self) -> Timestamp {
        self.services.clock.now()
    }

    pub fn autoscaler(&self) -> &Autoscaler {
        &self.autoscaler
    }

    pub fn autoscaler_mut(&mut self) -> &mut Autoscaler {
        &mut self.autoscaler
    }

    pub fn workers(&self) -> impl Iterator<Item = &Worker> {
        self.workers.values()
    }

    pub fn worker(&self, instance_id: &str) -> Option<&Worker> {
        self.workers.get(instance_id)
    }

    /// Worker processes killed so far through [`Enclave::kill_worker`].
    pub fn kills(&self) -> u64 {
        self.kills
    }

    fn spawn_worker(&self, instance_id: &str, pool: crate::broker::QueueTier) -> Worker {
        let s = &self.services;
        Worker::new(
            instance_id,
            pool,
            self.worker_config.clone(),
            s.clock.clone(),
            s.broker.clone(),
            s.auth.clone(),
            s.catalog.clone(),
            self.executor.clone(),
        )
    }

    fn apply(&mut self, events: &[PoolEvent]) {
        for event in events {
            match event {
                PoolEvent::Launched { .. } => {}
                PoolEvent::Ready { instance_id, pool } => {
                    let worker = self.spawn_worker(instance_id, *pool);
                    self.workers.insert(instance_id.clone(), worker);
                }
                PoolEvent::Terminated { instance_id, reason, .. } => {
                    if let Some(mut w) = self.workers.remove(instance_id) {
                        if *reason == TerminationReason::Interrupted || w.current_job().is_some() {
                            w.crash();
                        }
                    }
                }
            }
        }
    }

    /// Lets every worker run until it idles or waits, advancing nothing.
    pub fn run_workers(&mut self) -> bool {
        let mut external = false;
        for w in self.workers.values_mut() {
            w.run_ready();
            external |= w.waiting_on_external();
        }
        external
    }

    pub fn tick(&mut self) -> TickReport {
        let pool_events = self.autoscaler.step();
        self.apply(&pool_events);
        let waiting_on_external = self.run_workers();
        let now = self.now();
        let reaped = self.services.broker.tick(now);
        TickReport { now, pool_events, reaped, waiting_on_external }
    }

    /// Kills the worker process on `instance_id` without warning and starts
    /// a fresh one in its place; whatever it was doing is lost.
    pub fn kill_worker(&mut self, instance_id: &str) -> bool {
        let Some(old) = self.workers.get_mut(instance_id) else {
            return false;
        };
        old.crash();
        let pool = old.pool();
        let fresh = self.spawn_worker(instance_id, pool);
        self.workers.insert(instance_id.to_owned(), fresh);
        self.kills += 1;
        true
    }

    /// Advances one worker by a single stage.
    pub fn step_worker(&mut self, instance_id: &str) -> Option<crate::worker::StepOutcome> {
        self.workers.get_mut(instance_id).map(Worker::step)
    }

    /// Reclaims a spot instance as the market would.
    pub fn interrupt(&mut self, instance_id: &str) -> bool {
        let at = self.now();
        let hit = self.autoscaler.handle_interruption(&InterruptionEvent {
            instance_id: instance_id.to_owned(),
            at,
        });
        if hit {
            // The autoscaler queued the Terminated event; apply it now.
            let events = self.autoscaler.step();
            self.apply(&events);
        }
        hit
    }
}

/// An enclave on a manual clock, advanced one simulated second per round.
#[derive(Debug)]
pub struct Simulation {
    pub clock: ManualClock,
    pub enclave: Enclave,
    /// Wall time granted per round while a real process runs.
    pub external_pause: Duration,
}

impl Simulation {
    pub fn new(config: EnclaveConfig, executor: Arc<dyn Executor>) -> Result<Self, EnclaveError> {
        let clock = ManualClock::new();
        let enclave = Enclave::new(config, Arc::new(clock.clone()), executor)?;
        Ok(Simulation {
            clock,
            enclave,
            external_pause: Duration::from_millis(1),
        })
    }

    pub fn services(&self) -> &Services {
        self.enclave.services()
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Ticks at the current time, then moves the clock forward one second.
    pub fn round(&mut self) -> TickReport {
        let report = self.enclave.tick();
        if report.waiting_on_external {
            std::thread::sleep(self.external_pause);
        }
        self.clock.advance(1);
        report
    }

    pub fn run_for(&mut self, secs: u64) -> Vec<TickReport> {
        (0..secs).map(|_| self.round()).collect()
    }

    /// Rounds until `done` holds (checked before each round) or `max_secs`
    /// pass. Returns whether `done` was reached.
    pub fn run_until(&mut self, max_secs: u64, mut done: impl FnMut(&Enclave) -> bool) -> bool {
        for _ in 0..max_secs {
            if done(&self.enclave) {
                return true;
            }
            self.round();
        }
        done(&self.enclave)
    }

    /// Rounds until every job in the broker is terminal.
    pub fn run_until_quiet(&mut self, max_secs: u64) -> bool {
        self.run_until(max_secs, |e| e.services().broker.jobs().iter().all(|j| j.status.is_terminal()))
    }
}

/// Ticks `enclave` on whatever clock it was built with, every `period`,
/// until `shutdown` is set.
pub fn serve(enclave: Arc<Mutex<Enclave>>, period: Duration, shutdown: Arc<AtomicBool>) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        while !shutdown.load(Ordering::Relaxed) {
            let report = enclave.lock().unwrap().tick();
            let pause = if report.waiting_on_external { period.min(Duration::from_millis(20)) } else { period };
            std::thread::sleep(pause);
        }
    })
}
