use super::*;
use crate::audit::{Actor, AuditLog, Outcome};
use crate::auth::Role;
use crate::broker::{BrokerConfig, JobDescription, JobStatus, JobType};
use crate::catalog::CatalogConfig;
use crate::clock::{Clock, ManualClock};

struct Rig {
    clock: ManualClock,
    audit: Arc<AuditLog>,
    auth: Arc<AuthService>,
    catalog: Arc<Catalog>,
    broker: Arc<Broker>,
    alice: Caller,
    bob: Caller,
    dir: tempfile::TempDir,
}

fn bearer_for(auth: &AuthService, who: &str) -> Caller {
    let approval = auth.approve_registration(who).unwrap();
    let refresh = auth.register_client(who, &approval).unwrap();
    Caller::bearer(auth.refresh_access_token(&refresh.bearer).unwrap().bearer)
}

fn rig() -> Rig {
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new();
    let shared: SharedClock = Arc::new(clock.clone());
    let audit = Arc::new(AuditLog::new(shared.clone()));
    let auth = Arc::new(AuthService::new(shared.clone(), audit.clone()));
    auth.add_role(Role::new("klab", "")).unwrap();
    auth.add_role(Role::new("visitors", "")).unwrap();
    auth.add_principal("alice", "Alice", &["klab"]).unwrap();
    auth.add_principal("bob", "Bob", &["visitors"]).unwrap();
    let catalog = Arc::new(
        Catalog::open(
            CatalogConfig::new(dir.path().join("data")).signing_key(b"k"),
            shared.clone(),
            auth.clone(),
            audit.clone(),
        )
        .unwrap(),
    );
    let broker = Arc::new(Broker::open(BrokerConfig::default(), shared, auth.clone(), audit.clone()).unwrap());
    let alice = bearer_for(&auth, "alice");
    let bob = bearer_for(&auth, "bob");
    catalog.put_object(&alice, "s3://klab-jobs/1m_shuffled.txt", b"3\n1\n2\n").unwrap();
    Rig { clock, audit, auth, catalog, broker, alice, bob, dir }
}

impl Rig {
    fn worker(&self, id: &str, config: WorkerConfig, executor: Arc<dyn Executor>) -> Worker {
        self.broker.register_instance(id, QueueTier::Test);
        Worker::new(
            id,
            QueueTier::Test,
            config,
            Arc::new(self.clock.clone()),
            self.broker.clone(),
            self.auth.clone(),
            self.catalog.clone(),
            executor,
        )
    }

    fn config(&self) -> WorkerConfig {
        WorkerConfig::new(self.dir.path().join("sandboxes"))
    }

    fn sim_worker(&self, id: &str, run: SimulatedRun) -> Worker {
        self.worker(id, self.config(), Arc::new(SimulatedExecutor::new(move |_| run.clone())))
    }

    /// Runs workers on the logical clock, one second per round, until `job` is terminal.
    fn drive(&self, workers: &mut [Worker], job: &str, max_secs: u64) -> JobRecord {
        for _ in 0..max_secs {
            let mut external = false;
            for w in workers.iter_mut() {
                w.run_ready();
                external |= w.waiting_on_external();
            }
            let rec = self.broker.job(job).unwrap();
            if rec.status.is_terminal() && workers.iter().all(|w| w.stage() == Stage::Idle) {
                return rec;
            }
            if external {
                std::thread::sleep(Duration::from_millis(2));
            }
            self.clock.advance(1);
            self.broker.tick(self.clock.now());
        }
        panic!("job {job} did not finish: {:?}", self.broker.job(job).unwrap().status_history);
    }
}

fn script(body: &str) -> JobDescription {
    JobDescription::script("t", QueueTier::Test, 5, "/bin/bash myscript.sh", "myscript.sh", body)
}

#[test]
fn hello_world_script_runs_for_real() {
    let r = rig();
    let mut w = r.worker("w1", r.config(), Arc::new(ProcessExecutor));
    let job = r
        .broker
        .submit_job(&r.alice, &script("/bin/bash\n               echo 'Hello world'\n               "))
        .unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.status, JobStatus::Completed, "{}", String::from_utf8_lossy(&rec.stderr));
    assert_eq!(rec.stdout, b"Hello world\n");
    let manifest = r.catalog.fetch(&r.alice, &rec.result_uri.unwrap().to_string(), Action::Read).unwrap();
    assert!(String::from_utf8(manifest).unwrap().contains(&job));
}

#[test]
fn inputs_staged_by_basename_and_outputs_stored() {
    let r = rig();
    let mut w = r.worker("w1", r.config(), Arc::new(ProcessExecutor));
    let desc = script("ls > listing.txt; sort -n 1m_shuffled.txt > sorted.txt")
        .with_inputs(&["s3://klab-jobs/1m_shuffled.txt"])
        .with_outputs(&["s3://klab-jobs/out/sorted.txt", "s3://klab-jobs/out/listing.txt"]);
    let job = r.broker.submit_job(&r.alice, &desc).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.status, JobStatus::Completed, "{}", String::from_utf8_lossy(&rec.stderr));
    let sorted = r.catalog.fetch(&r.alice, "s3://klab-jobs/out/sorted.txt", Action::Read).unwrap();
    assert_eq!(sorted, b"1\n2\n3\n");
    let listing = r.catalog.fetch(&r.alice, "s3://klab-jobs/out/listing.txt", Action::Read).unwrap();
    assert_eq!(listing, b"1m_shuffled.txt\nlisting.txt\nmyscript.sh\n");
    let out = r.catalog.object("s3://klab-jobs/out/sorted.txt").unwrap();
    assert_eq!(out.owner_role.as_str(), "klab");
    assert!(r.dir.path().join("sandboxes/w1").read_dir().unwrap().next().is_none());
}

#[test]
fn nonzero_exit_fails_with_stderr() {
    let r = rig();
    let mut w = r.worker("w1", r.config(), Arc::new(ProcessExecutor));
    let job = r.broker.submit_job(&r.alice, &script("echo oops >&2; exit 3")).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.status, JobStatus::Failed);
    assert_eq!(rec.error.as_deref(), Some("exit status 3"));
    assert_eq!(rec.stderr, b"oops\n");
    assert!(rec.result_uri.is_none());
}

#[test]
fn bad_executable_fails_with_diagnostic() {
    let r = rig();
    let mut w = r.worker("w1", r.config(), Arc::new(ProcessExecutor));
    let mut desc = script("echo hi");
    desc.executable = Some("/no/such/shell myscript.sh".into());
    let job = r.broker.submit_job(&r.alice, &desc).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!((rec.status, rec.error.as_deref()), (JobStatus::Failed, Some("LaunchFailed")));
    assert!(!rec.stderr.is_empty());
}

#[test]
fn denied_input_fails_job_and_is_audited() {
    let r = rig();
    let mut w = r.sim_worker("w1", SimulatedRun::ok(1));
    let desc = script("true").with_inputs(&["s3://klab-jobs/1m_shuffled.txt"]);
    let job = r.broker.submit_job(&r.bob, &desc).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!((rec.status, rec.error.as_deref()), (JobStatus::Failed, Some("AccessDenied")));
    let denied: Vec<_> = r
        .audit
        .events()
        .into_iter()
        .filter(|e| e.outcome == Outcome::Denied && e.actor == Actor::instance("w1"))
        .collect();
    assert!(!denied.is_empty());
    assert!(denied.iter().all(|e| e.effective_role == "visitors"));
}

#[test]
fn staging_conflict_and_unknown_requirement() {
    let r = rig();
    r.catalog.put_object(&r.alice, "s3://klab-jobs/other/1m_shuffled.txt", b"x").unwrap();
    let mut w = r.sim_worker("w1", SimulatedRun::ok(1));
    let desc = script("true").with_inputs(&["s3://klab-jobs/1m_shuffled.txt", "s3://klab-jobs/other/1m_shuffled.txt"]);
    let job = r.broker.submit_job(&r.alice, &desc).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.error.as_deref(), Some("StagingConflict"));

    let job = r.broker.submit_job(&r.alice, &script("true").with_requirements("nosuchpkg")).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.error.as_deref(), Some("UnknownRequirement"));
    assert!(rec.status_history.iter().all(|c| c.status != JobStatus::Running));
}

#[test]
fn requirements_are_put_on_path() {
    let r = rig();
    let mirror = r.dir.path().join("mirror");
    let bin = mirror.join("greeter/1.0/bin");
    std::fs::create_dir_all(&bin).unwrap();
    let tool = bin.join("greet");
    std::fs::write(&tool, "#!/bin/sh\necho greeter-1.0\n").unwrap();
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(&tool, std::fs::Permissions::from_mode(0o755)).unwrap();
    let mut w = r.worker("w1", r.config().mirror(&mirror), Arc::new(ProcessExecutor));
    let job = r.broker.submit_job(&r.alice, &script("greet").with_requirements("greeter==1.0")).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.stdout, b"greeter-1.0\n", "{}", String::from_utf8_lossy(&rec.stderr));
}

#[test]
fn missing_output_fails() {
    let r = rig();
    let mut w = r.sim_worker("w1", SimulatedRun::ok(1));
    let job = r
        .broker
        .submit_job(&r.alice, &script("true").with_outputs(&["s3://klab-jobs/never.txt"]))
        .unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!((rec.status, rec.error.as_deref()), (JobStatus::Failed, Some("MissingOutput")));
    assert!(r.catalog.object("s3://klab-jobs/never.txt").is_none());
}

fn canned(runner: Option<&str>, payload: &[u8]) -> JobDescription {
    JobDescription {
        jobtype: JobType::CannedFunction,
        jobname: "f".into(),
        queue: "Test".into(),
        walltime_minutes: 5,
        executable: runner.map(str::to_owned),
        script_name: None,
        script: None,
        payload_b64: Some(crate::b64::encode(payload)),
        inputs: vec![],
        outputs: vec![],
        requirements: String::new(),
    }
}

#[test]
fn runner_contract_round_trips_result() {
    let r = rig();
    // payload-file args-file result-file: echo args to stdout, copy payload to result.
    let config = r.config().runner("echo", &["/bin/sh", "-c", "cat \"$2\"; cp \"$1\" \"$3\"", "runner"]);
    let mut w = r.worker("w1", config, Arc::new(ProcessExecutor));
    let job = r.broker.submit_job(&r.alice, &canned(Some("echo"), b"\x80\x04opaque")).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.status, JobStatus::Completed, "{}", String::from_utf8_lossy(&rec.stderr));
    let args: serde_json::Value = serde_json::from_slice(&rec.stdout).unwrap();
    assert_eq!(args["job_id"], job.as_str());
    let blob = r.catalog.fetch(&r.alice, &rec.result_uri.unwrap().to_string(), Action::Read).unwrap();
    assert_eq!(blob, b"\x80\x04opaque");
}

#[test]
fn runner_failure_and_missing_runner() {
    let r = rig();
    let config = r.config().runner("python", &["/bin/sh", "-c", "echo bad envelope >&2; exit 2", "runner"]);
    let mut w = r.worker("w1", config, Arc::new(ProcessExecutor));
    let job = r.broker.submit_job(&r.alice, &canned(None, b"x")).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!((rec.status, rec.stderr.as_slice()), (JobStatus::Failed, &b"bad envelope\n"[..]));

    let job = r.broker.submit_job(&r.alice, &canned(Some("julia"), b"x")).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.error.as_deref(), Some("RunnerMissing"));

    let config = r.config().runner("lazy", &["/bin/true"]);
    let mut w2 = r.worker("w2", config, Arc::new(ProcessExecutor));
    let job = r.broker.submit_job(&r.alice, &canned(Some("lazy"), b"x")).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w2), &job, 60);
    assert_eq!(rec.error.as_deref(), Some("MissingResult"));
}

#[test]
fn utilization_only_after_five_minutes() {
    let r = rig();
    let mut desc = script("true");
    desc.walltime_minutes = 10;
    let mut w = r.sim_worker("w1", SimulatedRun::ok(420));
    let long = r.broker.submit_job(&r.alice, &desc).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &long, 1000);
    let offsets: Vec<u64> = rec.utilization.iter().map(|s| s.t_offset_seconds).collect();
    assert!(offsets.len() >= 4, "{offsets:?}");
    assert!(offsets.iter().all(|&t| t > 300));
    assert!(offsets.windows(2).all(|p| p[1] - p[0] == 30));

    let mut w = r.sim_worker("w2", SimulatedRun::ok(240));
    let short = r.broker.submit_job(&r.alice, &desc).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &short, 1000);
    assert_eq!(rec.status, JobStatus::Completed);
    assert!(rec.utilization.is_empty());
}

#[test]
fn walltime_kills_payload() {
    let r = rig();
    let mut desc = script("true");
    desc.walltime_minutes = 1;
    let mut w = r.sim_worker("w1", SimulatedRun::ok(600));
    let job = r.broker.submit_job(&r.alice, &desc).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 1000);
    assert_eq!(rec.status, JobStatus::WalltimeExceeded);
    let running = rec.status_history.iter().find(|c| c.status == JobStatus::Running).unwrap().at;
    assert_eq!(rec.status_history.last().unwrap().at.since(running), 61);
    assert!(r.auth.active_grant("w1").is_none());
}

#[test]
fn heartbeats_carry_long_jobs() {
    let r = rig();
    let mut desc = script("true");
    desc.walltime_minutes = 30;
    let mut w = r.sim_worker("w1", SimulatedRun::ok(20 * 60));
    let job = r.broker.submit_job(&r.alice, &desc).unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 3000);
    assert_eq!((rec.status, rec.attempts), (JobStatus::Completed, 1));
}

#[test]
fn crash_at_any_stage_leads_to_one_completion() {
    for crash_after in 0..9 {
        let r = rig();
        let desc = script("true").with_inputs(&["s3://klab-jobs/1m_shuffled.txt"]).with_outputs(&["s3://klab-jobs/o.txt"]);
        let run = SimulatedRun::ok(5).stdout(b"done\n").file("o.txt", b"out");
        let mut w1 = r.sim_worker("w1", run.clone());
        let job = r.broker.submit_job(&r.alice, &desc).unwrap();
        for _ in 0..crash_after {
            w1.step();
            r.clock.advance(1);
        }
        w1.crash();
        r.broker.deregister_instance("w1");
        let mut w2 = r.sim_worker("w2", run);
        let rec = r.drive(std::slice::from_mut(&mut w2), &job, 1000);
        assert_eq!(rec.status, JobStatus::Completed, "crash after {crash_after}");
        assert_eq!(rec.stdout, b"done\n");
        assert!(r.auth.active_grant("w1").is_none());
        assert!(r.audit.verify_chain());
    }
}

#[test]
fn released_grant_loses_access() {
    let r = rig();
    let mut w = r.sim_worker("w1", SimulatedRun::ok(1));
    let job = r
        .broker
        .submit_job(&r.alice, &script("true").with_inputs(&["s3://klab-jobs/1m_shuffled.txt"]))
        .unwrap();
    let rec = r.drive(std::slice::from_mut(&mut w), &job, 60);
    assert_eq!(rec.status, JobStatus::Completed);
    let again = r.catalog.fetch(&Caller::instance("w1"), "s3://klab-jobs/1m_shuffled.txt", Action::Read);
    assert!(matches!(again, Err(CatalogError::AccessDenied { .. })));
}

#[test]
fn result_bucket_is_sanitized() {
    let uri = result_uri_for("job-000001", &RoleId::new("Knowledge Lab"));
    assert_eq!(uri.to_string(), "s3://results-knowledge-lab/job-000001/result");
}
