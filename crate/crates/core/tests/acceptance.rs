//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//!
//! Everything runs in-process on a manual clock; clients talk to the
//! enclave through the REST gateway only.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use kotta::audit::{AuditEvent, Outcome};
use kotta::auth::{AuthService, Role};
use kotta::autoscaler::{InstanceState, Market, MarketConfig};
use kotta::broker::{JobDescription, JobStatus, QueueTier};
use kotta::clock::{ManualClock, SharedClock, Timestamp};
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::gateway::{self, Client, Egress, GatewayHandle, GatewayState};
use kotta::worker::{Executor, ProcessExecutor, SimulatedExecutor, SimulatedRun};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome_ = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Deployment {
    sim: Simulation,
    gateway: GatewayHandle,
    _dir: tempfile::TempDir,
}

impl Deployment {
    fn new(configure: impl FnOnce(&mut EnclaveConfig), executor: Arc<dyn Executor>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = EnclaveConfig::new(dir.path());
        config.catalog = config.catalog.signing_key(b"acceptance");
        configure(&mut config);
        let sim = Simulation::new(config, executor).unwrap();
        let gateway = gateway::spawn("127.0.0.1:0", GatewayState::new(sim.services().clone(), Egress::Open)).unwrap();
        Deployment { sim, gateway, _dir: dir }
    }

    fn role(&self, id: &str) {
        self.sim.services().auth.add_role(Role::new(id, "")).unwrap();
    }

    fn auditor_role(&self, id: &str) {
        self.sim.services().auth.add_role(Role::new(id, "").auditor()).unwrap();
    }

    /// Registers `who` and returns a REST client holding their refresh token.
    fn user(&self, who: &str, roles: &[&str]) -> Client {
        let auth = &self.sim.services().auth;
        auth.add_principal(who, who, roles).unwrap();
        let approval = auth.approve_registration(who).unwrap();
        let refresh = auth.register_client(who, &approval).unwrap();
        Client::new(&self.gateway.endpoint()).with_refresh_token(&refresh.bearer)
    }

    fn warm_up(&mut self) {
        assert!(self.sim.run_until(600, |e| e.workers().count() >= 1), "no warm instance");
    }

    fn run_until_terminal(&mut self, client: &Client, ids: &[String], max_secs: u64) -> bool {
        let broker = self.sim.services().broker.clone();
        let done = self.sim.run_until(max_secs, |_| ids.iter().all(|id| broker.job(id).unwrap().status.is_terminal()));
        // Confirm through the API, not just the in-process view.
        done && ids.iter().all(|id| client.status(id).unwrap().status.is_terminal())
    }
}

fn script(name: &str, queue: QueueTier, walltime: i64, body: &str) -> JobDescription {
    JobDescription::script(name, queue, walltime, "/bin/bash myscript.sh", "myscript.sh", body)
}

/// Simulated payloads take as long as the `sleep N` in their script says.
fn sleep_executor(interval_default: u64) -> Arc<dyn Executor> {
    Arc::new(SimulatedExecutor::new(move |spec| {
        let text = std::fs::read_to_string(spec.work_dir.join("myscript.sh")).unwrap_or_default();
        let secs = text
            .split_whitespace()
            .skip_while(|w| *w != "sleep")
            .nth(1)
            .and_then(|n| n.parse().ok())
            .unwrap_or(interval_default);
        SimulatedRun::ok(secs)
    }))
}

// 1 ─────────────────────────────────────────────────────────────────────────

fn hello_world() -> Outcome_ {
    let mut d = Deployment::new(|_| {}, Arc::new(ProcessExecutor));
    d.role("klab");
    let alice = d.user("alice", &["klab"]);
    d.warm_up();
    let wall = Instant::now();
    let job = script(
        "Hello",
        QueueTier::Test,
        5,
        "/bin/bash\n               echo 'Hello world'\n               ",
    );
    let id = alice.submit(&job).map_err(|e| e.to_string())?;
    let submitted = d.sim.now();
    let mut status = alice.status(&id).unwrap().status;
    while !status.is_terminal() && d.sim.now().since(submitted) <= 60 {
        d.sim.round();
        status = alice.status(&id).unwrap().status;
    }
    let simulated = d.sim.now().since(submitted);
    let stdout = alice.stdout(&id).unwrap();
    let wall = wall.elapsed();
    ensure!(status == JobStatus::Completed, "status {status:?} after {simulated} simulated s");
    ensure!(simulated <= 60, "took {simulated} simulated s");
    ensure!(stdout == b"Hello world\n", "stdout {:?}", String::from_utf8_lossy(&stdout));
    ensure!(wall < Duration::from_secs(5), "wall {wall:?}");
    Ok(format!("completed in {simulated} simulated s, {} ms wall, stdout exact", wall.as_millis()))
}

// 2 ─────────────────────────────────────────────────────────────────────────

fn token_lifetimes() -> Outcome_ {
    const ACCESS: u64 = 3600;
    const SESSION: u64 = 6 * 3600;
    let fresh = || {
        let clock = ManualClock::new();
        let shared: SharedClock = Arc::new(clock.clone());
        let audit = Arc::new(kotta::audit::AuditLog::new(shared.clone()));
        let auth = AuthService::new(shared, audit);
        auth.add_role(Role::new("klab", "")).unwrap();
        auth.add_principal("alice", "Alice", &["klab"]).unwrap();
        let approval = auth.approve_registration("alice").unwrap();
        let refresh = auth.register_client("alice", &approval).unwrap().bearer;
        (clock, auth, refresh)
    };

    let (clock, auth, refresh) = fresh();
    clock.set(Timestamp(1000));
    let access = auth.refresh_access_token(&refresh).unwrap().bearer;
    let session = auth.create_session(&access).unwrap().bearer;
    let mut boundaries = Vec::new();
    for (name, bearer, life) in [("access", &access, ACCESS), ("session", &session, SESSION)] {
        clock.set(Timestamp(1000 + life - 1));
        let before = auth.validate(bearer).is_ok();
        clock.set(Timestamp(1000 + life));
        let after = auth.validate(bearer).is_ok();
        ensure!(before && !after, "{name}: valid at {}s={before}, at {}s={after}", life - 1, life);
        boundaries.push(format!("{name} {}/{}", life - 1, life));
    }

    // Interleavings: a model tracks which refresh tokens are revoked.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mints_after_revoke = 0u32;
    let mut checks = 0u32;
    for _ in 0..1000 {
        let (clock, auth, first) = fresh();
        let mut tokens = vec![(first, false)];
        for _ in 0..rng.gen_range(5..30) {
            let i = rng.gen_range(0..tokens.len());
            match rng.gen_range(0..5) {
                0 => {
                    auth.revoke_bearer(&tokens[i].0).unwrap();
                    tokens[i].1 = true;
                }
                1 => {
                    clock.advance(rng.gen_range(0..40_000));
                }
                2 => {
                    // Re-registration after revocation yields an independent token.
                    if tokens.iter().all(|t| t.1) {
                        let approval = auth.approve_registration("alice").unwrap();
                        if let Ok(r) = auth.register_client("alice", &approval) {
                            tokens.push((r.bearer, false));
                        }
                    }
                }
                _ => {
                    let minted = auth.refresh_access_token(&tokens[i].0);
                    checks += 1;
                    if tokens[i].1 && minted.is_ok() {
                        mints_after_revoke += 1;
                    }
                    if let Ok(m) = minted {
                        if let Ok(s) = auth.create_session(&m.bearer) {
                            if rng.gen_bool(0.5) {
                                auth.revoke_bearer(&tokens[i].0).unwrap();
                                tokens[i].1 = true;
                                // A session never mints.
                                ensure!(auth.refresh_access_token(&s.bearer).is_err(), "session minted a token");
                            }
                        }
                    }
                }
            }
        }
        for (t, revoked) in &tokens {
            if *revoked {
                checks += 1;
                if auth.refresh_access_token(t).is_ok() {
                    mints_after_revoke += 1;
                }
            }
        }
    }
    ensure!(mints_after_revoke == 0, "{mints_after_revoke} mints from revoked refresh tokens");
    Ok(format!("{}; 1000 interleavings, {checks} mint attempts, 0 after revoke", boundaries.join(", ")))
}

// 3 ─────────────────────────────────────────────────────────────────────────

fn delegation_sandwich() -> Outcome_ {
    let mut d = Deployment::new(|_| {}, Arc::new(ProcessExecutor));
    for r in ["klab", "nlab", "visitors"] {
        d.role(r);
    }
    d.auditor_role("auditors");
    let users: Vec<(&str, &str, Client)> = vec![
        ("alice", "klab", d.user("alice", &["klab"])),
        ("dave", "klab", d.user("dave", &["klab"])),
        ("erin", "nlab", d.user("erin", &["nlab"])),
    ];
    let bob = d.user("bob", &["visitors"]);
    let carol = d.user("carol", &["auditors"]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (bucket, owner) in [("klab-data", &users[0].2), ("nlab-data", &users[2].2)] {
        for i in 0..10 {
            let body: String = (0..rng.gen_range(1..20)).map(|_| format!("{}\n", rng.gen::<u16>())).collect();
            owner.put(&format!("s3://{bucket}/obj{i}.txt"), body.into_bytes()).unwrap();
        }
    }
    d.warm_up();

    let mut ids = Vec::new();
    for n in 0..50 {
        let (_, role, client) = &users[rng.gen_range(0..users.len())];
        let bucket = format!("{role}-data");
        let mut picks: Vec<usize> = (0..10).collect();
        picks.shuffle(&mut rng);
        let inputs: Vec<String> = picks[..rng.gen_range(1..=3)].iter().map(|i| format!("s3://{bucket}/obj{i}.txt")).collect();
        let outputs: Vec<String> = (0..rng.gen_range(0..=2)).map(|k| format!("s3://{bucket}/out/{n}-{k}.txt")).collect();
        let names: Vec<&str> = inputs.iter().map(|u| u.rsplit('/').next().unwrap()).collect();
        let mut body = format!("cat {}\n", names.join(" "));
        for out in &outputs {
            body.push_str(&format!("sort -n {} > {}\n", names.join(" "), out.rsplit('/').next().unwrap()));
        }
        let queue = if rng.gen_bool(0.5) { QueueTier::Test } else { QueueTier::Production };
        let job = script(&format!("j{n}"), queue, 30, &body)
            .with_inputs(&inputs.iter().map(String::as_str).collect::<Vec<_>>())
            .with_outputs(&outputs.iter().map(String::as_str).collect::<Vec<_>>());
        ids.push(client.submit(&job).unwrap());
    }
    let control_job = script("control", QueueTier::Test, 5, "cat obj0.txt").with_inputs(&["s3://klab-data/obj0.txt"]);
    let control = bob.submit(&control_job).unwrap();
    let mut all = ids.clone();
    all.push(control.clone());
    ensure!(d.run_until_terminal(&carol, &all, 4 * 3600), "jobs did not finish");

    let broker = d.sim.services().broker.clone();
    let failed: Vec<_> = ids.iter().filter(|id| broker.job(id).unwrap().status != JobStatus::Completed).collect();
    ensure!(failed.is_empty(), "jobs not completed: {failed:?}");
    let control_rec = broker.job(&control).unwrap();
    ensure!(
        control_rec.status == JobStatus::Failed && control_rec.error.as_deref() == Some("AccessDenied"),
        "control job {:?} {:?}",
        control_rec.status,
        control_rec.error
    );
    ensure!(carol.audit_verify().unwrap()["ok"] == true, "hash chain does not verify");

    let events: Vec<AuditEvent> = carol.audit(0, None).unwrap();
    ensure!(kotta::audit::verify_events(&events).is_ok(), "exported chain does not verify");
    let mut active: HashMap<String, (String, String)> = HashMap::new();
    let (mut accesses, mut conforming) = (0, 0);
    let mut control_denied = false;
    let mut problems = Vec::new();
    for ev in &events {
        let Some(inst) = ev.actor.instance_id() else { continue };
        match ev.action.as_str() {
            "role_assume" => {
                active.insert(inst.to_owned(), (ev.target.clone(), ev.effective_role.clone()));
            }
            "role_release" => {
                active.remove(inst);
            }
            "get_object" | "put_object" | "sign_url" | "delete_object" => {
                accesses += 1;
                let ok = match active.get(inst) {
                    Some((job, role)) => {
                        let rec = broker.job(job).unwrap();
                        let touches = rec.inputs.iter().chain(&rec.outputs).chain(&rec.result_uri).any(|u| u.to_string() == ev.target);
                        if *job == control && ev.outcome == Outcome::Denied && ev.effective_role == "visitors" {
                            control_denied = true;
                        }
                        *role == rec.owner_role.as_str() && ev.effective_role == *role && touches
                    }
                    None => false,
                };
                if ok {
                    conforming += 1;
                } else {
                    problems.push(format!("#{} {} {} by {inst}", ev.seq, ev.action, ev.target));
                }
            }
            _ => {}
        }
    }
    ensure!(control_denied, "no denied access event for the control job");
    ensure!(conforming == accesses, "{}/{accesses} conform; e.g. {:?}", conforming, problems.first());
    Ok(format!("50 jobs, {accesses} worker data accesses, 100% inside assume/release under owner role; control denied"))
}

// 4 ─────────────────────────────────────────────────────────────────────────

fn kills_and_single_terminal() -> Outcome_ {
    let wall = Instant::now();
    let mut d = Deployment::new(
        |c| {
            c.autoscaler.pools.production.market = Some(Market::OnDemand);
        },
        sleep_executor(5),
    );
    d.role("klab");
    d.auditor_role("auditors");
    let alice = d.user("alice", &["klab"]);
    let carol = d.user("carol", &["auditors"]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ids = Vec::new();
    for n in 0..200 {
        let queue = if n % 2 == 0 { QueueTier::Test } else { QueueTier::Production };
        let job = script(&format!("k{n}"), queue, 30, &format!("sleep {}", rng.gen_range(1..60)));
        ids.push(alice.submit(&job).unwrap());
    }
    let broker = d.sim.services().broker.clone();
    let mut kills = 0;
    let mut rolled = BTreeSet::new();
    for _ in 0..20_000 {
        if ids.iter().all(|id| broker.job(id).unwrap().status.is_terminal()) {
            break;
        }
        // Each delivery attempt gets one kill roll when first seen on a worker.
        let held: Vec<(String, String)> = d
            .sim
            .enclave
            .workers()
            .filter_map(|w| Some((w.instance_id().to_owned(), w.current_job()?.to_owned())))
            .collect();
        for (inst, job) in held {
            let attempt = broker.job(&job).unwrap().attempts;
            if !rolled.insert((job, attempt)) || !rng.gen_bool(0.3) {
                continue;
            }
            for _ in 0..rng.gen_range(0..10) {
                d.sim.enclave.step_worker(&inst);
            }
            d.sim.enclave.kill_worker(&inst);
            kills += 1;
        }
        d.sim.round();
    }
    let events = carol.audit(0, None).unwrap();
    let mut completions: HashMap<&str, u32> = HashMap::new();
    for ev in events.iter().filter(|e| e.action == "job_complete" && e.outcome == Outcome::Allowed) {
        *completions.entry(ev.target.as_str()).or_default() += 1;
    }
    let (mut completed, mut failed, mut redelivered) = (0, 0, 0);
    for id in &ids {
        let rec = alice.status(id).unwrap();
        let terminals = rec.history.iter().filter(|h| h.status.is_terminal()).count();
        ensure!(rec.status.is_terminal() && terminals == 1, "{id}: {:?}", rec.history);
        let n = completions.get(id.as_str()).copied().unwrap_or(0);
        ensure!(n == u32::from(rec.status == JobStatus::Completed), "{id}: completion recorded {n} times");
        match rec.status {
            JobStatus::Completed => completed += 1,
            _ => failed += 1,
        }
        if rec.attempts > 1 {
            redelivered += 1;
        }
    }
    let wall = wall.elapsed();
    ensure!(wall < Duration::from_secs(60), "wall {wall:?}");
    Ok(format!(
        "200 jobs, {kills} kills, {redelivered} redelivered; {completed} completed + {failed} failed, each exactly once; {} s wall",
        wall.as_secs()
    ))
}

// 5 ─────────────────────────────────────────────────────────────────────────

fn warm_minimum_and_cheapest_zone() -> Outcome_ {
    let mut d = Deployment::new(
        |c| {
            c.autoscaler.market = MarketConfig { seed: 5, interruption_probability: 0.001, ..MarketConfig::default() };
            c.autoscaler.pools.test.max_instances = 6;
        },
        sleep_executor(60),
    );
    d.role("klab");
    let alice = d.user("alice", &["klab"]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_test = usize::MAX;
    let (mut min_ready, mut warm_since) = (usize::MAX, None);
    let mut submitted = 0;
    for t in 0..2 * 3600u64 {
        // Bursts every ten minutes, quiet in between, plus a trickle of test jobs.
        if t % 600 == 30 {
            for _ in 0..rng.gen_range(4..25) {
                let job = script("burst", QueueTier::Production, 30, &format!("sleep {}", rng.gen_range(120..900)));
                alice.submit(&job).unwrap();
                submitted += 1;
            }
            for _ in 0..rng.gen_range(0..8) {
                let job = script("probe", QueueTier::Test, 10, &format!("sleep {}", rng.gen_range(30..300)));
                alice.submit(&job).unwrap();
                submitted += 1;
            }
        }
        d.sim.round();
        let scaler = d.sim.enclave.autoscaler();
        min_test = min_test.min(scaler.pool_size(QueueTier::Test));
        let ready = scaler.count_in(QueueTier::Test, InstanceState::Ready) + scaler.count_in(QueueTier::Test, InstanceState::Busy);
        if warm_since.is_none() && ready > 0 {
            warm_since = Some(t);
        }
        if warm_since.is_some() {
            min_ready = min_ready.min(ready);
        }
    }
    let scaler = d.sim.enclave.autoscaler();
    let (mut mismatches, mut decisions) = (0, 0);
    for dec in scaler.spot_decisions() {
        decisions += 1;
        let spec = scaler.config().specs.iter().find(|s| s.name == dec.spec).unwrap();
        let prices: Vec<f64> = (1..=4).map(|z| scaler.market().price(spec, z, dec.at)).collect();
        let mut best = 0;
        for z in 1..prices.len() {
            if prices[z] < prices[best] {
                best = z;
            }
        }
        if dec.zone != best + 1 || dec.price != prices[best] {
            mismatches += 1;
        }
    }
    let end = d.sim.now();
    let mut worst_ready = 0;
    let mut on_demand = 0;
    for inst in scaler.instances().filter(|i| i.market == Market::OnDemand) {
        on_demand += 1;
        let waited = match inst.ready_at {
            Some(r) => r.since(inst.launched_at),
            None if inst.terminated_at.is_none() => end.since(inst.launched_at),
            None => 0,
        };
        worst_ready = worst_ready.max(waited);
    }
    ensure!(min_test >= 1, "Test pool dropped to {min_test}");
    ensure!(min_ready >= 1, "no up Test instance at some second after warm-up");
    ensure!(decisions > 0, "no spot purchases in the trace");
    ensure!(mismatches == 0, "{mismatches}/{decisions} spot purchases not at the cheapest zone");
    ensure!(on_demand > 1, "trace never scaled the on-demand pool");
    ensure!(worst_ready <= 120, "an on-demand instance took {worst_ready} s");
    Ok(format!(
        "{submitted} jobs over 2 h; Test pool min {min_test} (up min {min_ready} from t={}s); {decisions} spot buys, 0 mismatches; {on_demand} on-demand, slowest ready {worst_ready} s",
        warm_since.unwrap()
    ))
}

// 6 ─────────────────────────────────────────────────────────────────────────

/// Byte-capacity LRU replay: reads admit objects that fit and evict the
/// least recently read until they do.
struct ReferenceLru {
    sizes: Vec<u64>,
    capacity: u64,
    used: u64,
    order: VecDeque<usize>,
}

impl ReferenceLru {
    fn access(&mut self, obj: usize) {
        let size = self.sizes[obj];
        if let Some(pos) = self.order.iter().position(|&o| o == obj) {
            self.order.remove(pos);
            self.order.push_back(obj);
            return;
        }
        if size > self.capacity {
            return;
        }
        while self.used + size > self.capacity {
            let victim = self.order.pop_front().unwrap();
            self.used -= self.sizes[victim];
        }
        self.order.push_back(obj);
        self.used += size;
    }
}

fn lru_equivalence() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sizes: Vec<u64> = (0..200).map(|_| rng.gen_range(64..8192)).collect();
    let total: u64 = sizes.iter().sum();
    let capacity = total * 5 / 100;
    let d = Deployment::new(|c| c.catalog = c.catalog.clone().hot_capacity(capacity), Arc::new(ProcessExecutor));
    d.role("klab");
    let alice = d.user("alice", &["klab"]);
    let uri = |i: usize| format!("s3://klab-lru/obj{i:03}");
    for (i, &size) in sizes.iter().enumerate() {
        alice.put(&uri(i), vec![b'x'; size as usize]).unwrap();
    }
    let catalog = d.sim.services().catalog.clone();
    let mut reference = ReferenceLru { sizes: sizes.clone(), capacity, used: 0, order: VecDeque::new() };
    let mut peak = 0;
    for n in 0..10_000 {
        // Skewed popularity so the hot set actually churns and repeats.
        let i = if rng.gen_bool(0.7) { rng.gen_range(0..20) } else { rng.gen_range(0..200) };
        let bytes = alice.get(&uri(i)).unwrap();
        ensure!(bytes.len() as u64 == sizes[i], "access {n}: wrong bytes for {}", uri(i));
        reference.access(i);
        let want: BTreeSet<String> = reference.order.iter().map(|&o| uri(o)).collect();
        let got: BTreeSet<String> = catalog.hot_set().into_iter().collect();
        ensure!(got == want, "access {n}: hot set diverged ({} vs {} objects)", got.len(), want.len());
        let used = catalog.hot_bytes();
        ensure!(used <= capacity, "access {n}: {used} hot bytes > capacity {capacity}");
        peak = peak.max(used);
    }
    ensure!(catalog.hot_file_count() == catalog.hot_set().len(), "hot files on disk differ from hot set");
    Ok(format!("10000 accesses over 200 objects, capacity {capacity} B (5%), peak {peak} B, 0 divergences"))
}

// 7 ─────────────────────────────────────────────────────────────────────────

fn utilization_rule() -> Outcome_ {
    const INTERVAL: u64 = 30;
    let mut d = Deployment::new(|c| c.worker.sample_interval_secs = INTERVAL, sleep_executor(1));
    d.role("klab");
    let alice = d.user("alice", &["klab"]);
    d.warm_up();
    let long = alice.submit(&script("seven", QueueTier::Test, 10, "sleep 420")).unwrap();
    let short = alice.submit(&script("four", QueueTier::Test, 10, "sleep 240")).unwrap();
    ensure!(d.run_until_terminal(&alice, &[long.clone(), short.clone()], 3600), "jobs did not finish");
    let samples: Vec<u64> = alice.utilization(&long).unwrap().iter().map(|s| s.t_offset_seconds).collect();
    let none = alice.utilization(&short).unwrap();
    ensure!(!samples.is_empty(), "7-minute job has no samples");
    ensure!(samples.iter().all(|&t| t > 300 && t <= 420), "offsets {samples:?}");
    ensure!(samples.windows(2).all(|w| w[1] - w[0] == INTERVAL), "spacing {samples:?}");
    ensure!(none.is_empty(), "4-minute job has {} samples", none.len());
    Ok(format!("7-min job sampled at {samples:?}; 4-min job none"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome_); 7] = [
        ("hello-world end-to-end over REST", hello_world),
        ("token lifetimes and revocation", token_lifetimes),
        ("delegation sandwich", delegation_sandwich),
        ("at-least-once, single terminal status under kills", kills_and_single_terminal),
        ("warm minimum and cheapest-zone spot bidding", warm_minimum_and_cheapest_zone),
        ("LRU tier equivalence", lru_equivalence),
        ("utilization sampling rule", utilization_rule),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let n = n + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string()) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n}: PASS  {name} — {detail} [{secs:.1}s]"),
            Err(why) => {
                failures += 1;
                println!("criterion {n}: FAIL  {name} — {why} [{secs:.1}s]");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
