//! Two hours of bursty load: the Test pool stays warm on on-demand capacity,
//! Production scales on spot in the cheapest zone. Prints purchases and the
//! per-pool cost report as CSV.

use std::sync::Arc;

use kotta::auth::{Caller, Role};
use kotta::broker::{JobDescription, QueueTier};
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::worker::{SimulatedExecutor, SimulatedRun};
use rand::{Rng, SeedableRng};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let executor = SimulatedExecutor::new(|spec| {
        let text = std::fs::read_to_string(spec.work_dir.join("job.sh")).unwrap_or_default();
        SimulatedRun::ok(text.trim().trim_start_matches("sleep ").parse().unwrap_or(60))
    });
    let mut sim = Simulation::new(EnclaveConfig::new(dir.path()), Arc::new(executor)).unwrap();
    let s = sim.services().clone();
    s.auth.add_role(Role::new("klab", "")).unwrap();
    s.auth.add_principal("alice", "Alice", &["klab"]).unwrap();
    let approval = s.auth.approve_registration("alice").unwrap();
    let refresh = s.auth.register_client("alice", &approval).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);

    for t in 0..2 * 3600 {
        if t % 900 == 60 {
            // Access tokens last an hour; take a fresh one per burst.
            let alice = Caller::bearer(s.auth.refresh_access_token(&refresh.bearer).unwrap().bearer);
            for _ in 0..rng.gen_range(5..30) {
                let secs = rng.gen_range(300..1500);
                let job = JobDescription::script("burst", QueueTier::Production, 60, "/bin/bash job.sh", "job.sh", &format!("sleep {secs}"));
                s.broker.submit_job(&alice, &job).unwrap();
            }
        }
        sim.round();
    }

    let scaler = sim.enclave.autoscaler();
    for d in scaler.spot_decisions() {
        println!("t={:>5} {} {} zone {} at ${:.4}/h (bid ${:.4})", d.at.0, d.instance_id, d.spec, d.zone, d.price, d.bid);
    }
    println!(
        "spend: test ${:.2}, production ${:.2}",
        scaler.spend(QueueTier::Test),
        scaler.spend(QueueTier::Production)
    );
    scaler.write_cost_csv(std::io::stdout()).unwrap();
}
