//! A worker assumes the job owner's role only for the job's lifetime; the
//! audit trail shows every data access bracketed by assume and release.

use std::sync::Arc;

use kotta::auth::{Caller, Role};
use kotta::broker::{JobDescription, QueueTier};
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::worker::ProcessExecutor;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = Simulation::new(EnclaveConfig::new(dir.path()), Arc::new(ProcessExecutor)).unwrap();
    let s = sim.services().clone();
    s.auth.add_role(Role::new("klab", "")).unwrap();
    s.auth.add_principal("alice", "Alice", &["klab"]).unwrap();
    let approval = s.auth.approve_registration("alice").unwrap();
    let refresh = s.auth.register_client("alice", &approval).unwrap();
    let alice = Caller::bearer(s.auth.refresh_access_token(&refresh.bearer).unwrap().bearer);

    s.catalog.put_object(&alice, "s3://klab-jobs/1m_shuffled.txt", b"3\n1\n2\n").unwrap();
    let job = JobDescription::script("sort", QueueTier::Test, 5, "/bin/bash sort.sh", "sort.sh", "sort -n 1m_shuffled.txt > sorted.txt")
        .with_inputs(&["s3://klab-jobs/1m_shuffled.txt"])
        .with_outputs(&["s3://klab-jobs/sorted.txt"]);
    let id = s.broker.submit_job(&alice, &job).unwrap();
    sim.run_until_quiet(600);

    println!("{id}: {:?}", s.broker.job(&id).unwrap().status);
    println!("sorted: {:?}", String::from_utf8_lossy(&s.catalog.fetch(&alice, "s3://klab-jobs/sorted.txt", kotta::catalog::Action::Read).unwrap()));
    for ev in s.audit.events().iter().filter(|e| e.actor.instance_id().is_some()) {
        println!(
            "#{:<3} {:<10} {:<14} {:<40} as {:<8} {:?}",
            ev.seq,
            ev.actor.as_str(),
            ev.action,
            ev.target,
            ev.effective_role,
            ev.outcome
        );
    }
}
