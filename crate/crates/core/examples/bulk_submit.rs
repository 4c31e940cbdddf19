//! Fan out a parameter sweep of script jobs and collect the results.

use std::sync::Arc;

use kotta::auth::Role;
use kotta::broker::{JobDescription, QueueTier};
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::gateway::{self, Client, Egress, GatewayState};
use kotta::worker::ProcessExecutor;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = EnclaveConfig::new(dir.path());
    config.autoscaler.pools.test.max_instances = 4;
    let mut sim = Simulation::new(config, Arc::new(ProcessExecutor)).unwrap();
    let gw = gateway::spawn("127.0.0.1:0", GatewayState::new(sim.services().clone(), Egress::Open)).unwrap();
    let auth = &sim.services().auth;
    auth.add_role(Role::new("klab", "")).unwrap();
    auth.add_principal("alice", "Alice", &["klab"]).unwrap();
    let approval = auth.approve_registration("alice").unwrap();
    let alice = Client::new(&gw.endpoint()).with_refresh_token(&auth.register_client("alice", &approval).unwrap().bearer);

    let ids: Vec<String> = (1..=12)
        .map(|n| {
            let script = format!("echo $(( {n} * {n} ))");
            alice.submit(&JobDescription::script(&format!("square-{n}"), QueueTier::Test, 5, "/bin/bash sq.sh", "sq.sh", &script)).unwrap()
        })
        .collect();
    sim.run_until_quiet(3600);

    for id in &ids {
        let view = alice.status(id).unwrap();
        let out = String::from_utf8(alice.stdout(id).unwrap()).unwrap();
        println!("{id} {:<10} {:<9} {}", view.jobname, view.status.as_str(), out.trim());
    }
    let scaler = sim.enclave.autoscaler();
    println!("test pool peaked at {} instances", scaler.cost_report().iter().filter(|r| r.pool == QueueTier::Test).map(|r| r.instances).max().unwrap_or(0));
}
