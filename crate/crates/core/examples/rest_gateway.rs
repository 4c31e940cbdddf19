//! The REST surface: data verbs, signed URLs, error codes, cancel.

use std::sync::Arc;

use kotta::auth::Role;
use kotta::broker::{JobDescription, QueueTier};
use kotta::catalog::Action;
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::gateway::{self, Client, Egress, GatewayState};
use kotta::worker::ProcessExecutor;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let sim = Simulation::new(EnclaveConfig::new(dir.path()), Arc::new(ProcessExecutor)).unwrap();
    let gw = gateway::spawn("127.0.0.1:0", GatewayState::new(sim.services().clone(), Egress::Open)).unwrap();
    let auth = &sim.services().auth;
    auth.add_role(Role::new("klab", "")).unwrap();
    auth.add_role(Role::new("visitors", "")).unwrap();
    let client = |who: &str, role: &str| {
        auth.add_principal(who, who, &[role]).unwrap();
        let approval = auth.approve_registration(who).unwrap();
        Client::new(&gw.endpoint()).with_refresh_token(&auth.register_client(who, &approval).unwrap().bearer)
    };
    let alice = client("alice", "klab");
    let bob = client("bob", "visitors");
    println!("health: {}", alice.health().unwrap());

    alice.put("s3://klab-data/notes.txt", b"enclave bytes".to_vec()).unwrap();
    println!("alice get: {:?}", String::from_utf8(alice.get("s3://klab-data/notes.txt").unwrap()).unwrap());
    println!("bob get: {}", bob.get("s3://klab-data/notes.txt").unwrap_err());

    let url = alice.sign("s3://klab-data/notes.txt", Action::Read, 60).unwrap();
    println!("signed url: {}", url.url);
    println!("anonymous fetch: {:?}", String::from_utf8(Client::new(&gw.endpoint()).fetch_signed(&url.url).unwrap()).unwrap());

    let job = JobDescription::script("later", QueueTier::Production, 5, "/bin/bash run.sh", "run.sh", "true");
    let id = alice.submit(&job).unwrap();
    alice.cancel(&id).unwrap();
    println!("{id} after cancel: {}", alice.status(&id).unwrap().status.as_str());
    println!("cancel again: {}", alice.cancel(&id).unwrap_err());
    println!("no token: {}", Client::new(&gw.endpoint()).status(&id).unwrap_err());
    println!("malformed: {}", alice.submit_raw(&serde_json::json!({"jobtype": "script"})).unwrap_err());
}
