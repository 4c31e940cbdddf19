//! Submit the classic hello-world script job over REST and print its stdout.

use std::sync::Arc;

use kotta::auth::Role;
use kotta::broker::{JobDescription, QueueTier};
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::gateway::{self, Client, Egress, GatewayState};
use kotta::worker::ProcessExecutor;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = Simulation::new(EnclaveConfig::new(dir.path()), Arc::new(ProcessExecutor)).unwrap();
    let gw = gateway::spawn("127.0.0.1:0", GatewayState::new(sim.services().clone(), Egress::Open)).unwrap();

    let auth = &sim.services().auth;
    auth.add_role(Role::new("klab", "K lab members")).unwrap();
    auth.add_principal("alice", "Alice", &["klab"]).unwrap();
    let approval = auth.approve_registration("alice").unwrap();
    let refresh = auth.register_client("alice", &approval).unwrap();
    let alice = Client::new(&gw.endpoint()).with_refresh_token(&refresh.bearer);

    // The Test pool keeps one warm instance; wait for it.
    sim.run_until(600, |e| e.workers().count() > 0);

    let job = JobDescription::script(
        "Hello",
        QueueTier::Test,
        5,
        "/bin/bash myscript.sh",
        "myscript.sh",
        "/bin/bash\n               echo 'Hello world'\n               ",
    );
    let id = alice.submit(&job).unwrap();
    println!("submitted {id}");
    sim.run_until_quiet(60);

    let view = alice.status(&id).unwrap();
    for change in &view.history {
        println!("  t={:>4} {}", change.at.0, change.status.as_str());
    }
    print!("stdout: {}", String::from_utf8_lossy(&alice.stdout(&id).unwrap()));
}
