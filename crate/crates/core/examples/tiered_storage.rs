//! Byte-bounded LRU hot tier in front of the cold store.

use std::sync::Arc;

use kotta::auth::{Caller, Role};
use kotta::catalog::Action;
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::worker::ProcessExecutor;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = EnclaveConfig::new(dir.path());
    config.catalog = config.catalog.hot_capacity(3000);
    let sim = Simulation::new(config, Arc::new(ProcessExecutor)).unwrap();
    let s = sim.services();
    s.auth.add_role(Role::new("klab", "")).unwrap();
    s.auth.add_principal("alice", "Alice", &["klab"]).unwrap();
    let approval = s.auth.approve_registration("alice").unwrap();
    let refresh = s.auth.register_client("alice", &approval).unwrap();
    let alice = Caller::bearer(s.auth.refresh_access_token(&refresh.bearer).unwrap().bearer);

    for (name, size) in [("a", 1000), ("b", 1000), ("c", 1000), ("d", 1500), ("huge", 5000)] {
        s.catalog.put_object(&alice, &format!("s3://klab-lru/{name}"), &vec![0u8; size]).unwrap();
    }
    for name in ["a", "b", "c", "a", "d", "huge", "b"] {
        s.catalog.fetch(&alice, &format!("s3://klab-lru/{name}"), Action::Read).unwrap();
        println!(
            "read {name:<4} -> hot {:?} ({}/{} bytes)",
            s.catalog.hot_set(),
            s.catalog.hot_bytes(),
            s.catalog.hot_capacity()
        );
    }
}
