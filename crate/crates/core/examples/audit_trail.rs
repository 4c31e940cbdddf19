//! Hash-chained audit log: export, verify, tamper, verify again.

use std::sync::Arc;

use kotta::auth::{Caller, Role};
use kotta::catalog::Action;
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::worker::ProcessExecutor;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let sim = Simulation::new(EnclaveConfig::new(dir.path()), Arc::new(ProcessExecutor)).unwrap();
    let s = sim.services();
    s.auth.add_role(Role::new("klab", "")).unwrap();
    s.auth.add_role(Role::new("visitors", "")).unwrap();
    let mut callers = Vec::new();
    for (who, role) in [("alice", "klab"), ("bob", "visitors")] {
        s.auth.add_principal(who, who, &[role]).unwrap();
        let approval = s.auth.approve_registration(who).unwrap();
        let refresh = s.auth.register_client(who, &approval).unwrap();
        callers.push(Caller::bearer(s.auth.refresh_access_token(&refresh.bearer).unwrap().bearer));
    }
    s.catalog.put_object(&callers[0], "s3://klab-data/x", b"secret").unwrap();
    let _ = s.catalog.fetch(&callers[1].clone().with_request_id("req-42"), "s3://klab-data/x", Action::Read);

    for ev in s.audit.events() {
        println!("#{:<2} {:<16} {:<16} {:<18} {:?} {}", ev.seq, ev.actor.as_str(), ev.action, ev.target, ev.outcome, ev.request_id.as_deref().unwrap_or(""));
    }

    let path = dir.path().join("export.jsonl");
    s.audit.export_to_file(&path).unwrap();
    println!("verify export: {:?}", kotta::audit::verify_file(&path).unwrap());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"denied\"", "\"allowed\"", 1)).unwrap();
    println!("verify tampered: {:?}", kotta::audit::verify_file(&path).unwrap());
}
