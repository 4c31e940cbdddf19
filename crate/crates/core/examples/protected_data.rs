//! Role-owned objects, policy grants, denials, and signed URLs in the catalog.

use std::sync::Arc;

use kotta::auth::{Caller, Role, RoleId};
use kotta::catalog::Action;
use kotta::deployment::{EnclaveConfig, Simulation};
use kotta::worker::ProcessExecutor;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let sim = Simulation::new(EnclaveConfig::new(dir.path()), Arc::new(ProcessExecutor)).unwrap();
    let s = sim.services();
    let login = |who: &str, roles: &[&str]| {
        s.auth.add_principal(who, who, roles).unwrap();
        let approval = s.auth.approve_registration(who).unwrap();
        let refresh = s.auth.register_client(who, &approval).unwrap();
        Caller::bearer(s.auth.refresh_access_token(&refresh.bearer).unwrap().bearer)
    };
    for r in ["klab", "nlab"] {
        s.auth.add_role(Role::new(r, "")).unwrap();
    }
    let alice = login("alice", &["klab"]);
    let erin = login("erin", &["nlab"]);

    let uri = "s3://klab-data/cohort.csv";
    let obj = s.catalog.put_object(&alice, uri, b"id,age\n1,42\n").unwrap();
    println!("stored {} ({} bytes, owner {})", obj.uri, obj.size_bytes, obj.owner_role.as_str());

    println!("erin reads: {:?}", s.catalog.fetch(&erin, uri, Action::Read).err());
    s.catalog.set_policy(&alice, uri, &RoleId::new("nlab"), &[Action::Read]).unwrap();
    let bytes = s.catalog.fetch(&erin, uri, Action::Read).unwrap();
    println!("erin reads after grant: {:?}", String::from_utf8_lossy(&bytes));
    println!("erin writes: {:?}", s.catalog.put_object(&erin, uri, b"x").err());

    let signed = s.catalog.sign_url(&alice, uri, Action::Read, 300).unwrap();
    println!("signed for {} until t={}: {}", signed.actor.as_str(), signed.expires_at.0, signed.signature);
    let mut forged = signed.clone();
    forged.uri = "s3://klab-data/other.csv".into();
    println!("forged: {:?}", s.catalog.get_object(&forged, None).err());

    for p in s.catalog.policies_for(uri) {
        println!("policy {p:?}");
    }
}
