//! Refresh token -> one-hour access token -> six-hour session, then revocation.

use std::sync::Arc;

use kotta::audit::AuditLog;
use kotta::auth::{AuthService, Role, TokenFile};
use kotta::clock::{ManualClock, SharedClock};

fn main() {
    let clock = ManualClock::new();
    let shared: SharedClock = Arc::new(clock.clone());
    let auth = AuthService::new(shared.clone(), Arc::new(AuditLog::new(shared)));
    auth.add_role(Role::new("klab", "")).unwrap();
    auth.add_principal("alice", "Alice", &["klab"]).unwrap();

    let approval = auth.approve_registration("alice").unwrap();
    let refresh = auth.register_client("alice", &approval).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("token");
    TokenFile::new(&refresh.bearer).save(&path).unwrap();
    println!("token file:\n{}", std::fs::read_to_string(&path).unwrap());

    let access = auth.refresh_access_token(&TokenFile::load(&path).unwrap().refresh_token).unwrap();
    let session = auth.create_session(&access.bearer).unwrap();
    println!("access expires at t={}, session at t={}", access.token.expires_at.0, session.token.expires_at.0);

    clock.advance(3600);
    println!("after 1h: access {:?}", auth.validate(&access.bearer).map(|p| p.principal_id));
    println!("after 1h: session {:?}", auth.validate(&session.bearer).map(|p| p.principal_id));

    auth.revoke_bearer(&refresh.bearer).unwrap();
    println!("revoked: refresh -> {:?}", auth.refresh_access_token(&refresh.bearer).err());
    // Sessions hang off the access token they were created from.
    auth.revoke_bearer(&access.bearer).unwrap();
    println!("access revoked: session -> {:?}", auth.validate(&session.bearer).err());
}
