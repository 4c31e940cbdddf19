//! Signed data requests.
//!
//! A request is authorized by an HMAC-SHA256 over the canonical string
//! `action\nuri\nactor\nexpires_at` under the server's signing key. The
//! signature is deterministic in the key and those four fields.

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::policy::Action;
use crate::audit::Actor;
use crate::clock::Timestamp;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedRequest {
    pub uri: String,
    pub action: Action,
    pub actor: Actor,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    /// Lowercase hex HMAC-SHA256.
    pub signature: String,
}

pub fn canonical_string(action: Action, uri: &str, actor: &Actor, expires_at: Timestamp) -> String {
    format!("{}\n{}\n{}\n{}", action.as_str(), uri, actor.as_str(), expires_at.secs())
}

#[derive(Clone)]
pub struct RequestSigner {
    key: Vec<u8>,
}

impl std::fmt::Debug for RequestSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RequestSigner { key: <redacted> }")
    }
}

impl RequestSigner {
    pub fn new(key: &[u8]) -> Self {
        RequestSigner { key: key.to_vec() }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key).expect("HMAC accepts keys of any length")
    }

    pub fn sign(
        &self,
        uri: &str,
        action: Action,
        actor: Actor,
        issued_at: Timestamp,
        ttl_secs: u64,
    ) -> SignedRequest {
        let expires_at = issued_at.plus(ttl_secs);
        let mut mac = self.mac();
        mac.update(canonical_string(action, uri, &actor, expires_at).as_bytes());
        SignedRequest {
            uri: uri.to_owned(),
            action,
            actor,
            issued_at,
            expires_at,
            signature: hex::encode(mac.finalize().into_bytes()),
        }
    }

    /// Constant-time signature check. Expiry is checked separately.
    pub fn verify(&self, req: &SignedRequest) -> bool {
        let Ok(sig) = hex::decode(&req.signature) else {
            return false;
        };
        let mut mac = self.mac();
        mac.update(canonical_string(req.action, &req.uri, &req.actor, req.expires_at).as_bytes());
        mac.verify_slice(&sig).is_ok()
    }
}

impl SignedRequest {
    /// Query-string form used by `GET /data/{bucket}/{key}`.
    pub fn to_query(&self) -> String {
        format!(
            "action={}&actor={}&issued={}&expires={}&sig={}",
            self.action,
            percent_escape(self.actor.as_str()),
            self.issued_at.secs(),
            self.expires_at.secs(),
            self.signature
        )
    }
}

/// Escapes the few characters an actor id may carry that are unsafe in a query.
fn percent_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
