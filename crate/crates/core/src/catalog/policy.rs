use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::auth::RoleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Read,
    Write,
    Delete,
    /// Permission for bytes to leave the enclave through the gateway.
    Export,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Read, Action::Write, Action::Delete, Action::Export];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Read => "read",
            Action::Write => "write",
            Action::Delete => "delete",
            Action::Export => "export",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allowed,
    Denied,
}

/// One row of the policy table. `target` is an object URI or a bucket
/// target (`s3://<bucket>`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPolicy {
    pub target: String,
    pub role_id: RoleId,
    pub allowed_actions: BTreeSet<Action>,
}

/// Default-deny policy table.
#[derive(Debug, Clone, Default)]
pub struct PolicyTable {
    rows: HashMap<(String, RoleId), BTreeSet<Action>>,
}

impl PolicyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn grant(&mut self, target: &str, role: &RoleId, actions: impl IntoIterator<Item = Action>) {
        self.rows
            .entry((target.to_owned(), role.clone()))
            .or_default()
            .extend(actions);
    }

    pub fn revoke(&mut self, target: &str, role: &RoleId, actions: impl IntoIterator<Item = Action>) {
        let key = (target.to_owned(), role.clone());
        if let Some(set) = self.rows.get_mut(&key) {
            for a in actions {
                set.remove(&a);
            }
            if set.is_empty() {
                self.rows.remove(&key);
            }
        }
    }

    pub fn remove_target(&mut self, target: &str) {
        self.rows.retain(|(t, _), _| t != target);
    }

    /// Allowed iff an explicit row grants `action` to `role` on `target`.
    pub fn check(&self, role: &RoleId, target: &str, action: Action) -> Decision {
        let allowed = self
            .rows
            .get(&(target.to_owned(), role.clone()))
            .is_some_and(|set| set.contains(&action));
        if allowed {
            Decision::Allowed
        } else {
            Decision::Denied
        }
    }

    /// Every row, ordered by target then role.
    pub fn rows(&self) -> Vec<AccessPolicy> {
        let mut rows: Vec<AccessPolicy> = self
            .rows
            .iter()
            .map(|((t, r), a)| AccessPolicy {
                target: t.clone(),
                role_id: r.clone(),
                allowed_actions: a.clone(),
            })
            .collect();
        rows.sort_by(|a, b| (&a.target, &a.role_id).cmp(&(&b.target, &b.role_id)));
        rows
    }

    pub fn rows_for(&self, target: &str) -> Vec<AccessPolicy> {
        let mut rows: Vec<AccessPolicy> = self
            .rows
            .iter()
            .filter(|((t, _), _)| t == target)
            .map(|((t, r), a)| AccessPolicy {
                target: t.clone(),
                role_id: r.clone(),
                allowed_actions: a.clone(),
            })
            .collect();
        rows.sort_by(|a, b| a.role_id.cmp(&b.role_id));
        rows
    }
}
