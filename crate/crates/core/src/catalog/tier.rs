//! Hot/cold residency bookkeeping.
//!
//! Every read promotes an object to the hot tier; when the hot tier would
//! exceed its byte capacity the least-recently-accessed hot objects are
//! demoted first. Objects larger than the whole capacity are never admitted.
//! This type only decides; the catalog moves the bytes.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Cold,
    Hot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierState {
    pub uri: String,
    pub tier: Tier,
    pub size_bytes: u64,
    pub last_access: Option<Timestamp>,
    pub access_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub uri: String,
    pub from: Tier,
    pub to: Tier,
}

impl Migration {
    fn promote(uri: &str) -> Self {
        Migration {
            uri: uri.to_owned(),
            from: Tier::Cold,
            to: Tier::Hot,
        }
    }

    fn demote(uri: &str) -> Self {
        Migration {
            uri: uri.to_owned(),
            from: Tier::Hot,
            to: Tier::Cold,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    size: u64,
    tier: Tier,
    last_access: Option<Timestamp>,
    /// Global access order; breaks ties between accesses in the same second.
    recency: u64,
    access_count: u64,
}

#[derive(Debug, Clone)]
pub struct TierManager {
    capacity: u64,
    hot_bytes: u64,
    /// Demote hot objects idle this long during maintenance.
    idle_demotion_secs: Option<u64>,
    next_recency: u64,
    entries: HashMap<String, Entry>,
    /// recency -> uri, hot objects only.
    lru: BTreeMap<u64, String>,
}

impl TierManager {
    pub fn new(capacity_bytes: u64) -> Self {
        TierManager {
            capacity: capacity_bytes,
            hot_bytes: 0,
            idle_demotion_secs: None,
            next_recency: 0,
            entries: HashMap::new(),
            lru: BTreeMap::new(),
        }
    }

    pub fn with_idle_demotion(mut self, secs: u64) -> Self {
        self.idle_demotion_secs = Some(secs);
        self
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn hot_bytes(&self) -> u64 {
        self.hot_bytes
    }

    /// Changes the capacity. Takes effect at the next access or maintenance run.
    pub fn set_capacity(&mut self, capacity_bytes: u64) {
        self.capacity = capacity_bytes;
    }

    /// Registers a new object (cold) or records a size change of an existing one.
    pub fn track(&mut self, uri: &str, size: u64) {
        match self.entries.get_mut(uri) {
            Some(e) => {
                if e.tier == Tier::Hot {
                    self.hot_bytes = self.hot_bytes - e.size + size;
                }
                e.size = size;
            }
            None => {
                self.entries.insert(
                    uri.to_owned(),
                    Entry {
                        size,
                        tier: Tier::Cold,
                        last_access: None,
                        recency: 0,
                        access_count: 0,
                    },
                );
            }
        }
    }

    /// Forgets an object. Returns true if it was hot.
    pub fn forget(&mut self, uri: &str) -> bool {
        match self.entries.remove(uri) {
            Some(e) if e.tier == Tier::Hot => {
                self.hot_bytes -= e.size;
                self.lru.remove(&e.recency);
                true
            }
            _ => false,
        }
    }

    pub fn state(&self, uri: &str) -> Option<TierState> {
        self.entries.get(uri).map(|e| TierState {
            uri: uri.to_owned(),
            tier: e.tier,
            size_bytes: e.size,
            last_access: e.last_access,
            access_count: e.access_count,
        })
    }

    pub fn hot_set(&self) -> Vec<String> {
        let mut hot: Vec<String> = self.lru.values().cloned().collect();
        hot.sort();
        hot
    }

    /// Hot objects from least to most recently used.
    pub fn lru_order(&self) -> Vec<String> {
        self.lru.values().cloned().collect()
    }

    fn demote(&mut self, uri: &str) -> Migration {
        let e = self.entries.get_mut(uri).expect("demoting a tracked object");
        debug_assert_eq!(e.tier, Tier::Hot);
        e.tier = Tier::Cold;
        self.hot_bytes -= e.size;
        self.lru.remove(&e.recency);
        Migration::demote(uri)
    }

    /// Evicts least-recently-used hot objects other than `keep` until
    /// `extra` more bytes fit.
    fn make_room(&mut self, extra: u64, keep: Option<&str>) -> Vec<Migration> {
        let mut out = Vec::new();
        while self.hot_bytes + extra > self.capacity {
            let victim = self
                .lru
                .values()
                .find(|u| Some(u.as_str()) != keep)
                .cloned();
            match victim {
                Some(v) => out.push(self.demote(&v)),
                None => break,
            }
        }
        out
    }

    /// Records a read. Returns the migrations it caused, evictions first.
    pub fn record_access(&mut self, uri: &str, now: Timestamp) -> Vec<Migration> {
        let recency = self.next_recency;
        self.next_recency += 1;
        let Some(e) = self.entries.get_mut(uri) else {
            return Vec::new();
        };
        e.access_count += 1;
        e.last_access = Some(now);
        let (size, tier, old_recency) = (e.size, e.tier, e.recency);
        e.recency = recency;

        match tier {
            Tier::Hot => {
                self.lru.remove(&old_recency);
                self.lru.insert(recency, uri.to_owned());
                Vec::new()
            }
            Tier::Cold if size > self.capacity => Vec::new(),
            Tier::Cold => {
                let mut out = self.make_room(size, Some(uri));
                let e = self.entries.get_mut(uri).expect("still tracked");
                e.tier = Tier::Hot;
                self.hot_bytes += size;
                self.lru.insert(recency, uri.to_owned());
                out.push(Migration::promote(uri));
                out
            }
        }
    }

    /// Demotes idle objects (if configured) and restores the capacity bound.
    pub fn maintain(&mut self, now: Timestamp) -> Vec<Migration> {
        let mut out = Vec::new();
        if let Some(idle) = self.idle_demotion_secs {
            let stale: Vec<String> = self
                .lru
                .values()
                .filter(|u| {
                    self.entries[u.as_str()]
                        .last_access
                        .is_some_and(|t| now.since(t) >= idle)
                })
                .cloned()
                .collect();
            for uri in stale {
                out.push(self.demote(&uri));
            }
        }
        out.extend(self.make_room(0, None));
        out
    }
}
