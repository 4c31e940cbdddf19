//! The scaling decision, as a pure function of pool snapshots.

use serde::{Deserialize, Serialize};

use crate::broker::QueueTier;
use crate::clock::Timestamp;

pub const DEFAULT_BACKLOG_PER_INSTANCE: u64 = 2;
pub const DEFAULT_IDLE_TIMEOUT_SECS: u64 = 600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalePolicy {
    pub min_instances: usize,
    pub max_instances: usize,
    /// Queued jobs one ready instance is expected to absorb.
    pub backlog_per_instance: u64,
    pub idle_timeout_secs: u64,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        ScalePolicy {
            min_instances: 0,
            max_instances: 16,
            backlog_per_instance: DEFAULT_BACKLOG_PER_INSTANCE,
            idle_timeout_secs: DEFAULT_IDLE_TIMEOUT_SECS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceState {
    Provisioning,
    Ready,
    Busy,
    Draining,
    Terminated,
}

impl InstanceState {
    pub fn as_str(self) -> &'static str {
        match self {
            InstanceState::Provisioning => "provisioning",
            InstanceState::Ready => "ready",
            InstanceState::Busy => "busy",
            InstanceState::Draining => "draining",
            InstanceState::Terminated => "terminated",
        }
    }

    /// Interruptions may terminate from any live state; otherwise the
    /// lifecycle is provisioning → ready ⇄ busy → draining → terminated.
    pub fn can_become(self, next: InstanceState) -> bool {
        use InstanceState::*;
        matches!(
            (self, next),
            (Provisioning, Ready)
                | (Ready, Busy)
                | (Busy, Ready)
                | (Ready, Draining)
                | (Busy, Draining)
                | (Draining, Terminated)
                | (Provisioning | Ready | Busy, Terminated)
        )
    }

    pub fn is_live(self) -> bool {
        !matches!(self, InstanceState::Draining | InstanceState::Terminated)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceView {
    pub instance_id: String,
    pub state: InstanceState,
    /// When a ready instance last finished work (or became ready).
    pub idle_since: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolView {
    pub pool: QueueTier,
    pub policy: ScalePolicy,
    pub queue_depth: usize,
    pub instances: Vec<InstanceView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ProvisioningAction {
    Launch { pool: QueueTier, count: usize },
    Drain { pool: QueueTier, instance_id: String },
}

/// Launches enough capacity that each ready or provisioning instance faces at
/// most `backlog_per_instance` queued jobs, tops pools up to their minimum,
/// and drains instances idle past the timeout while the queue is empty.
pub fn evaluate(pools: &[PoolView], now: Timestamp) -> Vec<ProvisioningAction> {
    let mut actions = Vec::new();
    for view in pools {
        let p = &view.policy;
        let count = |pred: fn(InstanceState) -> bool| view.instances.iter().filter(|i| pred(i.state)).count();
        let live = count(InstanceState::is_live);
        let absorbing = count(|s| matches!(s, InstanceState::Ready | InstanceState::Provisioning));

        let per = p.backlog_per_instance.max(1) as usize;
        let wanted = view.queue_depth.div_ceil(per);
        let for_backlog = wanted.saturating_sub(absorbing);
        let for_minimum = p.min_instances.saturating_sub(live);
        let headroom = p.max_instances.max(p.min_instances).saturating_sub(live);
        let launch = for_backlog.max(for_minimum).min(headroom);
        if launch > 0 {
            actions.push(ProvisioningAction::Launch { pool: view.pool, count: launch });
            continue;
        }

        if view.queue_depth > 0 {
            continue;
        }
        let mut idle: Vec<&InstanceView> = view
            .instances
            .iter()
            .filter(|i| i.state == InstanceState::Ready)
            .filter(|i| i.idle_since.is_some_and(|t| now.since(t) >= p.idle_timeout_secs))
            .collect();
        idle.sort_by(|a, b| a.idle_since.cmp(&b.idle_since).then_with(|| a.instance_id.cmp(&b.instance_id)));
        let removable = live.saturating_sub(p.min_instances);
        for inst in idle.into_iter().take(removable) {
            actions.push(ProvisioningAction::Drain {
                pool: view.pool,
                instance_id: inst.instance_id.clone(),
            });
        }
    }
    actions
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(id: &str, state: InstanceState, idle_since: Option<u64>) -> InstanceView {
        InstanceView {
            instance_id: id.into(),
            state,
            idle_since: idle_since.map(Timestamp),
        }
    }

    fn view(pool: QueueTier, min: usize, depth: usize, instances: Vec<InstanceView>) -> PoolView {
        PoolView {
            pool,
            policy: ScalePolicy { min_instances: min, ..ScalePolicy::default() },
            queue_depth: depth,
            instances,
        }
    }

    #[test]
    fn cold_start_launches_warm_minimum() {
        let got = evaluate(&[view(QueueTier::Test, 1, 0, vec![])], Timestamp(0));
        assert_eq!(got, vec![ProvisioningAction::Launch { pool: QueueTier::Test, count: 1 }]);
    }

    #[test]
    fn backlog_ten_with_one_ready_launches_four() {
        let v = view(QueueTier::Production, 0, 10, vec![inst("a", InstanceState::Ready, Some(0))]);
        let oracle = 10usize.div_ceil(2) - 1;
        assert_eq!(
            evaluate(&[v], Timestamp(0)),
            vec![ProvisioningAction::Launch { pool: QueueTier::Production, count: oracle }]
        );
    }

    #[test]
    fn drains_all_idle_production() {
        let v = view(
            QueueTier::Production,
            0,
            0,
            vec![
                inst("c", InstanceState::Ready, Some(10)),
                inst("a", InstanceState::Ready, Some(0)),
                inst("b", InstanceState::Ready, Some(0)),
            ],
        );
        let drained: Vec<String> = evaluate(&[v], Timestamp(1000))
            .into_iter()
            .map(|a| match a {
                ProvisioningAction::Drain { instance_id, .. } => instance_id,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(drained, ["a", "b", "c"]);
    }

    #[test]
    fn idle_timeout_boundary_and_minimum() {
        let v = |t| view(QueueTier::Test, 1, 0, vec![inst("a", InstanceState::Ready, Some(t))]);
        assert!(evaluate(&[v(0)], Timestamp(5000)).is_empty());
        let two = view(
            QueueTier::Production,
            0,
            0,
            vec![inst("a", InstanceState::Ready, Some(0)), inst("b", InstanceState::Busy, None)],
        );
        assert!(evaluate(std::slice::from_ref(&two), Timestamp(599)).is_empty());
        assert_eq!(evaluate(&[two], Timestamp(600)).len(), 1);
    }

    #[test]
    fn no_drain_while_backlogged() {
        let v = view(QueueTier::Production, 0, 1, vec![inst("a", InstanceState::Ready, Some(0))]);
        assert!(evaluate(&[v], Timestamp(5000)).is_empty());
    }

    #[test]
    fn respects_maximum() {
        let mut v = view(QueueTier::Production, 0, 100, vec![inst("a", InstanceState::Busy, None)]);
        v.policy.max_instances = 4;
        assert_eq!(
            evaluate(&[v], Timestamp(0)),
            vec![ProvisioningAction::Launch { pool: QueueTier::Production, count: 3 }]
        );
    }

    #[test]
    fn lifecycle_edges() {
        use InstanceState::*;
        assert!(Provisioning.can_become(Ready));
        assert!(Busy.can_become(Ready) && Ready.can_become(Busy));
        assert!(Draining.can_become(Terminated));
        assert!(!Terminated.can_become(Ready));
        assert!(!Draining.can_become(Ready));
        assert!(!Provisioning.can_become(Busy));
    }

    fn state() -> impl Strategy<Value = InstanceState> {
        prop_oneof![
            Just(InstanceState::Provisioning),
            Just(InstanceState::Ready),
            Just(InstanceState::Busy),
            Just(InstanceState::Draining),
            Just(InstanceState::Terminated),
        ]
    }

    proptest! {
        #[test]
        fn never_below_minimum(
            min in 0usize..4,
            depth in 0usize..40,
            states in proptest::collection::vec((state(), 0u64..2000), 0..10),
            now in 0u64..3000,
        ) {
            let instances: Vec<InstanceView> = states
                .iter()
                .enumerate()
                .map(|(i, (s, t))| inst(&format!("i{i}"), *s, Some(*t)))
                .collect();
            let v = view(QueueTier::Test, min, depth, instances);
            let live = v.instances.iter().filter(|i| i.state.is_live()).count();
            let mut after = live;
            for a in evaluate(std::slice::from_ref(&v), Timestamp(now)) {
                match a {
                    ProvisioningAction::Launch { count, .. } => after += count,
                    ProvisioningAction::Drain { .. } => after -= 1,
                }
            }
            prop_assert!(after >= min);
            prop_assert!(after <= v.policy.max_instances.max(live).max(min));
        }
    }
}
