use super::*;
use crate::audit::AuditLog;
use crate::auth::{AuthService, Caller, Role};
use crate::broker::JobDescription;
use crate::clock::{Clock, ManualClock};
use proptest::prelude::*;

struct Rig {
    clock: ManualClock,
    broker: Arc<Broker>,
    alice: Caller,
}

fn rig() -> Rig {
    let clock = ManualClock::new();
    let shared: SharedClock = Arc::new(clock.clone());
    let audit = Arc::new(AuditLog::new(shared.clone()));
    let auth = Arc::new(AuthService::new(shared.clone(), audit.clone()));
    auth.add_role(Role::new("klab", "")).unwrap();
    auth.add_principal("alice", "Alice", &["klab"]).unwrap();
    let approval = auth.approve_registration("alice").unwrap();
    let refresh = auth.register_client("alice", &approval).unwrap();
    let alice = Caller::bearer(auth.refresh_access_token(&refresh.bearer).unwrap().bearer);
    let broker = Arc::new(Broker::in_memory(shared, auth, audit));
    Rig { clock, broker, alice }
}

impl Rig {
    fn scaler(&self, config: AutoscalerConfig) -> Autoscaler {
        Autoscaler::new(config, Arc::new(self.clock.clone()), self.broker.clone()).unwrap()
    }

    fn replayed(&self, points: Vec<[f64; ZONES]>) -> Autoscaler {
        let config = AutoscalerConfig::default();
        let market = SpotMarket::replay(config.market.clone(), points);
        Autoscaler::with_market(config, market, Arc::new(self.clock.clone()), self.broker.clone()).unwrap()
    }

    fn submit(&self, queue: QueueTier, n: usize) -> Vec<String> {
        let desc = JobDescription::script("j", queue, 10, "/bin/sh s.sh", "s.sh", "true");
        (0..n).map(|_| self.broker.submit_job(&self.alice, &desc).unwrap()).collect()
    }

    fn run(&self, a: &mut Autoscaler, secs: u64) -> Vec<PoolEvent> {
        let mut events = Vec::new();
        for _ in 0..secs {
            self.clock.advance(1);
            events.extend(a.step());
        }
        events
    }
}

fn ready_ids(events: &[PoolEvent]) -> Vec<String> {
    events
        .iter()
        .filter_map(|e| match e {
            PoolEvent::Ready { instance_id, .. } => Some(instance_id.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn cold_start_brings_test_pool_online() {
    let r = rig();
    let mut a = r.scaler(AutoscalerConfig::default());
    let events = a.step();
    assert_eq!(events, vec![PoolEvent::Launched { instance_id: "i-test-00001".into(), pool: QueueTier::Test }]);
    assert_eq!(a.pool_size(QueueTier::Test), 1);
    assert_eq!(a.pool_size(QueueTier::Production), 0);
    assert_eq!(r.broker.instance_pool("i-test-00001"), None);

    let events = r.run(&mut a, 120);
    assert_eq!(ready_ids(&events), ["i-test-00001"]);
    let inst = a.instance("i-test-00001").unwrap();
    assert!(inst.ready_at.unwrap().since(inst.launched_at) <= 120);
    assert_eq!(r.broker.instance_pool("i-test-00001"), Some(QueueTier::Test));
    assert!(a.spot_decisions().is_empty());
}

#[test]
fn production_backlog_buys_cheapest_spot() {
    let r = rig();
    let mut a = r.replayed(vec![[0.30, 0.25, 0.40, 0.27]]);
    r.submit(QueueTier::Production, 10);
    a.step();
    assert_eq!(a.pool_size(QueueTier::Production), 5);
    for d in a.spot_decisions() {
        assert_eq!(d.zone, 2);
        assert!((d.bid / d.price - 1.25).abs() < 1e-12);
    }
    // Nothing more while provisioning capacity already covers the backlog.
    r.run(&mut a, 60);
    assert_eq!(a.pool_size(QueueTier::Production), 5);
    let events = r.run(&mut a, 300);
    assert_eq!(ready_ids(&events).iter().filter(|i| i.starts_with("i-prod")).count(), 5);
}

#[test]
fn explicit_low_bid_is_refused() {
    let r = rig();
    let mut a = r.replayed(vec![[0.5, 0.5, 0.5, 0.5]]);
    let price = a.market().price(a.spec(QueueTier::Production), 3, Timestamp(0));
    let err = a.provision(QueueTier::Production, Some(3), Some(price * 0.9)).unwrap_err();
    assert_eq!(err.code(), "BidTooLow");
    assert_eq!(a.instances().count(), 0);
    assert!(a.spot_decisions().is_empty());
    let ok = a.provision(QueueTier::Production, Some(3), Some(price)).unwrap();
    assert_eq!((ok.zone, ok.state), (3, InstanceState::Provisioning));
    assert_eq!(a.provision(QueueTier::Production, Some(5), None).unwrap_err().code(), "UnknownZone");
}

#[test]
fn interruptions_only_hit_live_spot() {
    let r = rig();
    let mut a = r.scaler(AutoscalerConfig::default());
    a.step();
    let spot = a.provision(QueueTier::Production, None, None).unwrap().instance_id;
    r.run(&mut a, 300);
    assert_eq!(r.broker.instance_pool(&spot), Some(QueueTier::Production));

    let at = r.clock.now();
    assert!(!a.handle_interruption(&InterruptionEvent { instance_id: "i-test-00001".into(), at }));
    assert_eq!(a.pool_size(QueueTier::Test), 1);

    assert!(a.handle_interruption(&InterruptionEvent { instance_id: spot.clone(), at }));
    assert_eq!(a.pool_size(QueueTier::Production), 0);
    assert_eq!(r.broker.instance_pool(&spot), None);
    assert_eq!(a.instance(&spot).unwrap().termination, Some(TerminationReason::Interrupted));
    assert!(!a.handle_interruption(&InterruptionEvent { instance_id: spot, at }));
}

#[test]
fn price_spike_past_bid_reclaims() {
    let r = rig();
    // Step 0 and 1 cheap; from step 2 (t = 120 s) zone 1 doubles.
    let mut a = r.replayed(vec![[0.2, 0.3, 0.3, 0.3], [0.2, 0.3, 0.3, 0.3], [0.4, 0.3, 0.3, 0.3]]);
    let id = a.provision(QueueTier::Production, None, None).unwrap().instance_id;
    assert_eq!(a.instance(&id).unwrap().zone, 1);
    let events = r.run(&mut a, 119);
    assert!(!events.iter().any(|e| matches!(e, PoolEvent::Terminated { .. })));
    let events = r.run(&mut a, 1);
    assert!(events.contains(&PoolEvent::Terminated {
        instance_id: id,
        pool: QueueTier::Production,
        reason: TerminationReason::Interrupted
    }));
}

#[test]
fn busy_tracking_and_idle_drain() {
    let r = rig();
    let mut a = r.replayed(vec![[0.3; ZONES]]);
    let jobs = r.submit(QueueTier::Production, 1);
    a.step();
    let events = r.run(&mut a, 400);
    let prod = ready_ids(&events).into_iter().find(|i| i.starts_with("i-prod")).unwrap();

    r.broker.dequeue(&prod, QueueTier::Production, 120).unwrap().unwrap();
    a.step();
    assert_eq!(a.instance(&prod).unwrap().state, InstanceState::Busy);
    r.broker.start_job(&prod, &jobs[0]).unwrap();
    r.run(&mut a, 10);
    let uri = crate::catalog::ObjectUri::parse("s3://results-klab/x/result").unwrap();
    r.broker.complete_job(&prod, &jobs[0], uri, vec![], vec![]).unwrap();
    a.step();
    let idle_from = r.clock.now();
    assert_eq!(a.instance(&prod).unwrap().idle_since, Some(idle_from));

    let events = r.run(&mut a, 700);
    let inst = a.instance(&prod).unwrap();
    assert_eq!(inst.termination, Some(TerminationReason::Drained));
    let waited = inst.terminated_at.unwrap().since(idle_from);
    assert!((600..=610).contains(&waited), "{waited}");
    assert!(events.iter().any(|e| matches!(e, PoolEvent::Terminated { reason: TerminationReason::Drained, .. })));
    assert_eq!(r.broker.instance_pool(&prod), None);
    // The warm Test instance idles just as long but is never drained.
    assert_eq!(a.pool_size(QueueTier::Test), 1);
}

#[test]
fn on_demand_spend_is_exact() {
    let r = rig();
    let mut a = r.scaler(AutoscalerConfig::default());
    a.step();
    r.run(&mut a, 3600);
    assert!((a.spend(QueueTier::Test) - 0.0464).abs() < 1e-9);
    assert_eq!(a.spend(QueueTier::Production), 0.0);

    let mut csv = Vec::new();
    a.write_cost_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,pool,instances,spend"));
    assert_eq!(lines.next(), Some("0,Test,1,0.000000"));
    assert_eq!(text.lines().last(), Some("3600,Production,0,0.000000"));
    assert_eq!(a.cost_report().len(), 2 * 61);
}

#[test]
fn spot_spend_follows_market_price() {
    let r = rig();
    let mut a = r.replayed(vec![[0.2, 0.5, 0.5, 0.5], [0.4, 0.5, 0.5, 0.5]]);
    let list = a.spec(QueueTier::Production).price_per_hour;
    a.provision(QueueTier::Production, None, Some(list)).unwrap();
    r.run(&mut a, 120);
    let oracle = list * 0.2 / 60.0 + list * 0.4 / 60.0;
    assert!((a.spend(QueueTier::Production) - oracle).abs() < 1e-9);
}

#[test]
fn random_reclaims_are_reproducible() {
    let run = || {
        let r = rig();
        let mut config = AutoscalerConfig::default();
        config.market.interruption_probability = 0.2;
        let mut a = r.scaler(config);
        r.submit(QueueTier::Production, 8);
        a.step();
        let events = r.run(&mut a, 1200);
        events
            .into_iter()
            .filter(|e| matches!(e, PoolEvent::Terminated { reason: TerminationReason::Interrupted, .. }))
            .count()
    };
    let n = run();
    assert!(n > 0);
    assert_eq!(n, run());
}

fn brute_force_zone(prices: &[f64; ZONES]) -> usize {
    let mut best = 1;
    for z in 1..=ZONES {
        if prices[z - 1] < prices[best - 1] {
            best = z;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn every_spot_purchase_is_argmin(seed in any::<u64>(), bursts in proptest::collection::vec((0u64..900, 1usize..12), 1..6)) {
        let r = rig();
        let mut config = AutoscalerConfig::default();
        config.market.seed = seed;
        config.market.volatility = 0.08;
        config.pools.production.idle_timeout_secs = 120;
        let mut a = r.scaler(config);
        a.step();
        for (gap, n) in bursts {
            r.run(&mut a, gap);
            r.submit(QueueTier::Production, n);
            r.run(&mut a, 30);
            prop_assert!(a.pool_size(QueueTier::Test) >= 1);
        }
        prop_assert!(!a.spot_decisions().is_empty());
        for d in a.spot_decisions() {
            let prices: [f64; ZONES] = std::array::from_fn(|z| a.market().price(a.spec(QueueTier::Production), z + 1, d.at));
            prop_assert_eq!(d.zone, brute_force_zone(&prices));
            prop_assert!((d.bid - prices[d.zone - 1] * 1.25).abs() < 1e-12);
        }
    }
}
