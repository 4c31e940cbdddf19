//! Elastic worker pools over a simulated provider.
//!
//! The Test pool runs warm on-demand capacity; Production buys spot capacity
//! in whichever of four zones is cheapest. [`Autoscaler::step`] is the control
//! loop: it advances provisioning, tracks busy/idle from the broker, applies
//! spot interruptions, runs the scaling policy and accrues spend. Instances
//! join the broker when they become ready and leave it the moment they are
//! drained or reclaimed, inside the same step.

pub mod config;
pub mod market;
pub mod policy;
pub mod spec;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

pub use self::config::{AutoscalerConfig, ConfigError, PoolConfig, Pools};
pub use self::market::{select_spot_bid, MarketConfig, SpotBid, SpotMarket, DEFAULT_BID_MARGIN, ZONES};
pub use self::policy::{evaluate, InstanceState, InstanceView, PoolView, ProvisioningAction, ScalePolicy};
pub use self::spec::{default_specs, InstanceSpec, Market};
use crate::broker::{Broker, QueueTier};
use crate::clock::{SharedClock, Timestamp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutoscalerError {
    #[error("bid {bid:.4} is below the zone-{zone} price {price:.4}")]
    BidTooLow { zone: usize, price: f64, bid: f64 },
    #[error("zone {0} does not exist")]
    UnknownZone(usize),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
}

impl AutoscalerError {
    pub fn code(&self) -> &'static str {
        match self {
            AutoscalerError::BidTooLow { .. } => "BidTooLow",
            AutoscalerError::UnknownZone(_) => "UnknownZone",
            AutoscalerError::UnknownInstance(_) => "UnknownInstance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Drained,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerInstance {
    pub instance_id: String,
    pub pool: QueueTier,
    pub spec: String,
    pub market: Market,
    /// 1-based zone.
    pub zone: usize,
    pub state: InstanceState,
    pub launched_at: Timestamp,
    pub ready_due: Timestamp,
    pub ready_at: Option<Timestamp>,
    pub terminated_at: Option<Timestamp>,
    pub termination: Option<TerminationReason>,
    /// Price when launched; spot instances are billed at the moving market price.
    pub price_per_hour: f64,
    pub bid: Option<f64>,
    pub idle_since: Option<Timestamp>,
    pub spend: f64,
    #[serde(skip)]
    serial: u64,
}

impl WorkerInstance {
    fn view(&self) -> InstanceView {
        InstanceView {
            instance_id: self.instance_id.clone(),
            state: self.state,
            idle_since: self.idle_since,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PoolEvent {
    Launched { instance_id: String, pool: QueueTier },
    Ready { instance_id: String, pool: QueueTier },
    Terminated { instance_id: String, pool: QueueTier, reason: TerminationReason },
}

/// One spot purchase, kept so bids can be checked after the fact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpotDecision {
    pub at: Timestamp,
    pub instance_id: String,
    pub spec: String,
    pub zone: usize,
    pub price: f64,
    pub bid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub t: u64,
    pub pool: QueueTier,
    pub instances: usize,
    pub spend: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InterruptionEvent {
    pub instance_id: String,
    pub at: Timestamp,
}

#[derive(Debug)]
pub struct Autoscaler {
    config: AutoscalerConfig,
    specs: BTreeMap<QueueTier, InstanceSpec>,
    market: SpotMarket,
    clock: SharedClock,
    broker: Arc<Broker>,
    instances: BTreeMap<String, WorkerInstance>,
    serial: u64,
    events: Vec<PoolEvent>,
    spot_decisions: Vec<SpotDecision>,
    report: Vec<CostRow>,
    accrued_to: Timestamp,
    next_evaluation: Timestamp,
    next_report: Timestamp,
    last_reclaim_step: Option<u64>,
}

impl Autoscaler {
    pub fn new(config: AutoscalerConfig, clock: SharedClock, broker: Arc<Broker>) -> Result<Self, ConfigError> {
        config.validate()?;
        let market = SpotMarket::new(config.market.clone());
        Self::with_market(config, market, clock, broker)
    }

    /// Uses a caller-supplied market, e.g. a replayed price trace.
    pub fn with_market(
        config: AutoscalerConfig,
        market: SpotMarket,
        clock: SharedClock,
        broker: Arc<Broker>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut specs = BTreeMap::new();
        for pool in QueueTier::ALL {
            specs.insert(pool, config.spec_for(pool)?);
        }
        let now = clock.now();
        Ok(Autoscaler {
            accrued_to: now,
            config,
            specs,
            market,
            clock,
            broker,
            instances: BTreeMap::new(),
            serial: 0,
            events: Vec::new(),
            spot_decisions: Vec::new(),
            report: Vec::new(),
            next_evaluation: Timestamp::ZERO,
            next_report: Timestamp::ZERO,
            last_reclaim_step: None,
        })
    }

    pub fn config(&self) -> &AutoscalerConfig {
        &self.config
    }

    pub fn market(&self) -> &SpotMarket {
        &self.market
    }

    pub fn spec(&self, pool: QueueTier) -> &InstanceSpec {
        &self.specs[&pool]
    }

    pub fn instance(&self, id: &str) -> Option<&WorkerInstance> {
        self.instances.get(id)
    }

    /// Every instance ever launched, terminated ones included, in id order.
    pub fn instances(&self) -> impl Iterator<Item = &WorkerInstance> {
        self.instances.values()
    }

    /// Instances of `pool` that are not yet terminated.
    pub fn pool_size(&self, pool: QueueTier) -> usize {
        self.instances
            .values()
            .filter(|i| i.pool == pool && i.state != InstanceState::Terminated)
            .count()
    }

    pub fn count_in(&self, pool: QueueTier, state: InstanceState) -> usize {
        self.instances.values().filter(|i| i.pool == pool && i.state == state).count()
    }

    pub fn spot_decisions(&self) -> &[SpotDecision] {
        &self.spot_decisions
    }

    pub fn spend(&self, pool: QueueTier) -> f64 {
        self.instances.values().filter(|i| i.pool == pool).fold(0.0, |acc, i| acc + i.spend)
    }

    pub fn cost_report(&self) -> &[CostRow] {
        &self.report
    }

    /// Writes the cost report as CSV with columns `t,pool,instances,spend`.
    pub fn write_cost_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "pool", "instances", "spend"])?;
        for row in &self.report {
            w.write_record([
                row.t.to_string(),
                row.pool.to_string(),
                row.instances.to_string(),
                format!("{:.6}", row.spend),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn next_id(&mut self, pool: QueueTier) -> (String, u64) {
        self.serial += 1;
        let tag = match pool {
            QueueTier::Test => "test",
            QueueTier::Production => "prod",
        };
        (format!("i-{tag}-{:05}", self.serial), self.serial)
    }

    /// Requests one instance for `pool`. Spot requests default to the cheapest
    /// zone and a bid at the configured margin; an explicit bid under the
    /// zone's current price is refused.
    pub fn provision(
        &mut self,
        pool: QueueTier,
        zone: Option<usize>,
        bid: Option<f64>,
    ) -> Result<WorkerInstance, AutoscalerError> {
        let now = self.clock.now();
        let spec = self.specs[&pool].clone();
        if let Some(z) = zone {
            if !(1..=ZONES).contains(&z) {
                return Err(AutoscalerError::UnknownZone(z));
            }
        }
        let (zone, price, bid) = match spec.market {
            Market::OnDemand => (zone.unwrap_or(1), spec.price_per_hour, None),
            Market::Spot => {
                let chosen = match zone {
                    None => select_spot_bid(&self.market, &spec, now),
                    Some(z) => {
                        let price = self.market.price(&spec, z, now);
                        SpotBid { zone: z, price, bid: price * self.market.config().bid_margin }
                    }
                };
                let bid = bid.unwrap_or(chosen.bid);
                if bid < chosen.price {
                    return Err(AutoscalerError::BidTooLow { zone: chosen.zone, price: chosen.price, bid });
                }
                (chosen.zone, chosen.price, Some(bid))
            }
        };
        let (instance_id, serial) = self.next_id(pool);
        if let Some(bid) = bid {
            self.spot_decisions.push(SpotDecision {
                at: now,
                instance_id: instance_id.clone(),
                spec: spec.name.clone(),
                zone,
                price,
                bid,
            });
        }
        let inst = WorkerInstance {
            instance_id: instance_id.clone(),
            pool,
            spec: spec.name.clone(),
            market: spec.market,
            zone,
            state: InstanceState::Provisioning,
            launched_at: now,
            ready_due: now.plus(spec.provision_delay_seconds),
            ready_at: None,
            terminated_at: None,
            termination: None,
            price_per_hour: price,
            bid,
            idle_since: None,
            spend: 0.0,
            serial,
        };
        tracing::info!("launch {instance_id} ({} {} zone {zone})", spec.name, spec.market.as_str());
        self.instances.insert(instance_id.clone(), inst.clone());
        self.events.push(PoolEvent::Launched { instance_id, pool });
        Ok(inst)
    }

    fn set_state(&mut self, id: &str, next: InstanceState, now: Timestamp) {
        let inst = self.instances.get_mut(id).expect("known instance");
        debug_assert!(inst.state.can_become(next), "{} {:?} -> {:?}", id, inst.state, next);
        inst.state = next;
        match next {
            InstanceState::Ready => inst.idle_since = Some(now),
            InstanceState::Busy | InstanceState::Draining => inst.idle_since = None,
            InstanceState::Terminated => inst.terminated_at = Some(now),
            InstanceState::Provisioning => {}
        }
    }

    fn terminate(&mut self, id: &str, reason: TerminationReason, now: Timestamp) {
        self.broker.deregister_instance(id);
        self.set_state(id, InstanceState::Terminated, now);
        let inst = self.instances.get_mut(id).expect("known instance");
        inst.termination = Some(reason);
        tracing::info!("terminate {id}: {reason:?}");
        self.events.push(PoolEvent::Terminated {
            instance_id: id.to_owned(),
            pool: inst.pool,
            reason,
        });
    }

    /// Reclaims a live spot instance. Deliveries it holds are left to lapse
    /// so the broker redelivers them. On-demand or dead targets are ignored.
    pub fn handle_interruption(&mut self, event: &InterruptionEvent) -> bool {
        let eligible = self
            .instances
            .get(&event.instance_id)
            .is_some_and(|i| i.market == Market::Spot && i.state != InstanceState::Terminated);
        if eligible {
            self.terminate(&event.instance_id, TerminationReason::Interrupted, event.at);
        }
        eligible
    }

    fn drain(&mut self, id: &str, now: Timestamp) {
        // Deregister first so no new delivery can land between the check and the state change.
        self.broker.deregister_instance(id);
        self.set_state(id, InstanceState::Draining, now);
        if !self.broker.busy_instances().contains(id) {
            self.terminate(id, TerminationReason::Drained, now);
        }
    }

    fn accrue(&mut self, now: Timestamp) {
        let from = self.accrued_to;
        if now <= from {
            return;
        }
        self.accrued_to = now;
        let step = self.market.step_secs();
        let mut t = from.secs();
        while t < now.secs() {
            let seg_end = ((t / step + 1) * step).min(now.secs());
            let hours = (seg_end - t) as f64 / 3600.0;
            for inst in self.instances.values_mut() {
                let alive_from = inst.launched_at.secs();
                let alive_to = inst.terminated_at.map_or(u64::MAX, |x| x.secs());
                if t < alive_from || t >= alive_to {
                    continue;
                }
                let rate = match inst.market {
                    Market::OnDemand => inst.price_per_hour,
                    Market::Spot => self.market.price(&self.specs[&inst.pool], inst.zone, Timestamp(t)),
                };
                inst.spend += rate * hours;
            }
            t = seg_end;
        }
    }

    fn pool_views(&self) -> Vec<PoolView> {
        QueueTier::ALL
            .iter()
            .map(|&pool| PoolView {
                pool,
                policy: self.config.pools.get(pool).policy(),
                queue_depth: self.broker.queue_depth(pool),
                instances: self.instances.values().filter(|i| i.pool == pool).map(WorkerInstance::view).collect(),
            })
            .collect()
    }

    /// Runs one pass of the control loop and returns what changed since the last pass.
    pub fn step(&mut self) -> Vec<PoolEvent> {
        let now = self.clock.now();
        self.accrue(now);

        let due: Vec<String> = self
            .instances
            .values()
            .filter(|i| i.state == InstanceState::Provisioning && i.ready_due <= now)
            .map(|i| i.instance_id.clone())
            .collect();
        for id in due {
            let pool = self.instances[&id].pool;
            self.broker.register_instance(&id, pool);
            self.set_state(&id, InstanceState::Ready, now);
            self.instances.get_mut(&id).unwrap().ready_at = Some(now);
            self.events.push(PoolEvent::Ready { instance_id: id, pool });
        }

        let busy = self.broker.busy_instances();
        let transitions: Vec<(String, InstanceState)> = self
            .instances
            .values()
            .filter_map(|i| match (i.state, busy.contains(&i.instance_id)) {
                (InstanceState::Ready, true) => Some((i.instance_id.clone(), InstanceState::Busy)),
                (InstanceState::Busy, false) => Some((i.instance_id.clone(), InstanceState::Ready)),
                (InstanceState::Draining, false) => Some((i.instance_id.clone(), InstanceState::Terminated)),
                _ => None,
            })
            .collect();
        for (id, next) in transitions {
            if next == InstanceState::Terminated {
                self.terminate(&id, TerminationReason::Drained, now);
            } else {
                self.set_state(&id, next, now);
            }
        }

        self.reclaim_spot(now);

        if now >= self.next_evaluation {
            self.next_evaluation = now.plus(self.config.evaluation_interval_secs.max(1));
            for action in evaluate(&self.pool_views(), now) {
                match action {
                    ProvisioningAction::Launch { pool, count } => {
                        for _ in 0..count {
                            if let Err(e) = self.provision(pool, None, None) {
                                tracing::warn!("launch for {pool} failed: {e}");
                            }
                        }
                    }
                    ProvisioningAction::Drain { instance_id, .. } => self.drain(&instance_id, now),
                }
            }
        }

        if now >= self.next_report {
            let interval = self.config.report_interval_secs.max(1);
            self.next_report = Timestamp((now.secs() / interval + 1) * interval);
            for pool in QueueTier::ALL {
                self.report.push(CostRow {
                    t: now.secs(),
                    pool,
                    instances: self.pool_size(pool),
                    spend: self.spend(pool),
                });
            }
        }

        std::mem::take(&mut self.events)
    }

    /// Spot instances are reclaimed when their zone's price passes their bid,
    /// or by the market's random draw once per price step.
    fn reclaim_spot(&mut self, now: Timestamp) {
        let step = now.secs() / self.market.step_secs();
        let fresh_step = self.last_reclaim_step != Some(step);
        self.last_reclaim_step = Some(step);
        let doomed: Vec<String> = self
            .instances
            .values()
            .filter(|i| i.market == Market::Spot && i.state != InstanceState::Terminated)
            .filter(|i| {
                let price = self.market.price(&self.specs[&i.pool], i.zone, now);
                i.bid.is_some_and(|b| price > b) || (fresh_step && self.market.reclaims(i.serial, now))
            })
            .map(|i| i.instance_id.clone())
            .collect();
        for id in doomed {
            self.handle_interruption(&InterruptionEvent { instance_id: id, at: now });
        }
    }
}

#[cfg(test)]
mod tests;
