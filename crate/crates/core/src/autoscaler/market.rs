//! Seeded spot price traces across four zones.
//!
//! Each zone's price multiplier follows a mean-reverting walk, one point per
//! `step_secs`; the price for a spec is its list price times the multiplier.
//! The trace is generated lazily but always in the same order, so prices are
//! a pure function of the seed and the time.

use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::InstanceSpec;
use crate::clock::Timestamp;

pub const ZONES: usize = 4;
pub const DEFAULT_BID_MARGIN: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub seed: u64,
    pub step_secs: u64,
    /// Long-run spot multiplier of the list price.
    pub mean_fraction: f64,
    pub reversion: f64,
    pub volatility: f64,
    pub floor_fraction: f64,
    pub cap_fraction: f64,
    /// Chance per step that a live spot instance is reclaimed regardless of price.
    pub interruption_probability: f64,
    pub bid_margin: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            seed: 7,
            step_secs: 60,
            mean_fraction: 0.3,
            reversion: 0.1,
            volatility: 0.015,
            floor_fraction: 0.05,
            cap_fraction: 1.5,
            interruption_probability: 0.0,
            bid_margin: DEFAULT_BID_MARGIN,
        }
    }
}

#[derive(Debug)]
pub struct SpotMarket {
    config: MarketConfig,
    trace: Mutex<Trace>,
}

#[derive(Debug)]
struct Trace {
    rng: ChaCha8Rng,
    points: Vec<[f64; ZONES]>,
    replay: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpotBid {
    /// 1-based zone index.
    pub zone: usize,
    pub price: f64,
    pub bid: f64,
}

impl SpotMarket {
    pub fn new(config: MarketConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let spread = Normal::new(0.0, config.volatility.max(0.0) * 2.0).unwrap();
        let first = std::array::from_fn(|_| {
            (config.mean_fraction + spread.sample(&mut rng)).clamp(config.floor_fraction, config.cap_fraction)
        });
        SpotMarket {
            trace: Mutex::new(Trace { rng, points: vec![first], replay: false }),
            config,
        }
    }

    /// A market that replays the given multipliers, one per step, holding the last one.
    pub fn replay(config: MarketConfig, points: Vec<[f64; ZONES]>) -> Self {
        assert!(!points.is_empty() && points.iter().flatten().all(|p| *p > 0.0));
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        SpotMarket {
            trace: Mutex::new(Trace { rng, points, replay: true }),
            config,
        }
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    pub fn step_secs(&self) -> u64 {
        self.config.step_secs.max(1)
    }

    /// Multipliers for all zones at `t`.
    pub fn multipliers(&self, t: Timestamp) -> [f64; ZONES] {
        let idx = (t.secs() / self.step_secs()) as usize;
        let c = &self.config;
        let noise = Normal::new(0.0, c.volatility.max(0.0)).unwrap();
        let mut trace = self.trace.lock().unwrap();
        if trace.replay {
            return trace.points[idx.min(trace.points.len() - 1)];
        }
        while trace.points.len() <= idx {
            let last = *trace.points.last().unwrap();
            let Trace { rng, points, .. } = &mut *trace;
            let next = std::array::from_fn(|z| {
                let x = last[z] + c.reversion * (c.mean_fraction - last[z]) + noise.sample(rng);
                x.clamp(c.floor_fraction, c.cap_fraction)
            });
            points.push(next);
        }
        trace.points[idx]
    }

    /// Price per hour of `spec` in 1-based `zone` at `t`.
    pub fn price(&self, spec: &InstanceSpec, zone: usize, t: Timestamp) -> f64 {
        assert!((1..=ZONES).contains(&zone), "zone {zone} out of range");
        spec.price_per_hour * self.multipliers(t)[zone - 1]
    }

    pub fn prices(&self, spec: &InstanceSpec, t: Timestamp) -> [f64; ZONES] {
        self.multipliers(t).map(|m| spec.price_per_hour * m)
    }

    /// Seeded draw for whether the instance with `serial` is reclaimed during the step containing `t`.
    pub fn reclaims(&self, serial: u64, t: Timestamp) -> bool {
        let p = self.config.interruption_probability;
        if p <= 0.0 {
            return false;
        }
        let step = t.secs() / self.step_secs();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ serial.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step.rotate_left(32));
        rand::Rng::gen_bool(&mut rng, p.min(1.0))
    }
}

/// Cheapest zone for `spec` at `now`, lowest index on ties, bidding a margin above it.
pub fn select_spot_bid(market: &SpotMarket, spec: &InstanceSpec, now: Timestamp) -> SpotBid {
    let prices = market.prices(spec, now);
    let mut zone = 0;
    for (i, p) in prices.iter().enumerate() {
        if *p < prices[zone] {
            zone = i;
        }
    }
    SpotBid {
        zone: zone + 1,
        price: prices[zone],
        bid: prices[zone] * market.config.bid_margin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoscaler::spec::default_specs;

    fn c3() -> InstanceSpec {
        default_specs().into_iter().find(|s| s.name == "c3.8xlarge").unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let a = SpotMarket::new(MarketConfig::default());
        let b = SpotMarket::new(MarketConfig::default());
        // Query in different orders; the trace must not depend on it.
        let late = a.prices(&c3(), Timestamp(7200));
        for t in (0..7200).step_by(60) {
            assert_eq!(a.prices(&c3(), Timestamp(t)), b.prices(&c3(), Timestamp(t)));
        }
        assert_eq!(late, b.prices(&c3(), Timestamp(7200)));
        let other = SpotMarket::new(MarketConfig { seed: 8, ..MarketConfig::default() });
        assert_ne!(other.prices(&c3(), Timestamp(3600)), late);
    }

    #[test]
    fn prices_positive_and_bounded() {
        let m = SpotMarket::new(MarketConfig { volatility: 0.5, ..MarketConfig::default() });
        for t in (0..86_400).step_by(60) {
            for p in m.multipliers(Timestamp(t)) {
                assert!((0.05..=1.5).contains(&p));
            }
        }
    }

    #[test]
    fn constant_within_a_step() {
        let m = SpotMarket::new(MarketConfig::default());
        assert_eq!(m.multipliers(Timestamp(60)), m.multipliers(Timestamp(119)));
    }

    #[test]
    fn walk_reverts_toward_mean() {
        let m = SpotMarket::new(MarketConfig { seed: 3, ..MarketConfig::default() });
        let n = 5000;
        let mean: f64 = (0..n).map(|k| m.multipliers(Timestamp(k * 60))[2]).sum::<f64>() / n as f64;
        assert!((mean - 0.3).abs() < 0.05, "{mean}");
    }

    fn fixed(prices: [f64; ZONES]) -> SpotMarket {
        let list = c3().price_per_hour;
        SpotMarket::replay(MarketConfig::default(), vec![prices.map(|p| p / list)])
    }

    #[test]
    fn picks_cheapest_zone() {
        let bid = select_spot_bid(&fixed([0.30, 0.25, 0.40, 0.27]), &c3(), Timestamp(0));
        assert_eq!(bid.zone, 2);
        assert!((bid.price - 0.25).abs() < 1e-12);
        assert!((bid.bid - 0.3125).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_zone() {
        assert_eq!(select_spot_bid(&fixed([0.5; 4]), &c3(), Timestamp(0)).zone, 1);
        assert_eq!(select_spot_bid(&fixed([0.5, 0.2, 0.2, 0.2]), &c3(), Timestamp(0)).zone, 2);
    }

    #[test]
    fn replay_holds_last_point() {
        let m = SpotMarket::replay(MarketConfig::default(), vec![[0.1; 4], [0.2; 4]]);
        assert_eq!(m.multipliers(Timestamp(0)), [0.1; 4]);
        assert_eq!(m.multipliers(Timestamp(10_000)), [0.2; 4]);
    }

    #[test]
    fn reclaim_draws_are_seeded() {
        let m = SpotMarket::new(MarketConfig { interruption_probability: 0.5, ..MarketConfig::default() });
        let draws: Vec<bool> = (0..200).map(|s| m.reclaims(s, Timestamp(600))).collect();
        let again: Vec<bool> = (0..200).map(|s| m.reclaims(s, Timestamp(600))).collect();
        assert_eq!(draws, again);
        let hits = draws.iter().filter(|x| **x).count();
        assert!((60..140).contains(&hits), "{hits}");
        assert!(!SpotMarket::new(MarketConfig::default()).reclaims(1, Timestamp(0)));
    }
}
