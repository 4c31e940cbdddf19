//! Machine shapes offered by the simulated provider.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Market {
    OnDemand,
    Spot,
}

impl Market {
    pub fn as_str(self) -> &'static str {
        match self {
            Market::OnDemand => "on_demand",
            Market::Spot => "spot",
        }
    }
}

pub const ON_DEMAND_DELAY_SECS: u64 = 90;
pub const SPOT_DELAY_SECS: u64 = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub name: String,
    pub vcpus: u32,
    pub ram_gb: u32,
    pub market: Market,
    pub provision_delay_seconds: u64,
    /// On-demand list price; spot prices are quoted as a fraction of it.
    pub price_per_hour: f64,
}

impl InstanceSpec {
    pub fn new(name: &str, vcpus: u32, ram_gb: u32, market: Market, price_per_hour: f64) -> Self {
        let provision_delay_seconds = match market {
            Market::OnDemand => ON_DEMAND_DELAY_SECS,
            Market::Spot => SPOT_DELAY_SECS,
        };
        InstanceSpec {
            name: name.to_owned(),
            vcpus,
            ram_gb,
            market,
            provision_delay_seconds,
            price_per_hour,
        }
    }

    /// The same shape bought on the other market, with that market's default delay.
    pub fn in_market(&self, market: Market) -> Self {
        if market == self.market {
            return self.clone();
        }
        InstanceSpec::new(&self.name, self.vcpus, self.ram_gb, market, self.price_per_hour)
    }
}

pub fn default_specs() -> Vec<InstanceSpec> {
    vec![
        InstanceSpec::new("t2.medium", 2, 4, Market::OnDemand, 0.0464),
        InstanceSpec::new("c3.8xlarge", 32, 60, Market::Spot, 1.68),
        InstanceSpec::new("i2.8xlarge", 36, 244, Market::Spot, 6.82),
    ]
}
