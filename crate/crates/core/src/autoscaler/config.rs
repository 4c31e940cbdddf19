//! Declarative pool configuration, read from TOML.
//!
//! ```toml
//! evaluation_interval_secs = 10
//!
//! [market]
//! seed = 42
//! interruption_probability = 0.02
//!
//! [pools.test]
//! spec = "t2.medium"
//! min_instances = 1
//!
//! [pools.production]
//! spec = "c3.8xlarge"
//! max_instances = 20
//! ```
//!
//! Omitted keys take the defaults below; `[[specs]]` tables replace the
//! built-in machine catalog.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::market::MarketConfig;
use super::policy::ScalePolicy;
use super::spec::{default_specs, InstanceSpec, Market};
use crate::broker::QueueTier;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("pool {pool} names unknown spec `{spec}`")]
    UnknownSpec { pool: QueueTier, spec: String },
    #[error("the Test pool must keep at least one instance on-line")]
    WarmMinimum,
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub spec: String,
    /// Overrides the instance type's own market, e.g. to run Production on-demand.
    #[serde(default)]
    pub market: Option<Market>,
    #[serde(default)]
    pub min_instances: usize,
    #[serde(default = "default_max")]
    pub max_instances: usize,
    #[serde(default = "default_backlog")]
    pub backlog_per_instance: u64,
    #[serde(default = "default_idle")]
    pub idle_timeout_secs: u64,
}

fn default_max() -> usize {
    ScalePolicy::default().max_instances
}
fn default_backlog() -> u64 {
    ScalePolicy::default().backlog_per_instance
}
fn default_idle() -> u64 {
    ScalePolicy::default().idle_timeout_secs
}

impl PoolConfig {
    pub fn new(spec: &str, min_instances: usize) -> Self {
        PoolConfig {
            spec: spec.to_owned(),
            market: None,
            min_instances,
            max_instances: default_max(),
            backlog_per_instance: default_backlog(),
            idle_timeout_secs: default_idle(),
        }
    }

    pub fn policy(&self) -> ScalePolicy {
        ScalePolicy {
            min_instances: self.min_instances,
            max_instances: self.max_instances,
            backlog_per_instance: self.backlog_per_instance,
            idle_timeout_secs: self.idle_timeout_secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pools {
    #[serde(default = "default_test_pool")]
    pub test: PoolConfig,
    #[serde(default = "default_production_pool")]
    pub production: PoolConfig,
}

fn default_test_pool() -> PoolConfig {
    PoolConfig::new("t2.medium", 1)
}

fn default_production_pool() -> PoolConfig {
    PoolConfig::new("c3.8xlarge", 0)
}

impl Default for Pools {
    fn default() -> Self {
        Pools {
            test: default_test_pool(),
            production: default_production_pool(),
        }
    }
}

impl Pools {
    pub fn get(&self, pool: QueueTier) -> &PoolConfig {
        match pool {
            QueueTier::Test => &self.test,
            QueueTier::Production => &self.production,
        }
    }

    pub fn get_mut(&mut self, pool: QueueTier) -> &mut PoolConfig {
        match pool {
            QueueTier::Test => &mut self.test,
            QueueTier::Production => &mut self.production,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoscalerConfig {
    pub evaluation_interval_secs: u64,
    pub report_interval_secs: u64,
    pub market: MarketConfig,
    pub specs: Vec<InstanceSpec>,
    pub pools: Pools,
}

impl Default for AutoscalerConfig {
    fn default() -> Self {
        AutoscalerConfig {
            evaluation_interval_secs: 10,
            report_interval_secs: 60,
            market: MarketConfig::default(),
            specs: default_specs(),
            pools: Pools::default(),
        }
    }
}

impl AutoscalerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: AutoscalerConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for pool in QueueTier::ALL {
            self.spec_for(pool)?;
            let p = self.pools.get(pool);
            if p.max_instances < p.min_instances {
                return Err(ConfigError::Invalid(format!("{pool}: max_instances below min_instances")));
            }
        }
        if self.pools.test.min_instances < 1 {
            return Err(ConfigError::WarmMinimum);
        }
        let m = &self.market;
        if !(m.floor_fraction > 0.0 && m.floor_fraction <= m.cap_fraction) {
            return Err(ConfigError::Invalid("market floor must be positive and below the cap".into()));
        }
        if !(0.0..=1.0).contains(&m.interruption_probability) || m.bid_margin < 1.0 {
            return Err(ConfigError::Invalid("interruption probability in [0,1], bid margin ≥ 1".into()));
        }
        if self.specs.iter().any(|s| s.price_per_hour <= 0.0) {
            return Err(ConfigError::Invalid("spec prices must be positive".into()));
        }
        Ok(())
    }

    /// The spec a pool launches, with the pool's market override applied.
    pub fn spec_for(&self, pool: QueueTier) -> Result<InstanceSpec, ConfigError> {
        let p = self.pools.get(pool);
        let spec = self
            .specs
            .iter()
            .find(|s| s.name == p.spec)
            .ok_or_else(|| ConfigError::UnknownSpec { pool, spec: p.spec.clone() })?;
        Ok(match p.market {
            Some(m) => spec.in_market(m),
            None => spec.clone(),
        })
    }
}
