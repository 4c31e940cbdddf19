//! When to take utilization samples.
//!
//! Nothing is sampled until the payload has run longer than the threshold;
//! from then on one sample is taken per interval of running time.

use crate::broker::UTILIZATION_THRESHOLD_SECS;

pub const DEFAULT_SAMPLE_INTERVAL_SECS: u64 = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtilizationSampler {
    interval: u64,
    next_due: u64,
}

impl UtilizationSampler {
    pub fn new(interval_secs: u64) -> Self {
        UtilizationSampler {
            interval: interval_secs.max(1),
            next_due: UTILIZATION_THRESHOLD_SECS + 1,
        }
    }

    /// Given the running time so far, returns the offset to sample at, if due.
    pub fn due(&mut self, elapsed_secs: u64) -> Option<u64> {
        if elapsed_secs < self.next_due {
            return None;
        }
        self.next_due = elapsed_secs + self.interval;
        Some(elapsed_secs)
    }
}
