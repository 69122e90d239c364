//! Learning-rate schedules: linear warmup into linear or inverse-sqrt decay.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    LinearDecay,
    InverseSqrt,
}

/// Learning rate at `step` of `total`: linear warmup to `peak` over
/// `warmup_ratio * total` steps, then per-schedule decay. Inverse-sqrt decay
/// is `peak * sqrt(warmup / step)`.
pub fn lr_at(schedule: Schedule, step: u64, total: u64, warmup_ratio: f64, peak: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidConfig("lr schedule over zero total steps".into()));
    }
    if step > total {
        return Err(Error::InvalidConfig(format!("step {step} beyond schedule total {total}")));
    }
    let warmup = ((total as f64 * warmup_ratio).round() as u64).max(1);
    if step <= warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    Ok(match schedule {
        Schedule::LinearDecay => peak * (total - step) as f64 / (total - warmup) as f64,
        Schedule::InverseSqrt => peak * (warmup as f64 / step as f64).sqrt(),
    })
}
