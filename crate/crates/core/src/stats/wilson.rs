//! Wilson score interval for a binomial proportion.

use super::StatsError;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub k: u64,
    pub n: u64,
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Score interval at `level` for `k` successes in `n` trials.
///
/// The k = 0 and k = n boundaries are pinned to exact 0 and 1; everywhere the
/// interval contains k/n.
pub fn wilson_interval(k: u64, n: u64, level: f64) -> Result<IntervalEstimate, StatsError> {
    if n == 0 {
        return Err(StatsError::Domain("wilson interval needs n >= 1".into()));
    }
    if k > n {
        return Err(StatsError::Domain(format!(
            "wilson interval needs k <= n, got k={k} n={n}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z = normal.inverse_cdf(0.5 + level / 2.0);
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let mut lo = center - half;
    let mut hi = center + half;
    if k == 0 {
        lo = 0.0;
    }
    if k == n {
        hi = 1.0;
    }
    lo = lo.clamp(0.0, p);
    hi = hi.clamp(p, 1.0);
    Ok(IntervalEstimate { k, n, level, lo, hi })
}
