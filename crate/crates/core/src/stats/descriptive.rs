//! Moments and order statistics over samples that may contain censored
//! entries. Censored values are counted but never enter the moments.

use super::StatsError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation, n-1 denominator. None when n < 2.
    pub sd: Option<f64>,
    pub median: Option<f64>,
    pub n: usize,
    pub n_censored: usize,
}

/// Summarize a sample where `None` marks a censored observation.
///
/// Returns a domain error only when a present value is non-finite; an
/// all-censored or empty input yields a summary with n = 0 and no moments.
pub fn descriptive_summary(values: &[Option<f64>]) -> Result<DescriptiveSummary, StatsError> {
    let mut present = Vec::with_capacity(values.len());
    let mut n_censored = 0usize;
    for v in values {
        match v {
            Some(x) if x.is_finite() => present.push(*x),
            Some(x) => {
                return Err(StatsError::Domain(format!(
                    "non-finite observation {x} in descriptive input"
                )))
            }
            None => n_censored += 1,
        }
    }
    let n = present.len();
    if n == 0 {
        return Ok(DescriptiveSummary {
            mean: None,
            sd: None,
            median: None,
            n: 0,
            n_censored,
        });
    }
    let mean = present.iter().sum::<f64>() / n as f64;
    let sd = if n >= 2 {
        let ss: f64 = present.iter().map(|x| (x - mean).powi(2)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    } else {
        None
    };
    let mut sorted = present;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(DescriptiveSummary {
        mean: Some(mean),
        sd,
        median: Some(median),
        n,
        n_censored,
    })
}
