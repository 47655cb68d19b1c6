//! Gaussian kernel density curves for the crossing-time distribution plots.

use super::StatsError;

/// Evaluation points across the curve.
pub const KDE_POINTS: usize = 256;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// 0.9 * min(sd, iqr/1.34) * n^(-1/5); falls back to the non-degenerate
/// spread measure when one of them collapses to zero.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if sd.min(iqr / 1.34) > 0.0 {
        sd.min(iqr / 1.34)
    } else {
        sd.max(iqr / 1.34)
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian KDE over 256 points spanning the data plus three bandwidths on
/// each side. Bandwidth defaults to Silverman's rule.
pub fn kde_curve(
    values: &[f64],
    bandwidth: Option<f64>,
) -> Result<Vec<(f64, f64)>, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::Domain(
            "kde needs at least 2 observations".into(),
        ));
    }
    for v in values {
        if !v.is_finite() {
            return Err(StatsError::Domain(format!(
                "non-finite observation {v} in kde input"
            )));
        }
    }
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => {
            return Err(StatsError::Domain(format!(
                "bandwidth must be positive and finite, got {h}"
            )))
        }
        None => {
            let h = silverman_bandwidth(values);
            if !(h.is_finite() && h > 0.0) {
                return Err(StatsError::Domain(
                    "bandwidth collapsed to zero (constant sample); pass an explicit bandwidth"
                        .into(),
                ));
            }
            h
        }
    };

    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = min - 3.0 * h;
    let hi = max + 3.0 * h;
    let step = (hi - lo) / (KDE_POINTS - 1) as f64;
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let curve = (0..KDE_POINTS)
        .map(|i| {
            let x = lo + i as f64 * step;
            let density = values
                .iter()
                .map(|&xi| {
                    let z = (x - xi) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm;
            (x, density)
        })
        .collect();
    Ok(curve)
}
