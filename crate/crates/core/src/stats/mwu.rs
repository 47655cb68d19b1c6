//! Mann-Whitney U test with midrank ties, exact enumeration for small
//! samples, and a tie-corrected normal approximation above that.

use super::StatsError;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Exact enumeration is limited to combined samples of this size.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MwuMode {
    Exact,
    NormalApprox,
    /// Exact when n1 + n2 <= EXACT_LIMIT, normal approximation otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwuResult {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub n1: usize,
    pub n2: usize,
    pub mode_used: MwuMode,
}

/// Doubled midranks of the combined sample, so tied averages stay integral.
/// Returns (doubled ranks aligned with input order, tie group sizes).
fn doubled_midranks(combined: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let n = combined.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| combined[a].partial_cmp(&combined[b]).unwrap());
    let mut doubled = vec![0u64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && combined[order[j + 1]] == combined[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 average to (i+j)/2 + 1; doubled: i+j+2.
        let d = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            doubled[idx] = d;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    (doubled, tie_sizes)
}

/// Distribution of the doubled rank-sum of a size-n1 subset drawn from the
/// combined doubled midranks, as subset counts indexed by sum.
fn rank_sum_counts(doubled: &[u64], n1: usize) -> Vec<u64> {
    let max_sum: usize = doubled.iter().map(|&d| d as usize).sum();
    let mut dp = vec![vec![0u64; max_sum + 1]; n1 + 1];
    dp[0][0] = 1;
    for &d in doubled {
        let d = d as usize;
        for j in (1..=n1).rev() {
            for s in (d..=max_sum).rev() {
                let add = dp[j - 1][s - d];
                if add > 0 {
                    dp[j][s] += add;
                }
            }
        }
    }
    dp.swap_remove(n1)
}

fn exact_p(doubled: &[u64], n1: usize, observed_doubled_sum: u64) -> f64 {
    let counts = rank_sum_counts(doubled, n1);
    let total: u64 = counts.iter().sum();
    let obs = observed_doubled_sum as usize;
    let le: u64 = counts.iter().take(obs + 1).sum();
    let ge: u64 = counts.iter().skip(obs).sum();
    let p = 2.0 * (le.min(ge) as f64) / total as f64;
    p.min(1.0)
}

fn normal_approx_p(u: f64, n1: usize, n2: usize, tie_sizes: &[usize]) -> f64 {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let nf = n1f + n2f;
    let mu = n1f * n2f / 2.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let diff = u - mu;
    let z = if diff > 0.0 {
        (diff - 0.5) / var.sqrt()
    } else if diff < 0.0 {
        (diff + 0.5) / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0)
}

/// Two-sided Mann-Whitney test; `u` is the first sample's statistic.
pub fn mann_whitney_test(x: &[f64], y: &[f64], mode: MwuMode) -> Result<MwuResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::Domain(
            "mann-whitney needs two non-empty samples".into(),
        ));
    }
    for v in x.iter().chain(y) {
        if !v.is_finite() {
            return Err(StatsError::Domain(format!(
                "non-finite observation {v} in mann-whitney input"
            )));
        }
    }
    let (n1, n2) = (x.len(), y.len());
    let n = n1 + n2;
    let mode_used = match mode {
        MwuMode::Exact if n > EXACT_LIMIT => {
            return Err(StatsError::Domain(format!(
                "exact mann-whitney is limited to n1+n2 <= {EXACT_LIMIT}, got {n}"
            )))
        }
        MwuMode::Exact => MwuMode::Exact,
        MwuMode::NormalApprox => MwuMode::NormalApprox,
        MwuMode::Auto => {
            if n <= EXACT_LIMIT {
                MwuMode::Exact
            } else {
                MwuMode::NormalApprox
            }
        }
    };

    let mut combined = Vec::with_capacity(n);
    combined.extend_from_slice(x);
    combined.extend_from_slice(y);
    let (doubled, tie_sizes) = doubled_midranks(&combined);
    let r1_doubled: u64 = doubled[..n1].iter().sum();
    let u = r1_doubled as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;

    let p = match mode_used {
        MwuMode::Exact => exact_p(&doubled, n1, r1_doubled),
        MwuMode::NormalApprox => normal_approx_p(u, n1, n2, &tie_sizes),
        MwuMode::Auto => unreachable!("auto resolves above"),
    };
    Ok(MwuResult {
        u,
        p,
        n1,
        n2,
        mode_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: walk every size-n1 index subset of the combined
    /// sample in lexicographic order and count doubled rank sums directly.
    fn enumeration_p(x: &[f64], y: &[f64]) -> (f64, f64) {
        let n1 = x.len();
        let mut combined = x.to_vec();
        combined.extend_from_slice(y);
        let (doubled, _) = doubled_midranks(&combined);
        let obs: u64 = doubled[..n1].iter().sum();
        let n = combined.len();

        let mut idx: Vec<usize> = (0..n1).collect();
        let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
        loop {
            let s: u64 = idx.iter().map(|&i| doubled[i]).sum();
            if s <= obs {
                le += 1;
            }
            if s >= obs {
                ge += 1;
            }
            total += 1;
            // next lexicographic combination
            let mut k = n1;
            loop {
                if k == 0 {
                    let u = obs as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
                    let p = (2.0 * le.min(ge) as f64 / total as f64).min(1.0);
                    return (u, p);
                }
                k -= 1;
                if idx[k] != k + n - n1 {
                    break;
                }
            }
            idx[k] += 1;
            for j in k + 1..n1 {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    #[test]
    fn identical_multisets_give_central_u() {
        let r = mann_whitney_test(&[1.0, 2.0], &[1.0, 2.0], MwuMode::Exact).unwrap();
        assert_eq!(r.u, 2.0);
        assert_eq!(r.p, 1.0);
        let r = mann_whitney_test(&[3.0, 3.0, 5.0], &[3.0, 3.0, 5.0], MwuMode::Exact).unwrap();
        assert_eq!(r.u, 4.5);
    }

    #[test]
    fn fully_separated_pairs_match_hand_enumeration() {
        let r = mann_whitney_test(&[1.0, 2.0], &[3.0, 4.0], MwuMode::Exact).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_sided_p_is_symmetric_in_the_samples() {
        let x = [1.0, 2.0, 2.0, 7.5];
        let y = [2.0, 3.0, 9.0];
        let a = mann_whitney_test(&x, &y, MwuMode::Exact).unwrap();
        let b = mann_whitney_test(&y, &x, MwuMode::Exact).unwrap();
        assert!((a.p - b.p).abs() < 1e-12);
        assert!((a.u + b.u - (x.len() * y.len()) as f64).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_enumeration_on_small_shapes() {
        let fixtures: Vec<(Vec<f64>, Vec<f64>)> = vec![
            (vec![1.0, 2.0], vec![3.0, 4.0]),
            (vec![1.0, 3.0, 5.0], vec![2.0, 4.0]),
            (vec![1.0, 1.0, 2.0], vec![1.0, 3.0]),
            (vec![5.0, 5.0, 5.0], vec![5.0, 5.0]),
            (vec![2.5, 9.0, 4.0, 4.0], vec![4.0, 1.0, 7.0]),
            (vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2.0, 2.0, 8.0]),
        ];
        for (x, y) in fixtures {
            let r = mann_whitney_test(&x, &y, MwuMode::Exact).unwrap();
            let (u_o, p_o) = enumeration_p(&x, &y);
            assert_eq!(r.u, u_o, "u mismatch on {x:?} vs {y:?}");
            assert!((r.p - p_o).abs() < 1e-12, "p mismatch on {x:?} vs {y:?}");
        }
    }

    #[test]
    fn exact_matches_enumeration_on_seeded_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for n1 in 2..=6usize {
            for n2 in 2..=6usize {
                for _ in 0..4 {
                    // half-integer values force ties often
                    let x: Vec<f64> =
                        (0..n1).map(|_| rng.random_range(0..=8) as f64 / 2.0).collect();
                    let y: Vec<f64> =
                        (0..n2).map(|_| rng.random_range(0..=8) as f64 / 2.0).collect();
                    let r = mann_whitney_test(&x, &y, MwuMode::Exact).unwrap();
                    let (u_o, p_o) = enumeration_p(&x, &y);
                    assert_eq!(r.u, u_o, "u mismatch on {x:?} vs {y:?}");
                    assert!(
                        (r.p - p_o).abs() < 1e-12,
                        "p mismatch on {x:?} vs {y:?}: {} vs {}",
                        r.p,
                        p_o
                    );
                }
            }
        }
    }

    #[test]
    fn invariant_under_strictly_monotone_transform() {
        let x = [0.5, 2.0, 2.0, 3.5];
        let y = [1.0, 2.5, 6.0];
        let a = mann_whitney_test(&x, &y, MwuMode::Exact).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let ty: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let b = mann_whitney_test(&tx, &ty, MwuMode::Exact).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.p, b.p);
    }

    #[test]
    fn invariant_under_reordering() {
        let a = mann_whitney_test(&[3.0, 1.0, 2.0], &[5.0, 0.5], MwuMode::Exact).unwrap();
        let b = mann_whitney_test(&[1.0, 2.0, 3.0], &[0.5, 5.0], MwuMode::Exact).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.p, b.p);
    }

    #[test]
    fn auto_selects_exact_for_small_samples() {
        let r = mann_whitney_test(&[1.0, 2.0], &[3.0], MwuMode::Auto).unwrap();
        assert_eq!(r.mode_used, MwuMode::Exact);
        let big: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let r = mann_whitney_test(&big, &big.clone(), MwuMode::Auto).unwrap();
        assert_eq!(r.mode_used, MwuMode::NormalApprox);
    }

    #[test]
    fn exact_beyond_limit_is_a_domain_error() {
        let big: Vec<f64> = (0..15).map(|i| i as f64).collect();
        assert!(matches!(
            mann_whitney_test(&big, &big.clone(), MwuMode::Exact),
            Err(StatsError::Domain(_))
        ));
    }

    #[test]
    fn normal_approx_detects_large_shift() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = (0..30).map(|i| 10.0 + i as f64 * 0.1).collect();
        let r = mann_whitney_test(&x, &y, MwuMode::NormalApprox).unwrap();
        assert!(r.p < 1e-6);
        assert_eq!(r.u, 0.0);
    }

    #[test]
    fn normal_approx_on_identical_groups_is_insignificant() {
        let x: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let r = mann_whitney_test(&x, &x.clone(), MwuMode::NormalApprox).unwrap();
        assert!(r.p > 0.9);
    }

    #[test]
    fn all_tied_values_give_p_one() {
        let r = mann_whitney_test(&[4.0; 5], &[4.0; 4], MwuMode::Exact).unwrap();
        assert_eq!(r.p, 1.0);
        let r = mann_whitney_test(&[4.0; 30], &[4.0; 30], MwuMode::NormalApprox).unwrap();
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn empty_sample_is_a_domain_error() {
        assert!(matches!(
            mann_whitney_test(&[], &[1.0], MwuMode::Auto),
            Err(StatsError::Domain(_))
        ));
    }
}
