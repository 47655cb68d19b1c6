//! Aligned-rank permutation ANOVA for the eHMI x AV x Group crossing-time
//! design.
//!
//! Per effect, observations are aligned by subtracting every other effect's
//! unweighted cell-mean estimate, midranked, and scored with a classical
//! Type III F statistic via orthonormal design projections. p-values come
//! from globally permuting the response: a seeded sample of permutations, or
//! every permutation in exhaustive mode.
//!
//! Saturated designs (zero residual df) skip the ranking and use the Type
//! III mean square of the aligned raw values as the permutation statistic.

use super::dataset::{CohortDataset, Group};
use super::StatsError;
use crate::scenario::{AvBehavior, Ehmi};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectId {
    #[serde(rename = "eHMI")]
    Ehmi,
    #[serde(rename = "AV")]
    Av,
    Group,
    #[serde(rename = "eHMI x AV")]
    EhmiAv,
    #[serde(rename = "eHMI x Group")]
    EhmiGroup,
    #[serde(rename = "AV x Group")]
    AvGroup,
    #[serde(rename = "eHMI x AV x Group")]
    EhmiAvGroup,
}

impl EffectId {
    pub const ALL: [EffectId; 7] = [
        EffectId::Ehmi,
        EffectId::Av,
        EffectId::Group,
        EffectId::EhmiAv,
        EffectId::EhmiGroup,
        EffectId::AvGroup,
        EffectId::EhmiAvGroup,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EffectId::Ehmi => "eHMI",
            EffectId::Av => "AV",
            EffectId::Group => "Group",
            EffectId::EhmiAv => "eHMI x AV",
            EffectId::EhmiGroup => "eHMI x Group",
            EffectId::AvGroup => "AV x Group",
            EffectId::EhmiAvGroup => "eHMI x AV x Group",
        }
    }
}

impl fmt::Display for EffectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PermutationMode {
    Sampled { n_perm: u64 },
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectResult {
    pub effect: EffectId,
    pub df1: usize,
    pub df2: usize,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsTable {
    /// All seven effects in canonical order.
    pub effects: Vec<EffectResult>,
    pub n_obs: usize,
    pub n_censored_excluded: usize,
    pub mode: PermutationMode,
    /// Permutations actually scored: the request in sampled mode, n! in
    /// exhaustive mode.
    pub n_perm: u64,
    pub seed: u64,
    pub saturated: bool,
}

impl EffectsTable {
    pub fn effect(&self, id: EffectId) -> &EffectResult {
        self.effects
            .iter()
            .find(|e| e.effect == id)
            .expect("all seven effects present")
    }
}

/// Exhaustive mode enumerates n! response permutations.
pub const EXHAUSTIVE_LIMIT: usize = 10;

const N_EFFECTS: usize = 7;
/// Sums of squares below this (relative to the total) are treated as zero
/// so that constant responses yield F = 0 instead of float-dust ratios.
const SS_REL_EPS: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass; columns that
/// collapse below the relative tolerance are dropped.
fn orthonormal_basis(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for col in cols {
        let mut v = col.clone();
        let orig = dot(&v, &v).sqrt();
        if orig == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let d = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= d * qi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-10 * orig {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

/// Effect-coded columns for one factor: L-1 columns, last level coded -1.
fn effect_columns(levels: &[usize], n_levels: usize) -> Vec<Vec<f64>> {
    let n = levels.len();
    (0..n_levels - 1)
        .map(|e| {
            let mut col = vec![0.0; n];
            for (row, &l) in levels.iter().enumerate() {
                col[row] = if l == e {
                    1.0
                } else if l == n_levels - 1 {
                    -1.0
                } else {
                    0.0
                };
            }
            col
        })
        .collect()
}

fn interact(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for ca in a {
        for cb in b {
            out.push(ca.iter().zip(cb).map(|(x, y)| x * y).collect());
        }
    }
    out
}

struct Design {
    n: usize,
    levels: [usize; 3],
    cell_of: Vec<usize>,
    cell_n: Vec<f64>,
    q_full: Vec<Vec<f64>>,
    q_red: Vec<Vec<Vec<f64>>>,
    df1: [usize; N_EFFECTS],
    df2: usize,
    saturated: bool,
}

impl Design {
    fn build(
        fa: Vec<usize>,
        fb: Vec<usize>,
        fc: Vec<usize>,
        levels: [usize; 3],
        cell_label: impl Fn(usize, usize, usize) -> String,
    ) -> Result<Design, StatsError> {
        let n = fa.len();
        let (la, lb, lc) = (levels[0], levels[1], levels[2]);
        let n_cells = la * lb * lc;
        let mut cell_of = Vec::with_capacity(n);
        let mut cell_n = vec![0.0f64; n_cells];
        for i in 0..n {
            let cell = (fa[i] * lb + fb[i]) * lc + fc[i];
            cell_of.push(cell);
            cell_n[cell] += 1.0;
        }
        for a in 0..la {
            for b in 0..lb {
                for c in 0..lc {
                    if cell_n[(a * lb + b) * lc + c] == 0.0 {
                        return Err(StatsError::Design(format!(
                            "empty design cell ({})",
                            cell_label(a, b, c)
                        )));
                    }
                }
            }
        }

        let xa = effect_columns(&fa, la);
        let xb = effect_columns(&fb, lb);
        let xc = effect_columns(&fc, lc);
        let blocks: [Vec<Vec<f64>>; N_EFFECTS] = [
            xa.clone(),
            xb.clone(),
            xc.clone(),
            interact(&xa, &xb),
            interact(&xa, &xc),
            interact(&xb, &xc),
            interact(&interact(&xa, &xb), &xc),
        ];
        let intercept = vec![vec![1.0; n]];
        let full_cols: Vec<Vec<f64>> = intercept
            .iter()
            .chain(blocks.iter().flatten())
            .cloned()
            .collect();
        let q_full = orthonormal_basis(&full_cols);

        let mut q_red = Vec::with_capacity(N_EFFECTS);
        let mut df1 = [0usize; N_EFFECTS];
        for e in 0..N_EFFECTS {
            let reduced: Vec<Vec<f64>> = intercept
                .iter()
                .chain(
                    blocks
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != e)
                        .flat_map(|(_, b)| b.iter()),
                )
                .cloned()
                .collect();
            let q = orthonormal_basis(&reduced);
            df1[e] = q_full.len() - q.len();
            assert!(df1[e] > 0, "effect {e} carries no degrees of freedom");
            q_red.push(q);
        }
        let df2 = n - q_full.len();
        Ok(Design {
            n,
            levels,
            cell_of,
            cell_n,
            q_full,
            q_red,
            df1,
            df2,
            saturated: df2 == 0,
        })
    }
}

struct Scratch {
    cell_mean: Vec<f64>,
    m_a: Vec<f64>,
    m_b: Vec<f64>,
    m_c: Vec<f64>,
    m_ab: Vec<f64>,
    m_ac: Vec<f64>,
    m_bc: Vec<f64>,
    est: Vec<f64>,
    aligned: Vec<f64>,
    ranked: Vec<f64>,
    order: Vec<usize>,
}

impl Scratch {
    fn new(d: &Design) -> Scratch {
        let [la, lb, lc] = d.levels;
        Scratch {
            cell_mean: vec![0.0; la * lb * lc],
            m_a: vec![0.0; la],
            m_b: vec![0.0; lb],
            m_c: vec![0.0; lc],
            m_ab: vec![0.0; la * lb],
            m_ac: vec![0.0; la * lc],
            m_bc: vec![0.0; lb * lc],
            est: vec![0.0; la * lb * lc],
            aligned: vec![0.0; d.n],
            ranked: vec![0.0; d.n],
            order: (0..d.n).collect(),
        }
    }
}

fn midrank_into(values: &[f64], order: &mut [usize], out: &mut [f64]) {
    let n = values.len();
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_unstable_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
}

/// All seven permutation statistics for one response vector.
fn statistics(y: &[f64], d: &Design, s: &mut Scratch, out: &mut [f64; N_EFFECTS]) {
    let [la, lb, lc] = d.levels;
    let n_cells = la * lb * lc;

    for m in s.cell_mean.iter_mut() {
        *m = 0.0;
    }
    for (i, &cell) in d.cell_of.iter().enumerate() {
        s.cell_mean[cell] += y[i];
    }
    for (m, &cnt) in s.cell_mean.iter_mut().zip(&d.cell_n) {
        *m /= cnt;
    }

    // unweighted marginals: plain means over cell means
    for v in s
        .m_a
        .iter_mut()
        .chain(s.m_b.iter_mut())
        .chain(s.m_c.iter_mut())
        .chain(s.m_ab.iter_mut())
        .chain(s.m_ac.iter_mut())
        .chain(s.m_bc.iter_mut())
    {
        *v = 0.0;
    }
    let mut grand = 0.0;
    for a in 0..la {
        for b in 0..lb {
            for c in 0..lc {
                let m = s.cell_mean[(a * lb + b) * lc + c];
                s.m_a[a] += m;
                s.m_b[b] += m;
                s.m_c[c] += m;
                s.m_ab[a * lb + b] += m;
                s.m_ac[a * lc + c] += m;
                s.m_bc[b * lc + c] += m;
                grand += m;
            }
        }
    }
    for v in s.m_a.iter_mut() {
        *v /= (lb * lc) as f64;
    }
    for v in s.m_b.iter_mut() {
        *v /= (la * lc) as f64;
    }
    for v in s.m_c.iter_mut() {
        *v /= (la * lb) as f64;
    }
    for v in s.m_ab.iter_mut() {
        *v /= lc as f64;
    }
    for v in s.m_ac.iter_mut() {
        *v /= lb as f64;
    }
    for v in s.m_bc.iter_mut() {
        *v /= la as f64;
    }
    grand /= n_cells as f64;

    for (e, out_f) in out.iter_mut().enumerate() {
        for a in 0..la {
            for b in 0..lb {
                for c in 0..lc {
                    let cell = (a * lb + b) * lc + c;
                    let (ma, mb, mc) = (s.m_a[a], s.m_b[b], s.m_c[c]);
                    let (mab, mac, mbc) =
                        (s.m_ab[a * lb + b], s.m_ac[a * lc + c], s.m_bc[b * lc + c]);
                    s.est[cell] = match e {
                        0 => ma - grand,
                        1 => mb - grand,
                        2 => mc - grand,
                        3 => mab - ma - mb + grand,
                        4 => mac - ma - mc + grand,
                        5 => mbc - mb - mc + grand,
                        _ => s.cell_mean[cell] - mab - mac - mbc + ma + mb + mc - grand,
                    };
                }
            }
        }
        for (i, &cell) in d.cell_of.iter().enumerate() {
            s.aligned[i] = y[i] - s.cell_mean[cell] + s.est[cell];
        }
        let z: &[f64] = if d.saturated {
            &s.aligned
        } else {
            midrank_into(&s.aligned, &mut s.order, &mut s.ranked);
            &s.ranked
        };

        let ssz = dot(z, z);
        let sf: f64 = d.q_full.iter().map(|q| dot(q, z).powi(2)).sum();
        let sr: f64 = d.q_red[e].iter().map(|q| dot(q, z).powi(2)).sum();
        let ss_e = (sf - sr).max(0.0);
        let sse = (ssz - sf).max(0.0);
        let eps = SS_REL_EPS * ssz.max(1.0);
        *out_f = if d.df2 > 0 {
            if sse > eps {
                (ss_e / d.df1[e] as f64) / (sse / d.df2 as f64)
            } else if ss_e <= eps {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            ss_e / d.df1[e] as f64
        };
    }
}

fn counts_toward(perm: f64, observed: f64) -> bool {
    if observed.is_infinite() {
        perm >= observed
    } else {
        perm >= observed - SS_REL_EPS * observed.abs().max(1.0)
    }
}

fn stream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Non-parametric three-factor ANOVA on crossing times with censored trials
/// excluded. Returns one row per effect; every p lies in (0, 1].
pub fn rank_permutation_anova(
    dataset: &CohortDataset,
    mode: PermutationMode,
    seed: u64,
) -> Result<EffectsTable, StatsError> {
    let mut y = Vec::new();
    let mut ehmi_raw = Vec::new();
    let mut av_raw = Vec::new();
    let mut group_raw = Vec::new();
    let mut n_censored = 0usize;
    for obs in &dataset.observations {
        match obs.crossing_time {
            Some(t) => {
                y.push(t);
                ehmi_raw.push(obs.condition.ehmi);
                av_raw.push(obs.condition.av);
                group_raw.push(obs.group);
            }
            None => n_censored += 1,
        }
    }
    if y.is_empty() {
        return Err(StatsError::Design(
            "no uncensored crossing times to analyze".into(),
        ));
    }

    let ehmi_levels: Vec<Ehmi> = [Ehmi::Light, Ehmi::Eyes, Ehmi::None]
        .into_iter()
        .filter(|l| ehmi_raw.contains(l))
        .collect();
    let av_levels: Vec<AvBehavior> = [AvBehavior::Stop, AvBehavior::Pass]
        .into_iter()
        .filter(|l| av_raw.contains(l))
        .collect();
    let group_levels: Vec<Group> = [Group::Human, Group::Vlm]
        .into_iter()
        .filter(|l| group_raw.contains(l))
        .collect();
    for (name, count) in [
        ("eHMI", ehmi_levels.len()),
        ("AV", av_levels.len()),
        ("Group", group_levels.len()),
    ] {
        if count < 2 {
            return Err(StatsError::Design(format!(
                "factor {name} has a single level in the dataset"
            )));
        }
    }

    let fa: Vec<usize> = ehmi_raw
        .iter()
        .map(|v| ehmi_levels.iter().position(|l| l == v).unwrap())
        .collect();
    let fb: Vec<usize> = av_raw
        .iter()
        .map(|v| av_levels.iter().position(|l| l == v).unwrap())
        .collect();
    let fc: Vec<usize> = group_raw
        .iter()
        .map(|v| group_levels.iter().position(|l| l == v).unwrap())
        .collect();
    let levels = [ehmi_levels.len(), av_levels.len(), group_levels.len()];

    let design = Design::build(fa, fb, fc, levels, |a, b, c| {
        format!(
            "{}, {}, {}",
            ehmi_levels[a].dir_fragment(),
            av_levels[b].dir_fragment(),
            group_levels[c]
        )
    })?;

    if matches!(mode, PermutationMode::Exhaustive) && design.n > EXHAUSTIVE_LIMIT {
        return Err(StatsError::Design(format!(
            "exhaustive mode is limited to {EXHAUSTIVE_LIMIT} observations, got {}",
            design.n
        )));
    }

    let mut scratch = Scratch::new(&design);
    let mut observed = [0.0; N_EFFECTS];
    statistics(&y, &design, &mut scratch, &mut observed);

    let mut counts = [0u64; N_EFFECTS];
    let mut perm_stats = [0.0; N_EFFECTS];
    let (p, n_perm_effective): ([f64; N_EFFECTS], u64) = match mode {
        PermutationMode::Sampled { n_perm } => {
            if n_perm == 0 {
                return Err(StatsError::Domain("sampled mode needs n_perm >= 1".into()));
            }
            let mut yp = y.clone();
            for i in 0..n_perm {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, i));
                yp.copy_from_slice(&y);
                yp.shuffle(&mut rng);
                statistics(&yp, &design, &mut scratch, &mut perm_stats);
                for e in 0..N_EFFECTS {
                    if counts_toward(perm_stats[e], observed[e]) {
                        counts[e] += 1;
                    }
                }
            }
            let mut p = [0.0; N_EFFECTS];
            for e in 0..N_EFFECTS {
                p[e] = (1 + counts[e]) as f64 / (1 + n_perm) as f64;
            }
            (p, n_perm)
        }
        PermutationMode::Exhaustive => {
            // Heap's algorithm, identity permutation included in the count.
            let n = design.n;
            let mut yp = y.clone();
            let mut total = 0u64;
            let mut score = |v: &[f64],
                             scratch: &mut Scratch,
                             counts: &mut [u64; N_EFFECTS],
                             total: &mut u64| {
                statistics(v, &design, scratch, &mut perm_stats);
                for e in 0..N_EFFECTS {
                    if counts_toward(perm_stats[e], observed[e]) {
                        counts[e] += 1;
                    }
                }
                *total += 1;
            };
            score(&yp, &mut scratch, &mut counts, &mut total);
            let mut c = vec![0usize; n];
            let mut i = 0;
            while i < n {
                if c[i] < i {
                    if i % 2 == 0 {
                        yp.swap(0, i);
                    } else {
                        yp.swap(c[i], i);
                    }
                    score(&yp, &mut scratch, &mut counts, &mut total);
                    c[i] += 1;
                    i = 0;
                } else {
                    c[i] = 0;
                    i += 1;
                }
            }
            let mut p = [0.0; N_EFFECTS];
            for e in 0..N_EFFECTS {
                p[e] = counts[e] as f64 / total as f64;
            }
            (p, total)
        }
    };

    let effects = EffectId::ALL
        .iter()
        .enumerate()
        .map(|(e, &id)| EffectResult {
            effect: id,
            df1: design.df1[e],
            df2: design.df2,
            f: observed[e],
            p: p[e],
        })
        .collect();
    Ok(EffectsTable {
        effects,
        n_obs: design.n,
        n_censored_excluded: n_censored,
        mode,
        n_perm: n_perm_effective,
        seed,
        saturated: design.saturated,
    })
}
