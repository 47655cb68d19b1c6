//! Per-condition human-vs-vlm tests and the human-subset robustness sweep.

use super::dataset::{CohortDataset, Group};
use super::mwu::{mann_whitney_test, MwuMode, MwuResult};
use super::StatsError;
use crate::scenario::{enumerate_conditions, Condition};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Censored-handling convention stamped on every slice row.
pub const CENSORED_CONVENTION: &str = "censored excluded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSliceRow {
    pub condition: Condition,
    pub n_human: usize,
    pub n_vlm: usize,
    pub n_censored_human: usize,
    pub n_censored_vlm: usize,
    pub u: f64,
    pub p: f64,
    pub mode_used: MwuMode,
    pub convention: String,
}

fn split_times(
    dataset: &CohortDataset,
    condition: Condition,
    group: Group,
) -> (Vec<f64>, usize) {
    let mut times = Vec::new();
    let mut censored = 0;
    for obs in &dataset.observations {
        if obs.condition == condition && obs.group == group {
            match obs.crossing_time {
                Some(t) => times.push(t),
                None => censored += 1,
            }
        }
    }
    (times, censored)
}

/// Mann-Whitney on crossing times within each of the six conditions,
/// human vs vlm. Exact enumeration where the combined sample allows it.
pub fn condition_slice_tests(
    dataset: &CohortDataset,
) -> Result<Vec<ConditionSliceRow>, StatsError> {
    let mut rows = Vec::with_capacity(6);
    for condition in enumerate_conditions() {
        let (human, censored_h) = split_times(dataset, condition, Group::Human);
        let (vlm, censored_v) = split_times(dataset, condition, Group::Vlm);
        if human.is_empty() {
            return Err(StatsError::Design(format!(
                "no human crossing times for condition {condition}"
            )));
        }
        if vlm.is_empty() {
            return Err(StatsError::Design(format!(
                "no vlm crossing times for condition {condition}"
            )));
        }
        let MwuResult {
            u, p, mode_used, ..
        } = mann_whitney_test(&human, &vlm, MwuMode::Auto)?;
        rows.push(ConditionSliceRow {
            condition,
            n_human: human.len(),
            n_vlm: vlm.len(),
            n_censored_human: censored_h,
            n_censored_vlm: censored_v,
            u,
            p,
            mode_used,
            convention: CENSORED_CONVENTION.to_string(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub k: usize,
    pub partition_index: usize,
    pub member_ids: Vec<String>,
    pub n_human_times: usize,
    pub n_vlm_times: usize,
    pub u: f64,
    pub p: f64,
    pub mode_used: MwuMode,
}

/// Partition the 20 human ids into seeded disjoint groups of `k` and test
/// each subset's crossing times against the full vlm cohort.
pub fn subset_comparison(
    dataset: &CohortDataset,
    k: usize,
    seed: u64,
) -> Result<Vec<SubsetRow>, StatsError> {
    if k != 5 && k != 10 {
        return Err(StatsError::Domain(format!(
            "subset size must be 5 or 10, got {k}"
        )));
    }
    for group in [Group::Human, Group::Vlm] {
        let count = dataset.ids(group).len();
        if count != 20 {
            return Err(StatsError::Design(format!(
                "subset comparison expects 20 {group} ids, found {count}"
            )));
        }
    }
    let mut ids: Vec<String> = dataset
        .ids(Group::Human)
        .into_iter()
        .map(str::to_string)
        .collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let vlm_times: Vec<f64> = dataset
        .crossing_times(Group::Vlm)
        .into_iter()
        .flatten()
        .collect();
    if vlm_times.is_empty() {
        return Err(StatsError::Design(
            "vlm cohort has no uncensored crossing times".into(),
        ));
    }

    let mut rows = Vec::with_capacity(20 / k);
    for (partition_index, chunk) in ids.chunks(k).enumerate() {
        let mut member_ids: Vec<String> = chunk.to_vec();
        member_ids.sort();
        let human_times: Vec<f64> = dataset
            .group_observations(Group::Human)
            .filter(|o| member_ids.iter().any(|id| id == &o.id))
            .filter_map(|o| o.crossing_time)
            .collect();
        if human_times.is_empty() {
            return Err(StatsError::Design(format!(
                "partition {partition_index} has no uncensored crossing times"
            )));
        }
        let MwuResult {
            u, p, mode_used, ..
        } = mann_whitney_test(&human_times, &vlm_times, MwuMode::Auto)?;
        rows.push(SubsetRow {
            k,
            partition_index,
            member_ids,
            n_human_times: human_times.len(),
            n_vlm_times: vlm_times.len(),
            u,
            p,
            mode_used,
        });
    }
    Ok(rows)
}
