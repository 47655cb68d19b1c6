//! The merged human/vlm observation table every comparison runs on.

use super::StatsError;
use crate::scenario::Condition;
use crate::sim::TrialLog;
use crate::trajectory::GridTrace;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Crossing time assigned to censored trials under the imputation
/// convention: one second past the final decision window.
pub const CENSORED_IMPUTED_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Human,
    Vlm,
}

impl Group {
    pub fn canonical_index(self) -> usize {
        match self {
            Group::Human => 0,
            Group::Vlm => 1,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Human => write!(f, "human"),
            Group::Vlm => write!(f, "vlm"),
        }
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "human" => Ok(Group::Human),
            "vlm" => Ok(Group::Vlm),
            other => Err(format!("unknown group '{other}', expected human or vlm")),
        }
    }
}

/// One trial outcome. `crossing_time` is None when the trial ended without a
/// crossing; `likert` holds any 1..=5 ratings attached to this trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortObservation {
    pub group: Group,
    pub id: String,
    pub condition: Condition,
    pub crossing_time: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub likert: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDataset {
    pub observations: Vec<CohortObservation>,
}

impl CohortDataset {
    pub fn new(observations: Vec<CohortObservation>) -> Result<Self, StatsError> {
        let ds = CohortDataset { observations };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        let mut seen = BTreeSet::new();
        for obs in &self.observations {
            if obs.id.is_empty() {
                return Err(StatsError::Design("observation with empty id".into()));
            }
            let key = (obs.group, obs.id.clone(), obs.condition);
            if !seen.insert(key) {
                return Err(StatsError::Design(format!(
                    "duplicate observation for {} {} under {}",
                    obs.group, obs.id, obs.condition
                )));
            }
            if let Some(t) = obs.crossing_time {
                if !t.is_finite() || t <= 0.0 {
                    return Err(StatsError::Domain(format!(
                        "crossing time {t} for {} {} must be finite and positive",
                        obs.group, obs.id
                    )));
                }
            }
            for (metric, &v) in &obs.likert {
                if !(1..=5).contains(&v) {
                    return Err(StatsError::Domain(format!(
                        "likert rating {metric}={v} for {} {} outside 1..=5",
                        obs.group, obs.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Simulated trials become vlm-group observations; post-trial ratings
    /// travel along as likert metrics.
    pub fn from_trial_logs(logs: &[TrialLog]) -> Result<Self, StatsError> {
        let mut observations = Vec::with_capacity(logs.len());
        for log in logs {
            let mut likert = BTreeMap::new();
            if let Some(r) = &log.ratings {
                likert.insert("confidence".to_string(), r.q1_confidence);
                likert.insert("trust".to_string(), r.q2_trust);
            }
            observations.push(CohortObservation {
                group: Group::Vlm,
                id: log.persona.clone(),
                condition: log.condition,
                crossing_time: log.crossing_time.map(f64::from),
                likert,
            });
        }
        Self::new(observations)
    }

    /// Discretized field trajectories become human-group observations. The
    /// continuous road entry time is kept as the crossing time; the tick
    /// value is the fallback for traces without one.
    pub fn from_grid_traces(traces: &[GridTrace]) -> Result<Self, StatsError> {
        let mut observations = Vec::with_capacity(traces.len());
        for trace in traces {
            let crossing_time = trace
                .road_entry_time
                .or(trace.crossing_time.map(f64::from));
            observations.push(CohortObservation {
                group: Group::Human,
                id: trace.owner.clone(),
                condition: trace.condition,
                crossing_time,
                likert: BTreeMap::new(),
            });
        }
        Self::new(observations)
    }

    pub fn merge(mut self, other: CohortDataset) -> Result<Self, StatsError> {
        self.observations.extend(other.observations);
        Self::new(self.observations)
    }

    pub fn ids(&self, group: Group) -> BTreeSet<&str> {
        self.observations
            .iter()
            .filter(|o| o.group == group)
            .map(|o| o.id.as_str())
            .collect()
    }

    pub fn group_observations(&self, group: Group) -> impl Iterator<Item = &CohortObservation> {
        self.observations.iter().filter(move |o| o.group == group)
    }

    /// Crossing times for a group with censored trials as None.
    pub fn crossing_times(&self, group: Group) -> Vec<Option<f64>> {
        self.group_observations(group)
            .map(|o| o.crossing_time)
            .collect()
    }

    /// Crossing times with censored trials imputed at CENSORED_IMPUTED_S.
    pub fn imputed_crossing_times(&self, group: Group) -> Vec<f64> {
        self.group_observations(group)
            .map(|o| o.crossing_time.unwrap_or(CENSORED_IMPUTED_S))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), StatsError> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StatsError> {
        let raw = std::fs::read_to_string(path)?;
        let ds: CohortDataset = serde_json::from_str(&raw)?;
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AvBehavior, Ehmi};

    fn obs(group: Group, id: &str, condition: Condition, t: Option<f64>) -> CohortObservation {
        CohortObservation {
            group,
            id: id.to_string(),
            condition,
            crossing_time: t,
            likert: BTreeMap::new(),
        }
    }

    fn cond(ehmi: Ehmi, av: AvBehavior) -> Condition {
        Condition { ehmi, av }
    }

    #[test]
    fn duplicate_trial_rejected() {
        let c = cond(Ehmi::Light, AvBehavior::Stop);
        let err = CohortDataset::new(vec![
            obs(Group::Vlm, "p1", c, Some(5.0)),
            obs(Group::Vlm, "p1", c, Some(6.0)),
        ])
        .unwrap_err();
        assert!(matches!(err, StatsError::Design(_)));
        assert!(err.to_string().contains("p1"));
    }

    #[test]
    fn same_id_in_both_groups_is_fine() {
        let c = cond(Ehmi::Light, AvBehavior::Stop);
        let ds = CohortDataset::new(vec![
            obs(Group::Vlm, "p1", c, Some(5.0)),
            obs(Group::Human, "p1", c, Some(6.0)),
        ])
        .unwrap();
        assert_eq!(ds.ids(Group::Vlm).len(), 1);
        assert_eq!(ds.ids(Group::Human).len(), 1);
    }

    #[test]
    fn out_of_scale_likert_rejected() {
        let c = cond(Ehmi::Eyes, AvBehavior::Pass);
        let mut o = obs(Group::Vlm, "p1", c, Some(4.0));
        o.likert.insert("confidence".into(), 6);
        let err = CohortDataset::new(vec![o]).unwrap_err();
        assert!(matches!(err, StatsError::Domain(_)));
    }

    #[test]
    fn imputation_fills_censored_with_ten_seconds() {
        let c = cond(Ehmi::None, AvBehavior::Pass);
        let c2 = cond(Ehmi::None, AvBehavior::Stop);
        let ds = CohortDataset::new(vec![
            obs(Group::Vlm, "p1", c, None),
            obs(Group::Vlm, "p1", c2, Some(5.0)),
        ])
        .unwrap();
        assert_eq!(ds.imputed_crossing_times(Group::Vlm), vec![10.0, 5.0]);
        assert_eq!(ds.crossing_times(Group::Vlm), vec![None, Some(5.0)]);
    }

    #[test]
    fn json_round_trip_is_identity() {
        let c = cond(Ehmi::Eyes, AvBehavior::Stop);
        let mut o = obs(Group::Human, "h07", c, Some(4.25));
        o.likert.insert("trust".into(), 4);
        let ds = CohortDataset::new(vec![o]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.json");
        ds.save(&path).unwrap();
        let back = CohortDataset::load(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn nonpositive_crossing_time_rejected() {
        let c = cond(Ehmi::Light, AvBehavior::Pass);
        let err = CohortDataset::new(vec![obs(Group::Human, "h1", c, Some(0.0))]).unwrap_err();
        assert!(matches!(err, StatsError::Domain(_)));
    }
}
