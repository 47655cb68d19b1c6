//! Human field-trajectory ingest: validates annotation exports and reduces
//! continuous motion to the simulator's grid so the two cohorts compare
//! like for like.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Action, Condition, Position, TimeStep};
use crate::sim::TrialLog;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("annotation schema: {0}")]
    Schema(String),
    #[error("annotation data: {0}")]
    Data(String),
    #[error("annotation file: {0}")]
    Io(#[from] std::io::Error),
    #[error("annotation format: {0}")]
    Json(#[from] serde_json::Error),
}

pub const MARKER_INTERVAL_M: f64 = 0.8;
pub const ROAD_EDGE_M: f64 = 3.2;

/// Default tick-speed below which motion counts as standing still: half a
/// marker interval per second.
pub const DEFAULT_STOP_THRESHOLD: f64 = 0.4;

/// One participant's annotated walk toward the road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanTrajectory {
    pub participant: String,
    pub condition: Condition,
    /// Timestamps at the five marked ground points, seconds.
    pub markers: Vec<f64>,
    /// When they stepped off the edge onto the road, seconds.
    pub road_entry_time: f64,
    /// Ordered (time s, distance m along the approach path) samples.
    pub samples: Vec<[f64; 2]>,
}

impl HumanTrajectory {
    fn validate(&self) -> Result<(), TrajectoryError> {
        if self.markers.len() != 5 {
            return Err(TrajectoryError::Schema(format!(
                "expected 5 marker times, got {}",
                self.markers.len()
            )));
        }
        if self.samples.is_empty() {
            return Err(TrajectoryError::Schema("no samples".into()));
        }
        for w in self.markers.windows(2) {
            if w[1] < w[0] {
                return Err(TrajectoryError::Data(format!(
                    "marker times decrease: {} after {}",
                    w[1], w[0]
                )));
            }
        }
        if self.road_entry_time < self.markers[4] {
            return Err(TrajectoryError::Data(format!(
                "road entry at {} precedes the last marker at {}",
                self.road_entry_time, self.markers[4]
            )));
        }
        for pair in self.samples.windows(2) {
            if pair[1][0] <= pair[0][0] {
                return Err(TrajectoryError::Data(format!(
                    "sample times must increase: {} after {}",
                    pair[1][0], pair[0][0]
                )));
            }
        }
        for s in &self.samples {
            if !(s[1].is_finite() && s[1] >= 0.0) {
                return Err(TrajectoryError::Data(format!("distance {} out of range", s[1])));
            }
        }
        Ok(())
    }

    /// Linear interpolation of distance at time `t`, held flat outside the
    /// sampled range.
    pub fn distance_at(&self, t: f64) -> f64 {
        let samples = &self.samples;
        if t <= samples[0][0] {
            return samples[0][1];
        }
        if t >= samples[samples.len() - 1][0] {
            return samples[samples.len() - 1][1];
        }
        let idx = samples.partition_point(|s| s[0] <= t);
        let (t0, d0) = (samples[idx - 1][0], samples[idx - 1][1]);
        let (t1, d1) = (samples[idx][0], samples[idx][1]);
        d0 + (d1 - d0) * (t - t0) / (t1 - t0)
    }
}

pub fn parse_annotation_export(path: &Path) -> Result<HumanTrajectory, TrajectoryError> {
    parse_annotation_str(&std::fs::read_to_string(path)?)
}

pub fn parse_annotation_str(raw: &str) -> Result<HumanTrajectory, TrajectoryError> {
    let traj: HumanTrajectory = serde_json::from_str(raw)?;
    traj.validate()?;
    Ok(traj)
}

/// One tick of a discretized trace: the position held after acting at
/// `time_step` (stops keep their position, so a stop entry's position is
/// where the wait happened).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub time_step: TimeStep,
    pub position: Position,
    pub action: Action,
}

/// A trajectory reduced to grid form; both cohorts land here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTrace {
    pub owner: String,
    pub condition: Condition,
    pub start_position: Position,
    pub entries: Vec<GridEntry>,
    /// Crossing second on the tick grid; entry exactly on a tick boundary
    /// rolls forward to the next second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_time: Option<u32>,
    /// Continuous road-entry seconds; present only for ingested humans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_entry_time: Option<f64>,
}

fn grid_index(d: f64) -> Position {
    (((d + 1e-9) / MARKER_INTERVAL_M).floor() as i64).clamp(0, 4) as Position
}

/// Reduces a continuous walk to per-second grid decisions. The position
/// advances at most one marker per tick toward where the participant really
/// was; a tick whose mean speed is below `stop_threshold` counts as a hard
/// stop regardless of marker crossings.
pub fn discretize(traj: &HumanTrajectory, stop_threshold: f64) -> GridTrace {
    let raw_at = |t: f64| -> Position {
        if t > traj.road_entry_time {
            5
        } else {
            grid_index(traj.distance_at(t))
        }
    };
    let start_position = grid_index(traj.distance_at(0.0));
    let mut position = start_position;
    let mut entries = Vec::new();
    for t in 0u8..=8 {
        let t_end = f64::from(t) + 1.0;
        let speed = (traj.distance_at(t_end) - traj.distance_at(f64::from(t))).abs();
        let target = raw_at(t_end);
        let action = if speed < stop_threshold {
            Action::Stop
        } else if target > position {
            Action::Forward
        } else if target < position {
            Action::Backward
        } else {
            Action::Stop
        };
        position = match action {
            Action::Forward => position + 1,
            Action::Stop => position,
            Action::Backward => position.saturating_sub(1),
        };
        entries.push(GridEntry { time_step: t, position, action });
        if position == 5 {
            break;
        }
    }
    GridTrace {
        owner: traj.participant.clone(),
        condition: traj.condition,
        start_position,
        entries,
        crossing_time: Some(traj.road_entry_time.floor() as u32 + 1),
        road_entry_time: Some(traj.road_entry_time),
    }
}

/// Projects a simulated trial onto the shared trace form.
pub fn trace_from_log(log: &TrialLog) -> GridTrace {
    GridTrace {
        owner: log.persona.clone(),
        condition: log.condition,
        start_position: 0,
        entries: log
            .records
            .iter()
            .map(|r| GridEntry { time_step: r.time_step, position: r.position_after, action: r.action })
            .collect(),
        crossing_time: log.crossing_time.map(u32::from),
        road_entry_time: None,
    }
}

/// Grid position of the first stop action, if any.
pub fn first_wait_position(trace: &GridTrace) -> Option<Position> {
    trace.entries.iter().find(|e| e.action == Action::Stop).map(|e| e.position)
}

/// True iff the trace contains no stop action before it ends (by crossing or
/// by running out the clock).
pub fn never_waited(trace: &GridTrace) -> bool {
    !trace.entries.iter().any(|e| e.action == Action::Stop)
}
