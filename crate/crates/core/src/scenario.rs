//! Scenario catalog: the six eHMI x AV conditions, the spatial-temporal grid,
//! counterbalanced trial orders, and the clip-tree manifest the simulator
//! resolves stimuli from.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Position = u8;
pub type TimeStep = u8;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("clip root '{0}' does not exist")]
    MissingRoot(PathBuf),
    #[error("clip tree is incomplete: {}", .problems.join("; "))]
    ManifestInvalid { problems: Vec<String> },
    #[error("no clip for condition {condition} at position {position}, time {time_step}")]
    ClipOutOfRange { condition: Condition, position: Position, time_step: TimeStep },
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("manifest cache: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("manifest cache: {0}")]
    CacheFormat(#[from] serde_json::Error),
}

/// The pedestrian action vocabulary shared by the simulator, the mock
/// policies, and discretized human traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Forward,
    Stop,
    Backward,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Action::Forward => "forward",
            Action::Stop => "stop",
            Action::Backward => "backward",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward" => Ok(Action::Forward),
            "stop" => Ok(Action::Stop),
            "backward" => Ok(Action::Backward),
            other => Err(format!("unknown action '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ehmi {
    Light,
    Eyes,
    None,
}

impl Ehmi {
    /// Fragment used in clip directory names.
    pub fn dir_fragment(self) -> &'static str {
        match self {
            Ehmi::Light => "light",
            Ehmi::Eyes => "eye",
            Ehmi::None => "no-ehmi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AvBehavior {
    Stop,
    Pass,
}

impl AvBehavior {
    pub fn dir_fragment(self) -> &'static str {
        match self {
            AvBehavior::Stop => "stop",
            AvBehavior::Pass => "pass",
        }
    }
}

/// One experimental condition: which eHMI the vehicle shows and whether it
/// yields or passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub ehmi: Ehmi,
    pub av: AvBehavior,
}

impl Condition {
    pub const fn new(ehmi: Ehmi, av: AvBehavior) -> Self {
        Condition { ehmi, av }
    }

    /// Directory name in the clip tree, e.g. `no-ehmi_stop`.
    pub fn dir_name(self) -> String {
        format!("{}_{}", self.ehmi.dir_fragment(), self.av.dir_fragment())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.dir_name())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        enumerate_conditions()
            .into_iter()
            .find(|c| c.dir_name() == s)
            .ok_or_else(|| format!("unknown condition '{s}'"))
    }
}

/// All six conditions in canonical order: eHMI-major, stop before pass.
pub fn enumerate_conditions() -> [Condition; 6] {
    let mut out = [Condition::new(Ehmi::Light, AvBehavior::Stop); 6];
    let mut i = 0;
    for ehmi in [Ehmi::Light, Ehmi::Eyes, Ehmi::None] {
        for av in [AvBehavior::Stop, AvBehavior::Pass] {
            out[i] = Condition::new(ehmi, av);
            i += 1;
        }
    }
    out
}

/// Spatial-temporal layout of a trial: marker positions along the approach
/// path and the decision clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of marked standing positions (road edge is the last one).
    pub positions: u8,
    /// Spacing between adjacent markers, meters.
    pub interval_m: f64,
    /// Distance from the start marker to the road edge, meters.
    pub span_m: f64,
    /// Seconds the vehicle takes to reach the crossing point.
    pub approach_s: u8,
    /// Seconds between decisions.
    pub decision_period_s: u8,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { positions: 5, interval_m: 0.8, span_m: 3.2, approach_s: 8, decision_period_s: 1 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.positions < 2 {
            return Err(ScenarioError::BadGrid("need at least 2 positions".into()));
        }
        let span = self.interval_m * f64::from(self.positions - 1);
        if (span - self.span_m).abs() > 1e-9 {
            return Err(ScenarioError::BadGrid(format!(
                "interval {} x {} gaps does not span {}",
                self.interval_m,
                self.positions - 1,
                self.span_m
            )));
        }
        if self.decision_period_s == 0 || self.approach_s % self.decision_period_s != 0 {
            return Err(ScenarioError::BadGrid("decision period must divide approach duration".into()));
        }
        if self.approach_s / self.decision_period_s != 8 {
            return Err(ScenarioError::BadGrid("approach must cover 8 decision periods".into()));
        }
        Ok(())
    }

    /// Last decision tick; decisions happen at 0..=last_time_step().
    pub fn last_time_step(&self) -> TimeStep {
        self.approach_s / self.decision_period_s
    }

    /// Grid index meaning "stepped onto the road".
    pub fn crossed_position(&self) -> Position {
        self.positions
    }

    /// Distance of marker `k` from the start, meters.
    pub fn marker_distance(&self, k: Position) -> f64 {
        f64::from(k) * self.interval_m
    }
}

/// Williams-balanced 6x6 Latin square rows, one per participant, assigned
/// cyclically. Every row contains each condition once; over any participant
/// count the per-ordinal-position condition counts differ by at most one.
pub fn build_trial_orders(n_participants: usize) -> Vec<[Condition; 6]> {
    let conditions = enumerate_conditions();
    let square = williams_rows(6);
    (0..n_participants)
        .map(|i| {
            let row = &square[i % 6];
            let mut order = [conditions[0]; 6];
            for (slot, &sym) in order.iter_mut().zip(row) {
                *slot = conditions[sym];
            }
            order
        })
        .collect()
}

/// First-order carryover-balanced Latin square (Williams construction,
/// even order): row 0 is 0, 1, n-1, 2, n-2, ...; later rows shift cyclically.
fn williams_rows(n: usize) -> Vec<Vec<usize>> {
    let mut first = Vec::with_capacity(n);
    let mut lo = 1;
    let mut hi = n - 1;
    first.push(0);
    while first.len() < n {
        first.push(lo);
        lo += 1;
        if first.len() < n {
            first.push(hi);
            hi -= 1;
        }
    }
    (0..n).map(|r| first.iter().map(|&x| (x + r) % n).collect()).collect()
}

/// One persona's session: the six conditions in presentation order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialPlan {
    pub persona: String,
    pub conditions: Vec<Condition>,
    /// Run one unrecorded warm-up trial before the six recorded ones.
    pub practice: bool,
}

/// Binds sorted persona ids to counterbalanced orders.
pub fn assign_trial_plans(ids: &[String], practice: bool) -> Vec<TrialPlan> {
    let orders = build_trial_orders(ids.len());
    ids.iter()
        .zip(orders)
        .map(|(id, order)| TrialPlan { persona: id.clone(), conditions: order.to_vec(), practice })
        .collect()
}

/// A stimulus clip: the file shown for one (condition, position, time) cell
/// plus its extracted frames in playback order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRef {
    pub path: PathBuf,
    pub frames: Vec<PathBuf>,
}

impl ClipRef {
    pub fn frame_dir(&self) -> PathBuf {
        let mut name = self.path.file_name().unwrap_or_default().to_os_string();
        name.push(".frames");
        self.path.with_file_name(name)
    }
}

/// Relative clip location inside the tree for one grid cell.
pub fn clip_rel_path(condition: Condition, position: Position, time_step: TimeStep) -> String {
    format!("{}/split/pos{position}_time{time_step}.mp4", condition.dir_name())
}

fn source_rel_path(condition: Condition, position: Position) -> String {
    format!("{}/pos{position}.mp4", condition.dir_name())
}

/// Validated view of a clip tree. A cell (p, t) exists for every reachable
/// pair p <= t <= last tick; the agent starts at 0 and moves at most one
/// marker per tick, so nothing else is ever requested.
#[derive(Debug, Clone)]
pub struct ClipManifest {
    pub root: PathBuf,
    pub grid: GridSpec,
    entries: BTreeMap<(Condition, Position, TimeStep), ClipRef>,
}

fn reachable_cells(grid: &GridSpec) -> impl Iterator<Item = (Position, TimeStep)> + '_ {
    let last_marker = grid.positions - 1;
    let last_t = grid.last_time_step();
    (0..=last_marker).flat_map(move |p| (p..=last_t).map(move |t| (p, t)))
}

impl ClipManifest {
    /// Walks and validates a real clip tree. Problems are collected
    /// exhaustively so one pass reports everything missing. A clip whose
    /// frame directory exists but is empty is an error; a clip with no frame
    /// directory yet simply has no frames (extraction is lazy).
    pub fn load(root: &Path, grid: GridSpec) -> Result<Self, ScenarioError> {
        grid.validate()?;
        if !root.is_dir() {
            return Err(ScenarioError::MissingRoot(root.to_path_buf()));
        }
        let mut problems = Vec::new();
        let mut entries = BTreeMap::new();
        for condition in enumerate_conditions() {
            let dir = root.join(condition.dir_name());
            if !dir.is_dir() {
                problems.push(format!("missing condition directory {}", condition.dir_name()));
                continue;
            }
            for p in 0..grid.positions {
                let source = root.join(source_rel_path(condition, p));
                if !source.is_file() {
                    problems.push(format!("missing source video {}", source_rel_path(condition, p)));
                }
            }
            for (p, t) in reachable_cells(&grid) {
                let rel = clip_rel_path(condition, p, t);
                let path = root.join(&rel);
                if !path.is_file() {
                    problems.push(format!("missing clip {rel}"));
                    continue;
                }
                let clip = ClipRef { path, frames: Vec::new() };
                let frames = match list_frames(&clip.frame_dir()) {
                    Ok(frames) => frames,
                    Err(e) => {
                        problems.push(e);
                        continue;
                    }
                };
                entries.insert((condition, p, t), ClipRef { frames, ..clip });
            }
        }
        if !problems.is_empty() {
            return Err(ScenarioError::ManifestInvalid { problems });
        }
        Ok(ClipManifest { root: root.to_path_buf(), grid, entries })
    }

    /// A manifest whose clip and frame paths follow the tree layout without
    /// touching disk. Mock-backend runs resolve cells against this; anything
    /// that actually reads the files will fail, which is the point.
    pub fn synthetic(root: &Path, grid: GridSpec) -> Result<Self, ScenarioError> {
        grid.validate()?;
        let mut entries = BTreeMap::new();
        for condition in enumerate_conditions() {
            for (p, t) in reachable_cells(&grid) {
                let path = root.join(clip_rel_path(condition, p, t));
                let mut clip = ClipRef { path, frames: Vec::new() };
                let dir = clip.frame_dir();
                clip.frames = (1..=24).map(|i| dir.join(format!("{i:03}.jpg"))).collect();
                entries.insert((condition, p, t), clip);
            }
        }
        Ok(ClipManifest { root: root.to_path_buf(), grid, entries })
    }

    pub fn resolve_clip(
        &self,
        condition: Condition,
        position: Position,
        time_step: TimeStep,
    ) -> Result<&ClipRef, ScenarioError> {
        self.entries
            .get(&(condition, position, time_step))
            .ok_or(ScenarioError::ClipOutOfRange { condition, position, time_step })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(Condition, Position, TimeStep), &ClipRef)> {
        self.entries.iter()
    }

    /// Re-lists frame directories, picking up newly extracted frames.
    pub fn refresh_frames(&mut self) -> Result<(), ScenarioError> {
        let mut problems = Vec::new();
        for clip in self.entries.values_mut() {
            match list_frames(&clip.frame_dir()) {
                Ok(frames) => clip.frames = frames,
                Err(e) => problems.push(e),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::ManifestInvalid { problems })
        }
    }

    /// Clips still without frames, in manifest order.
    pub fn missing_frames(&self) -> Vec<&ClipRef> {
        self.entries.values().filter(|c| c.frames.is_empty()).collect()
    }

    pub fn cache_path(root: &Path) -> PathBuf {
        root.join("manifest_cache.json")
    }

    pub fn write_cache(&self) -> Result<(), ScenarioError> {
        let rows: Vec<CacheRow> = self
            .entries
            .iter()
            .map(|(&(condition, position, time_step), clip)| CacheRow {
                condition,
                position,
                time_step,
                clip: clip.path.clone(),
                frame_count: clip.frames.len(),
            })
            .collect();
        let cache = ManifestCache { grid: self.grid.clone(), clips: rows };
        fs::write(Self::cache_path(&self.root), serde_json::to_vec_pretty(&cache)?)?;
        Ok(())
    }

    /// Rebuilds a manifest from its cache file without walking the tree.
    pub fn from_cache(root: &Path) -> Result<Self, ScenarioError> {
        let raw = fs::read(Self::cache_path(root))?;
        let cache: ManifestCache = serde_json::from_slice(&raw)?;
        cache.grid.validate()?;
        let mut entries = BTreeMap::new();
        for row in cache.clips {
            let clip = ClipRef { path: row.clip, frames: Vec::new() };
            let dir = clip.frame_dir();
            let frames = (1..=row.frame_count).map(|i| dir.join(format!("{i:03}.jpg"))).collect();
            entries.insert((row.condition, row.position, row.time_step), ClipRef { frames, ..clip });
        }
        Ok(ClipManifest { root: root.to_path_buf(), grid: cache.grid, entries })
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestCache {
    grid: GridSpec,
    clips: Vec<CacheRow>,
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    condition: Condition,
    position: Position,
    time_step: TimeStep,
    clip: PathBuf,
    frame_count: usize,
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, String> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("unreadable frame directory {}: {e}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    if frames.is_empty() {
        return Err(format!("frame directory {} is empty", dir.display()));
    }
    frames.sort();
    Ok(frames)
}
