//! Batch orchestration: persona construction, counterbalanced trial
//! sessions, human-annotation ingest, and the comparison report, all rooted
//! in one output directory. Every command is resumable; finished work is
//! detected on disk and skipped, and all file writes go through a rename so
//! an interrupted run never leaves a half-written artifact.

use crate::oracle::{build_oracle, Oracle, OracleConfig, OracleError};
use crate::persona::{
    compose_persona_instruction, parse_persona_document, validate_persona, PersonaContext,
    PersonaError, PersonaProfile, QuestionnaireResponse,
};
use crate::scenario::{
    assign_trial_plans, ClipManifest, Condition, GridSpec, ScenarioError, TrialPlan,
};
use crate::sim::{
    administer_post_study, administer_post_trial, assemble_memory, run_trial, MemoryDocument,
    SimError, TrialLog, TrialPolicy,
};
use crate::stats::{
    emit_report, CohortDataset, ReportBundle, ReportFormat, StatsError,
};
use crate::trajectory::{
    discretize, parse_annotation_export, trace_from_log, GridTrace, TrajectoryError,
    DEFAULT_STOP_THRESHOLD,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything a run needs, serializable so a config file and the stored
/// run record share one shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// All artifacts land under here; nothing is written outside it.
    pub out_dir: PathBuf,
    /// Stimulus tree with real clips. Absent means a synthetic manifest,
    /// which only the mock backend can serve.
    pub clip_root: Option<PathBuf>,
    pub grid: GridSpec,
    pub oracle: OracleConfig,
    pub seed: u64,
    /// Concurrent persona sessions during `sim run`.
    pub jobs: usize,
    /// Run one unrecorded warm-up trial before the six recorded ones.
    pub practice: bool,
    pub parse_retries: u32,
    /// Tick-speed floor for human discretization, m/s.
    pub stop_threshold: f64,
    /// Permutations per effect in the comparison report.
    pub n_perm: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("workbench_out"),
            clip_root: None,
            grid: GridSpec::default(),
            oracle: OracleConfig::default(),
            seed: 7,
            jobs: 1,
            practice: true,
            parse_retries: 3,
            stop_threshold: DEFAULT_STOP_THRESHOLD,
            n_perm: 2000,
        }
    }
}

impl RunConfig {
    pub fn personas_dir(&self) -> PathBuf {
        self.out_dir.join("personas")
    }

    pub fn sims_dir(&self) -> PathBuf {
        self.out_dir.join("sims")
    }

    pub fn human_dir(&self) -> PathBuf {
        self.out_dir.join("human")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }

    pub fn validate(&self) -> Result<(), WorkbenchError> {
        self.grid.validate()?;
        self.oracle.validate()?;
        if self.jobs == 0 {
            return Err(WorkbenchError::Config("jobs must be at least 1".into()));
        }
        if self.n_perm == 0 {
            return Err(WorkbenchError::Config("n_perm must be at least 1".into()));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(WorkbenchError::Config("stop_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Write-then-rename so readers only ever see complete files.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed: a hash of the global seed and the trial's identity, so
/// replays of one trial never depend on which other trials ran. Ordinal 0
/// is the practice slot.
pub fn trial_seed(global: u64, persona: &str, condition: Condition, ordinal: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ splitmix64(global);
    for b in persona
        .bytes()
        .chain([b'/'])
        .chain(condition.dir_name().bytes())
        .chain([b'/'])
        .chain(ordinal.to_string().bytes())
    {
        h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
    }
    splitmix64(h)
}

/// One appended record per command invocation in `<out>/run_meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub config: RunConfig,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn append_run_record(config: &RunConfig, command: &str, started: u64) -> Result<(), WorkbenchError> {
    let path = config.out_dir.join("run_meta.json");
    let mut records: Vec<RunRecord> = if path.is_file() {
        serde_json::from_str(&fs::read_to_string(&path)?)?
    } else {
        Vec::new()
    };
    records.push(RunRecord {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        config: config.clone(),
    });
    fs::create_dir_all(&config.out_dir)?;
    write_atomic(&path, serde_json::to_string_pretty(&records)?.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PersonaBuildOutcome {
    pub built: Vec<String>,
    pub skipped: Vec<String>,
    /// (participant id, error) for responses that could not be turned into
    /// a stored persona. The rest of the batch still completes.
    pub failures: Vec<(String, String)>,
    pub dir: PathBuf,
}

/// Builds one persona file per questionnaire response. A response whose
/// persona file already exists and validates is skipped, so re-runs only
/// fill gaps.
pub fn cmd_persona_build(
    config: &RunConfig,
    responses_path: &Path,
) -> Result<PersonaBuildOutcome, WorkbenchError> {
    config.validate()?;
    let started = unix_now();
    let raw = fs::read_to_string(responses_path)?;
    let responses: Vec<QuestionnaireResponse> = serde_json::from_str(&raw)?;
    if responses.is_empty() {
        return Err(WorkbenchError::Config(format!(
            "no questionnaire responses in {}",
            responses_path.display()
        )));
    }
    let mut names = BTreeSet::new();
    for resp in &responses {
        if !names.insert(resp.persona_name().to_string()) {
            return Err(WorkbenchError::Config(format!(
                "duplicate persona name '{}' in questionnaire data",
                resp.persona_name()
            )));
        }
    }

    let oracle = build_oracle(&config.oracle)?;
    let dir = config.personas_dir();
    fs::create_dir_all(&dir)?;
    let ctx = PersonaContext::default();
    let mut outcome = PersonaBuildOutcome {
        built: Vec::new(),
        skipped: Vec::new(),
        failures: Vec::new(),
        dir: dir.clone(),
    };
    for resp in &responses {
        let name = resp.persona_name().to_string();
        let path = dir.join(format!("{name}.json"));
        if let Ok(existing) = fs::read_to_string(&path) {
            if parse_persona_document(&existing)
                .map(|p| validate_persona(&p).is_empty() && p.name == name)
                .unwrap_or(false)
            {
                outcome.skipped.push(name);
                continue;
            }
        }
        let built = compose_persona_instruction(resp, &ctx)
            .map_err(WorkbenchError::from)
            .and_then(|instruction| {
                crate::oracle::generate_persona(oracle.as_ref(), &instruction)
                    .map_err(WorkbenchError::from)
            });
        match built {
            Ok(mut profile) => {
                // The anonymized id is authoritative; the backend may
                // paraphrase the name it was given.
                profile.name = name.clone();
                write_atomic(&path, profile.to_document_string().as_bytes())?;
                outcome.built.push(name);
            }
            Err(e) => outcome.failures.push((name, e.to_string())),
        }
    }
    append_run_record(config, "persona build", started)?;
    Ok(outcome)
}

/// Loads every `*.json` under the persona directory, sorted by file name.
/// A file that does not parse as a valid persona fails the whole load;
/// sessions must not silently run with a subset.
pub fn load_personas(dir: &Path) -> Result<Vec<PersonaProfile>, WorkbenchError> {
    if !dir.is_dir() {
        return Err(WorkbenchError::Config(format!(
            "persona directory {} does not exist",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut profiles = Vec::with_capacity(paths.len());
    for path in paths {
        let profile = parse_persona_document(&fs::read_to_string(&path)?)?;
        let violations = validate_persona(&profile);
        if !violations.is_empty() {
            return Err(WorkbenchError::Config(format!(
                "persona file {} is invalid: {}",
                path.display(),
                violations
                    .iter()
                    .map(|v| format!("{}: {}", v.invariant, v.detail))
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
        profiles.push(profile);
    }
    profiles.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(profiles)
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionOutcome {
    pub persona: String,
    pub trials_run: usize,
    pub trials_skipped: usize,
    pub interviewed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRunOutcome {
    pub sessions: Vec<SessionOutcome>,
    /// (persona, error) for sessions that aborted; completed trials of an
    /// aborted session stay on disk and are resumed next run.
    pub failures: Vec<(String, String)>,
}

fn trial_dir_name(ordinal: usize, condition: Condition) -> String {
    format!("{ordinal}_{}", condition.dir_name())
}

fn run_session(
    config: &RunConfig,
    profile: &PersonaProfile,
    plan: &TrialPlan,
    oracle: &dyn Oracle,
    manifest: &ClipManifest,
) -> Result<SessionOutcome, WorkbenchError> {
    let session_dir = config.sims_dir().join(&plan.persona);
    fs::create_dir_all(&session_dir)?;
    let policy = TrialPolicy { parse_retries: config.parse_retries };
    if plan.practice {
        let seed = trial_seed(config.seed, &plan.persona, plan.conditions[0], 0);
        run_trial(profile, plan.conditions[0], oracle, &config.oracle, manifest, &policy, seed)?;
    }
    let mut memories: Vec<MemoryDocument> = Vec::with_capacity(plan.conditions.len());
    let mut trials_run = 0;
    let mut trials_skipped = 0;
    for (i, &condition) in plan.conditions.iter().enumerate() {
        let ordinal = i + 1;
        let trial_dir = session_dir.join(trial_dir_name(ordinal, condition));
        fs::create_dir_all(&trial_dir)?;
        let log_path = trial_dir.join("simulation_log.json");
        let (mut log, fresh) = match fs::read_to_string(&log_path) {
            Ok(existing) => {
                trials_skipped += 1;
                (serde_json::from_str::<TrialLog>(&existing)?, false)
            }
            Err(_) => {
                let seed = trial_seed(config.seed, &plan.persona, condition, ordinal as u64);
                let log = run_trial(profile, condition, oracle, &config.oracle, manifest, &policy, seed)?;
                trials_run += 1;
                (log, true)
            }
        };
        let memory = assemble_memory(&log, &trial_dir)?;
        let mut dirty = fresh;
        if log.ratings.is_none() {
            log.ratings =
                Some(administer_post_trial(profile, &memory, ordinal, oracle, config.parse_retries)?);
            dirty = true;
        }
        if dirty {
            write_atomic(&log_path, serde_json::to_string_pretty(&log)?.as_bytes())?;
            write_atomic(&trial_dir.join("memory.txt"), memory.text.as_bytes())?;
        }
        memories.push(memory);
    }
    let interview_path = session_dir.join("interview.json");
    let interviewed = if interview_path.is_file() {
        false
    } else {
        let answers = administer_post_study(profile, &memories, oracle, config.parse_retries)?;
        write_atomic(&interview_path, serde_json::to_string_pretty(&answers)?.as_bytes())?;
        true
    };
    Ok(SessionOutcome {
        persona: plan.persona.clone(),
        trials_run,
        trials_skipped,
        interviewed,
    })
}

/// Runs every persona through its six counterbalanced trials plus ratings
/// and the closing interview. Sessions are independent, so `jobs` of them
/// run concurrently; outputs land under `<out>/sims/<persona>/`.
pub fn cmd_sim_run(config: &RunConfig) -> Result<SimRunOutcome, WorkbenchError> {
    config.validate()?;
    let started = unix_now();
    let profiles = load_personas(&config.personas_dir())?;
    if profiles.is_empty() {
        return Err(WorkbenchError::Config(format!(
            "no personas under {}",
            config.personas_dir().display()
        )));
    }
    let manifest = match &config.clip_root {
        Some(root) => ClipManifest::load(root, config.grid.clone())?,
        None => ClipManifest::synthetic(&config.out_dir.join("clips"), config.grid.clone())?,
    };
    let oracle = build_oracle(&config.oracle)?;
    let ids: Vec<String> = profiles.iter().map(|p| p.name.clone()).collect();
    let plans = assign_trial_plans(&ids, config.practice);

    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..plans.len()).collect());
    let sessions: Mutex<Vec<SessionOutcome>> = Mutex::new(Vec::new());
    let failures: Mutex<Vec<(String, String)>> = Mutex::new(Vec::new());
    let workers = config.jobs.min(plans.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some(i) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                match run_session(config, &profiles[i], &plans[i], oracle.as_ref(), &manifest) {
                    Ok(outcome) => sessions.lock().unwrap().push(outcome),
                    Err(e) => failures
                        .lock()
                        .unwrap()
                        .push((plans[i].persona.clone(), e.to_string())),
                }
            });
        }
    });
    let mut sessions = sessions.into_inner().unwrap();
    sessions.sort_by(|a, b| a.persona.cmp(&b.persona));
    let mut failures = failures.into_inner().unwrap();
    failures.sort();
    append_run_record(config, "sim run", started)?;
    Ok(SimRunOutcome { sessions, failures })
}

/// Replay check: drives a stored log's action sequence back through the
/// simulator as a script and reports whether the summary reproduces.
#[derive(Debug, Clone, Serialize)]
pub struct ReplayOutcome {
    pub persona: String,
    pub condition: Condition,
    pub matched: bool,
    pub summary: Vec<String>,
}

pub fn cmd_sim_replay(config: &RunConfig, log_path: &Path) -> Result<ReplayOutcome, WorkbenchError> {
    let stored: TrialLog = serde_json::from_str(&fs::read_to_string(log_path)?)?;
    if stored.records.is_empty() {
        return Err(WorkbenchError::Config(format!(
            "log {} has no decisions to replay",
            log_path.display()
        )));
    }
    let script = stored
        .records
        .iter()
        .map(|r| r.action.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let oracle_config = OracleConfig {
        backend: crate::oracle::Backend::Mock,
        mock_policy: format!("scripted:{script}"),
        ..OracleConfig::default()
    };
    let oracle = build_oracle(&oracle_config)?;
    let manifest = match &config.clip_root {
        Some(root) => ClipManifest::load(root, config.grid.clone())?,
        None => ClipManifest::synthetic(&config.out_dir.join("clips"), config.grid.clone())?,
    };
    let profile = PersonaProfile {
        name: stored.persona.clone(),
        description: "replay shell".into(),
        decision_criteria: vec!["follow the recorded actions".into()],
    };
    let policy = TrialPolicy { parse_retries: 0 };
    let replayed = run_trial(
        &profile,
        stored.condition,
        oracle.as_ref(),
        &oracle_config,
        &manifest,
        &policy,
        stored.seed,
    )?;
    Ok(ReplayOutcome {
        persona: stored.persona,
        condition: stored.condition,
        matched: replayed.summary == stored.summary,
        summary: replayed.summary,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestOutcome {
    pub traces: usize,
    pub failures: Vec<(String, String)>,
    pub output: PathBuf,
}

/// Discretizes every annotation export under `annotations_dir` onto the
/// grid and stores the combined traces at `<out>/human/grid_traces.json`.
pub fn cmd_ingest(config: &RunConfig, annotations_dir: &Path) -> Result<IngestOutcome, WorkbenchError> {
    config.validate()?;
    let started = unix_now();
    if !annotations_dir.is_dir() {
        return Err(WorkbenchError::Config(format!(
            "annotation directory {} does not exist",
            annotations_dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(annotations_dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(WorkbenchError::Config(format!(
            "no annotation exports under {}",
            annotations_dir.display()
        )));
    }
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for path in &paths {
        match parse_annotation_export(path) {
            Ok(traj) => traces.push(discretize(&traj, config.stop_threshold)),
            Err(e) => failures.push((path.display().to_string(), e.to_string())),
        }
    }
    let dir = config.human_dir();
    fs::create_dir_all(&dir)?;
    let output = dir.join("grid_traces.json");
    write_atomic(&output, serde_json::to_string_pretty(&traces)?.as_bytes())?;
    append_run_record(config, "ingest", started)?;
    Ok(IngestOutcome { traces: traces.len(), failures, output })
}

/// Collects every stored trial log under `<out>/sims/`, sorted by persona
/// then trial directory, so downstream order never depends on readdir.
pub fn load_trial_logs(sims_dir: &Path) -> Result<Vec<TrialLog>, WorkbenchError> {
    let mut logs = Vec::new();
    if !sims_dir.is_dir() {
        return Ok(logs);
    }
    let mut session_dirs: Vec<PathBuf> = fs::read_dir(sims_dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    session_dirs.sort();
    for session in session_dirs {
        let mut trial_dirs: Vec<PathBuf> = fs::read_dir(&session)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        trial_dirs.sort();
        for trial in trial_dirs {
            let log_path = trial.join("simulation_log.json");
            if log_path.is_file() {
                logs.push(serde_json::from_str(&fs::read_to_string(&log_path)?)?);
            }
        }
    }
    Ok(logs)
}

fn load_grid_traces(human_dir: &Path) -> Result<Vec<GridTrace>, WorkbenchError> {
    let path = human_dir.join("grid_traces.json");
    if !path.is_file() {
        return Ok(Vec::new());
    }
    Ok(serde_json::from_str(&fs::read_to_string(&path)?)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareOutcome {
    pub files: Vec<PathBuf>,
    pub notices: Vec<String>,
}

/// Builds the cohort dataset from whatever the output directory holds
/// (simulated sessions, ingested human traces, or both) and writes the
/// comparison report. With one cohort the group tests are skipped and
/// listed in `notices`; that is a successful outcome, not an error.
pub fn cmd_compare(
    config: &RunConfig,
    formats: &BTreeSet<ReportFormat>,
) -> Result<CompareOutcome, WorkbenchError> {
    config.validate()?;
    let started = unix_now();
    let logs = load_trial_logs(&config.sims_dir())?;
    let human_traces = load_grid_traces(&config.human_dir())?;
    if logs.is_empty() && human_traces.is_empty() {
        return Err(WorkbenchError::Config(format!(
            "nothing to compare under {}: run `sim run` or `ingest` first",
            config.out_dir.display()
        )));
    }
    let dataset = CohortDataset::from_trial_logs(&logs)?
        .merge(CohortDataset::from_grid_traces(&human_traces)?)?;
    let vlm_traces: Vec<GridTrace> = logs.iter().map(trace_from_log).collect();
    let bundle = ReportBundle::compute(&dataset, &human_traces, &vlm_traces, config.n_perm, config.seed)?;
    let files = emit_report(&bundle, &config.report_dir(), formats)?;
    append_run_record(config, "compare", started)?;
    Ok(CompareOutcome { files, notices: bundle.notices })
}
