//! The per-second decision loop: keeps pedestrian grid state, queries the
//! oracle with frames and a rendered status, parses replies, logs the trial,
//! assembles memory, and administers the questionnaires.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{
    decide, render_decide_prompt, ChatTurn, InterviewRequest, Oracle, OracleConfig, OracleError,
    OracleRequest, RateRequest, Role,
};
use crate::persona::PersonaProfile;
use crate::scenario::{Action, ClipManifest, Condition, Position, ScenarioError, TimeStep};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("unusable {context} reply after {attempts} attempts: {detail}")]
    BadReply { context: &'static str, attempts: u32, detail: String },
    #[error("trial log has no records")]
    EmptyLog,
    #[error("post-study interview needs all 6 trial memories, have {have}")]
    IncompleteSession { have: usize },
    #[error("log file: {0}")]
    Io(#[from] std::io::Error),
    #[error("log format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Renders the grid line the persona sees: five cells, '*' marks the
/// pedestrian, road suffix. Position 5 means on the road.
pub fn render_status(position: Position) -> String {
    assert!(position <= 5, "position {position} outside the grid");
    if position == 5 {
        return "o-o-o-o-o-|*ROAD".to_string();
    }
    let cells: Vec<&str> = (0..5).map(|i| if i == position { "*" } else { "o" }).collect();
    format!("{}-|ROAD", cells.join("-"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDecision {
    pub action: Action,
    pub reason: String,
    pub confidence: u8,
    pub trust: u8,
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    if line.len() >= label.len() && line[..label.len()].eq_ignore_ascii_case(label) {
        Some(&line[label.len()..])
    } else {
        None
    }
}

fn parse_score(rest: &str) -> Result<(u8, String), String> {
    let rest = rest.trim();
    let slash = rest.find("/5").ok_or_else(|| format!("rating must look like 'x/5', got '{rest}'"))?;
    let value: u8 = rest[..slash]
        .trim()
        .parse()
        .map_err(|_| format!("unparseable rating '{}'", &rest[..slash]))?;
    if !(1..=5).contains(&value) {
        return Err(format!("rating {value}/5 out of range"));
    }
    let note = rest[slash + 2..].trim_start_matches([' ', '-']).trim().to_string();
    Ok((value, note))
}

/// Extracts the four labeled lines of a decision reply. The caller owns the
/// retry policy; the error text names the first missing or malformed piece.
pub fn parse_decision_reply(text: &str) -> Result<ParsedDecision, String> {
    let mut action = None;
    let mut reason = None;
    let mut confidence = None;
    let mut trust = None;
    for raw in text.lines() {
        let line = raw.trim();
        if action.is_none() {
            if let Some(rest) = strip_label(line, "Decision:") {
                let word = rest
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .trim_end_matches(['.', ',', '!'])
                    .to_lowercase();
                action = Some(
                    word.parse::<Action>()
                        .map_err(|_| format!("unrecognized action '{}'", rest.trim()))?,
                );
                continue;
            }
        }
        if reason.is_none() {
            if let Some(rest) = strip_label(line, "Reason:") {
                reason = Some(rest.trim().to_string());
                continue;
            }
        }
        if confidence.is_none() {
            if let Some(rest) = strip_label(line, "Confidence:") {
                confidence = Some(parse_score(rest).map_err(|e| format!("confidence: {e}"))?.0);
                continue;
            }
        }
        if trust.is_none() {
            if let Some(rest) = strip_label(line, "Trust:") {
                trust = Some(parse_score(rest).map_err(|e| format!("trust: {e}"))?.0);
            }
        }
    }
    Ok(ParsedDecision {
        action: action.ok_or("missing 'Decision:' line")?,
        reason: reason.ok_or("missing 'Reason:' line")?,
        confidence: confidence.ok_or("missing 'Confidence:' line")?,
        trust: trust.ok_or("missing 'Trust:' line")?,
    })
}

/// Parses a questionnaire reply of the form "Rating: x/5 - reason".
pub fn parse_rating_reply(text: &str) -> Result<(u8, String), String> {
    for raw in text.lines() {
        let line = raw.trim();
        let rest = strip_label(line, "Rating:").unwrap_or(line);
        if rest.contains("/5") {
            return parse_score(rest);
        }
    }
    Err(format!("no 'x/5' rating found in '{}'", text.trim()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time_step: TimeStep,
    pub position_before: Position,
    pub action: Action,
    pub reason: String,
    pub confidence: u8,
    pub trust: u8,
    pub position_after: Position,
    /// Rendered grid after the move; the "New status" line.
    pub status_string: String,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub position: Position,
    pub time_step: TimeStep,
    pub history: Vec<DecisionRecord>,
}

impl Default for SimState {
    fn default() -> Self {
        Self::new()
    }
}

impl SimState {
    pub fn new() -> Self {
        SimState { position: 0, time_step: 0, history: Vec::new() }
    }

    pub fn crossed(&self) -> bool {
        self.position >= 5
    }

    /// Applies one parsed decision: forward advances a marker, stop holds,
    /// backward retreats clamped at the start. Panics if the trial is over.
    pub fn apply(&mut self, decision: &ParsedDecision) -> &DecisionRecord {
        assert!(self.position <= 4, "cannot act on a crossed state");
        assert!(self.time_step <= 8, "decision clock exhausted");
        let before = self.position;
        let after = match decision.action {
            Action::Forward => before + 1,
            Action::Stop => before,
            Action::Backward => before.saturating_sub(1),
        };
        self.history.push(DecisionRecord {
            time_step: self.time_step,
            position_before: before,
            action: decision.action,
            reason: decision.reason.clone(),
            confidence: decision.confidence,
            trust: decision.trust,
            position_after: after,
            status_string: render_status(after),
        });
        self.position = after;
        self.time_step += 1;
        self.history.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRatings {
    pub q1_confidence: u8,
    pub q1_reason: String,
    pub q2_trust: u8,
    pub q2_reason: String,
}

/// One clip viewed during the trial paired with what was decided while (and
/// right after) watching it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub time_step: TimeStep,
    pub clip: PathBuf,
    pub status: String,
    pub action: Action,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representative_frame: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub persona: String,
    pub condition: Condition,
    pub records: Vec<DecisionRecord>,
    /// "Time N: <status> (moved from A to B - action)" per record.
    pub summary: Vec<String>,
    pub crossed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_time: Option<TimeStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<TrialRatings>,
    pub memory: Vec<MemoryEntry>,
    pub backend: String,
    pub temperature: f64,
    pub seed: u64,
}

pub fn summary_line(record: &DecisionRecord) -> String {
    format!(
        "Time {}: {} (moved from {} to {} - {})",
        record.time_step, record.status_string, record.position_before, record.position_after, record.action
    )
}

pub fn summary_lines(records: &[DecisionRecord]) -> Vec<String> {
    records.iter().map(summary_line).collect()
}

/// The second during which the agent stepped onto the road: the forward move
/// off the last marker at tick t covers (t, t+1].
pub fn crossing_time(log: &TrialLog) -> Option<TimeStep> {
    log.records
        .iter()
        .find(|r| r.position_before == 4 && r.action == Action::Forward)
        .map(|r| r.time_step + 1)
}

#[derive(Debug, Clone)]
pub struct TrialPolicy {
    /// Re-queries allowed after an unparseable reply, format reminder attached.
    pub parse_retries: u32,
}

impl Default for TrialPolicy {
    fn default() -> Self {
        TrialPolicy { parse_retries: 3 }
    }
}

/// Runs one trial: resolve clip, query, parse, apply, until the agent crosses
/// or the ninth decision completes. The returned log is self-contained.
pub fn run_trial(
    profile: &PersonaProfile,
    condition: Condition,
    oracle: &dyn Oracle,
    oracle_config: &OracleConfig,
    manifest: &ClipManifest,
    policy: &TrialPolicy,
    seed: u64,
) -> Result<TrialLog, SimError> {
    assert_eq!(manifest.grid.positions, 5, "status grammar is defined for the 5-marker grid");
    let system = profile.system_prompt();
    let mut state = SimState::new();
    let mut dialog: Vec<ChatTurn> = Vec::new();
    let mut memory: Vec<MemoryEntry> = Vec::new();
    for t in 0..=manifest.grid.last_time_step() {
        let clip = manifest.resolve_clip(condition, state.position, t)?;
        let status = render_status(state.position);
        let prompt = render_decide_prompt(&status, t, state.position);
        let mut reminder: Option<String> = None;
        let mut parsed: Option<(ParsedDecision, String)> = None;
        let mut attempts = 0;
        let mut last_error = String::new();
        while attempts <= policy.parse_retries {
            attempts += 1;
            let request = crate::oracle::DecideRequest {
                system: system.clone(),
                history: dialog.clone(),
                status: status.clone(),
                time_step: t,
                position: state.position,
                condition,
                frames: clip.frames.clone(),
                reminder: reminder.clone(),
            };
            let reply = decide(oracle, oracle_config, request)?;
            match parse_decision_reply(&reply) {
                Ok(d) => {
                    parsed = Some((d, reply));
                    break;
                }
                Err(e) => {
                    reminder = Some(format!(
                        "Your previous reply could not be used ({e}). Follow the required format exactly."
                    ));
                    last_error = e;
                }
            }
        }
        let Some((decision, reply)) = parsed else {
            return Err(SimError::BadReply { context: "decision", attempts, detail: last_error });
        };
        dialog.push(ChatTurn { role: Role::User, text: prompt, frames: Vec::new() });
        dialog.push(ChatTurn { role: Role::Assistant, text: reply, frames: Vec::new() });
        let record = state.apply(&decision);
        memory.push(MemoryEntry {
            time_step: t,
            clip: clip.path.clone(),
            status: record.status_string.clone(),
            action: decision.action,
            reason: decision.reason.clone(),
            representative_frame: clip.frames.first().cloned(),
        });
        if state.crossed() {
            break;
        }
    }
    let crossed = state.crossed();
    let summary = summary_lines(&state.history);
    let mut log = TrialLog {
        persona: profile.name.clone(),
        condition,
        records: state.history,
        summary,
        crossed,
        crossing_time: None,
        ratings: None,
        memory,
        backend: oracle.name().to_string(),
        temperature: oracle_config.temperature,
        seed,
    };
    log.crossing_time = crossing_time(&log);
    debug_assert_eq!(log.crossed, log.crossing_time.is_some());
    Ok(log)
}

/// The retrospective document replayed to the persona before questionnaires:
/// the per-step timeline, the status summary block, and the combined-view
/// artifact reference.
#[derive(Debug, Clone)]
pub struct MemoryDocument {
    pub entries: Vec<MemoryEntry>,
    pub condition: Condition,
    pub trial_dir: PathBuf,
    pub combined_video: PathBuf,
    pub text: String,
}

pub fn assemble_memory(log: &TrialLog, trial_dir: &Path) -> Result<MemoryDocument, SimError> {
    if log.records.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let combined_video = trial_dir.join("all_agent_see.mp4");
    let mut text = format!("Timeline of the {} trial:\n", log.condition.dir_name());
    for entry in &log.memory {
        text.push_str(&format!(
            "Time {}: watched {} at status {}, decided {} - {}\n",
            entry.time_step,
            entry.clip.display(),
            entry.status,
            entry.action,
            entry.reason
        ));
    }
    text.push_str("\n=== All Position Status Summary ===\n");
    for line in &log.summary {
        text.push_str(line);
        text.push('\n');
    }
    if log.crossed {
        text.push_str(&format!(
            "\nCrossed onto the road during second {}.\n",
            log.crossing_time.unwrap_or_default()
        ));
    } else {
        text.push_str("\nDid not enter the road before the vehicle arrived.\n");
    }
    text.push_str(&format!("\nStep videos saved to: {}\n", trial_dir.join("step_views").display()));
    text.push_str(&format!("Combined video saved to: {}\n", combined_video.display()));
    Ok(MemoryDocument {
        entries: log.memory.clone(),
        condition: log.condition,
        trial_dir: trial_dir.to_path_buf(),
        combined_video,
        text,
    })
}

pub const POST_TRIAL_QUESTIONS: [(&str, &str); 2] = [
    ("q1_confidence", "Q1) How confident are you in your decision?"),
    ("q2_trust", "Q2) How much do you trust the autonomous vehicle?"),
];

fn ask_rating(
    oracle: &dyn Oracle,
    base: &RateRequest,
    retries: u32,
    context: &'static str,
) -> Result<(u8, String), SimError> {
    let mut request = base.clone();
    let mut attempts = 0;
    let mut last_error = String::new();
    while attempts <= retries {
        attempts += 1;
        let reply = oracle.query(&OracleRequest::RateTrial(request.clone()))?;
        match parse_rating_reply(&reply) {
            Ok(parsed) => return Ok(parsed),
            Err(e) => {
                request.reminder = Some(format!(
                    "Your previous reply could not be used ({e}). Reply as 'Rating: <1-5>/5 - <reason>'."
                ));
                last_error = e;
            }
        }
    }
    Err(SimError::BadReply { context, attempts, detail: last_error })
}

/// Asks the two reset-period Likert questions against one trial's memory.
pub fn administer_post_trial(
    profile: &PersonaProfile,
    memory: &MemoryDocument,
    trial_ordinal: usize,
    oracle: &dyn Oracle,
    retries: u32,
) -> Result<TrialRatings, SimError> {
    let frames: Vec<PathBuf> =
        memory.entries.iter().filter_map(|e| e.representative_frame.clone()).collect();
    let mut answers = Vec::with_capacity(2);
    for (question_id, question) in POST_TRIAL_QUESTIONS {
        let base = RateRequest {
            system: profile.system_prompt(),
            memory: memory.text.clone(),
            condition: memory.condition,
            trial_ordinal,
            question_id: question_id.to_string(),
            question: question.to_string(),
            frames: frames.clone(),
            reminder: None,
        };
        answers.push(ask_rating(oracle, &base, retries, "post-trial rating")?);
    }
    let (q2_trust, q2_reason) = answers.pop().unwrap();
    let (q1_confidence, q1_reason) = answers.pop().unwrap();
    Ok(TrialRatings { q1_confidence, q1_reason, q2_trust, q2_reason })
}

pub const INTERVIEW_QUESTIONS: [(&str, &str, bool); 7] = [
    ("q1_similarity", "Q1) How similar do you think this field study is compared to real life?", true),
    ("q2_genuineness", "Q2) How genuine do you think your behavior in this study was compared to real life?", true),
    ("q3_acceptance", "Q3) After this interaction with the autonomous vehicle, how accepting are you toward it?", true),
    ("q4_helpfulness", "Q4) How much do you think the vehicle's interface helped you make your decision?", true),
    ("q5_eye_meaning", "Q5) What do you think the \"eye\" display means?", false),
    ("q6_light_meaning", "Q6) What do you think the \"light strip\" display means?", false),
    ("q7_no_ehmi_strategy", "Q7) When there is no interface on the car, how do you make your decision?", false),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewAnswers {
    pub q1_similarity: u8,
    pub q2_genuineness: u8,
    pub q3_acceptance: u8,
    pub q4_helpfulness: u8,
    pub q5_eye_meaning: String,
    pub q6_light_meaning: String,
    pub q7_no_ehmi_strategy: String,
}

/// Runs the seven-question post-study interview over all six trial memories,
/// presented in the same order the trials ran.
pub fn administer_post_study(
    profile: &PersonaProfile,
    memories: &[MemoryDocument],
    oracle: &dyn Oracle,
    retries: u32,
) -> Result<InterviewAnswers, SimError> {
    if memories.len() != 6 {
        return Err(SimError::IncompleteSession { have: memories.len() });
    }
    let memory_texts: Vec<String> = memories.iter().map(|m| m.text.clone()).collect();
    let mut likert = Vec::new();
    let mut texts = Vec::new();
    for (question_id, question, is_likert) in INTERVIEW_QUESTIONS {
        let mut request = InterviewRequest {
            system: profile.system_prompt(),
            memories: memory_texts.clone(),
            question_id: question_id.to_string(),
            question: question.to_string(),
            likert: is_likert,
            reminder: None,
        };
        if is_likert {
            let mut attempts = 0;
            let mut last_error = String::new();
            let mut score = None;
            while attempts <= retries {
                attempts += 1;
                let reply = oracle.query(&OracleRequest::Interview(request.clone()))?;
                match parse_rating_reply(&reply) {
                    Ok((value, _)) => {
                        score = Some(value);
                        break;
                    }
                    Err(e) => {
                        request.reminder = Some(format!(
                            "Your previous reply could not be used ({e}). Reply as 'Rating: <1-5>/5 - <reason>'."
                        ));
                        last_error = e;
                    }
                }
            }
            match score {
                Some(value) => likert.push(value),
                None => {
                    return Err(SimError::BadReply { context: "interview rating", attempts, detail: last_error })
                }
            }
        } else {
            let mut attempts = 0;
            let mut answer = None;
            while attempts <= retries {
                attempts += 1;
                let reply = oracle.query(&OracleRequest::Interview(request.clone()))?;
                if reply.trim().is_empty() {
                    request.reminder =
                        Some("Your previous reply was empty. Answer in a short paragraph.".into());
                } else {
                    answer = Some(reply.trim().to_string());
                    break;
                }
            }
            match answer {
                Some(text) => texts.push(text),
                None => {
                    return Err(SimError::BadReply {
                        context: "interview answer",
                        attempts,
                        detail: "empty reply".into(),
                    })
                }
            }
        }
    }
    Ok(InterviewAnswers {
        q1_similarity: likert[0],
        q2_genuineness: likert[1],
        q3_acceptance: likert[2],
        q4_helpfulness: likert[3],
        q5_eye_meaning: texts[0].clone(),
        q6_light_meaning: texts[1].clone(),
        q7_no_ehmi_strategy: texts[2].clone(),
    })
}

/// Writes a trial log atomically: full write to a sibling temp file, then
/// rename, so interrupted runs never leave half a log behind.
pub fn save_log(log: &TrialLog, path: &Path) -> Result<(), SimError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(log)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_log(path: &Path) -> Result<TrialLog, SimError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayVerdict {
    pub pass: bool,
    pub first_divergence: Option<String>,
    pub crossing_time: Option<TimeStep>,
}

/// Re-walks the state machine from the logged decisions and checks every
/// position, status string, summary line, and the crossing bookkeeping.
pub fn verify_log(log: &TrialLog) -> ReplayVerdict {
    let fail = |msg: String| ReplayVerdict { pass: false, first_divergence: Some(msg), crossing_time: None };
    if log.records.is_empty() {
        return fail("log has no records".into());
    }
    let mut position: Position = 0;
    for (i, record) in log.records.iter().enumerate() {
        if record.time_step != i as TimeStep {
            return fail(format!("record {i}: time_step {} expected {i}", record.time_step));
        }
        if record.position_before != position {
            return fail(format!(
                "record {i}: position_before {} but previous step ended at {position}",
                record.position_before
            ));
        }
        let expected_after = match record.action {
            Action::Forward => position + 1,
            Action::Stop => position,
            Action::Backward => position.saturating_sub(1),
        };
        if record.position_after != expected_after {
            return fail(format!(
                "record {i}: position_after {} inconsistent with {} from {position}",
                record.position_after, record.action
            ));
        }
        if !(1..=5).contains(&record.confidence) || !(1..=5).contains(&record.trust) {
            return fail(format!("record {i}: rating outside 1..=5"));
        }
        let status = render_status(expected_after);
        if record.status_string != status {
            return fail(format!(
                "record {i}: status '{}' should be '{status}'",
                record.status_string
            ));
        }
        position = expected_after;
        if position == 5 && i + 1 != log.records.len() {
            return fail(format!("record {i}: decisions continue after crossing"));
        }
    }
    let crossed = position == 5;
    if log.crossed != crossed {
        return fail(format!("crossed flag {} but walk ends at {position}", log.crossed));
    }
    if !crossed && log.records.len() != 9 {
        return fail(format!("uncrossed trial has {} records, expected 9", log.records.len()));
    }
    let expected_summary = summary_lines(&log.records);
    if log.summary != expected_summary {
        let idx = log
            .summary
            .iter()
            .zip(&expected_summary)
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| expected_summary.len().min(log.summary.len()));
        return fail(format!("summary line {idx} diverges"));
    }
    let ct = crossing_time(log);
    if log.crossing_time != ct {
        return fail(format!("crossing_time {:?} should be {ct:?}", log.crossing_time));
    }
    ReplayVerdict { pass: true, first_divergence: None, crossing_time: ct }
}
