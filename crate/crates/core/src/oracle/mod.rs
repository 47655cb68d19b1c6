//! Decision-oracle gateway: one typed request surface with two backends, a
//! remote multimodal chat endpoint and deterministic offline mock policies,
//! plus frame extraction through an external media tool.

pub mod mock;
pub mod remote;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{parse_persona_document, validate_persona, PersonaProfile};
use crate::scenario::{Condition, Position, TimeStep};

pub use mock::{MockOracle, MockPolicy};
pub use remote::{render_decide_prompt, RemoteOracle};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle configuration: {0}")]
    Configuration(String),
    #[error("oracle transport: {detail}")]
    Transport { detail: String, retryable: bool },
    #[error("decision query needs at least one frame")]
    NoFrames,
    #[error("frame extraction failed for {clip}: {output}")]
    Extraction { clip: PathBuf, output: String },
    #[error("persona generation: {0}")]
    Generation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mock,
    Remote,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Backend::Mock),
            "remote" => Ok(Backend::Remote),
            other => Err(format!("unknown backend '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub backend: Backend,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Queries never carry more than this many frames; longer clips are
    /// subsampled uniformly.
    pub max_frames: usize,
    /// Name of the environment variable holding the API credential.
    pub credential_env: String,
    pub timeout_s: u64,
    /// Transport-level retries inside the remote client.
    pub retry_limit: u32,
    /// Which mock policy drives the offline backend.
    pub mock_policy: String,
    /// How many prior decision turns to resend per query; absent = all.
    pub history_window: Option<usize>,
    /// Concurrent remote requests allowed in flight.
    pub max_in_flight: usize,
    /// Remote request rate limit, requests per second.
    pub requests_per_s: f64,
    /// Append request/reply records to `transcript.jsonl` under this dir.
    pub transcript_dir: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            backend: Backend::Mock,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4.1".into(),
            temperature: 1.0,
            max_frames: 24,
            credential_env: "ORACLE_API_KEY".into(),
            timeout_s: 120,
            retry_limit: 3,
            mock_policy: "varied".into(),
            history_window: None,
            max_in_flight: 4,
            requests_per_s: 2.0,
            transcript_dir: None,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.temperature < 0.0 {
            return Err(OracleError::Configuration("temperature must be >= 0".into()));
        }
        if self.max_frames == 0 {
            return Err(OracleError::Configuration("max_frames must be >= 1".into()));
        }
        if self.backend == Backend::Remote {
            if self.endpoint.is_empty() {
                return Err(OracleError::Configuration("remote backend needs an endpoint".into()));
            }
            if self.credential_env.is_empty() {
                return Err(OracleError::Configuration("remote backend needs a credential variable name".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One turn of accumulated dialog resent to the oracle for context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<PathBuf>,
}

/// Per-second crossing decision query.
#[derive(Debug, Clone)]
pub struct DecideRequest {
    /// Persona document plus task framing; sent as the system turn.
    pub system: String,
    /// Prior decision exchange within the current trial, oldest first.
    pub history: Vec<ChatTurn>,
    pub status: String,
    pub time_step: TimeStep,
    pub position: Position,
    pub condition: Condition,
    pub frames: Vec<PathBuf>,
    /// Format reminder appended when the previous reply failed to parse.
    pub reminder: Option<String>,
}

/// Post-trial Likert question asked against one trial's memory.
#[derive(Debug, Clone)]
pub struct RateRequest {
    pub system: String,
    pub memory: String,
    pub condition: Condition,
    /// 1-based position of the trial within the session.
    pub trial_ordinal: usize,
    pub question_id: String,
    pub question: String,
    pub frames: Vec<PathBuf>,
    pub reminder: Option<String>,
}

/// Post-study interview question asked against all six memories.
#[derive(Debug, Clone)]
pub struct InterviewRequest {
    pub system: String,
    /// Memory documents in the presentation (Latin square) order.
    pub memories: Vec<String>,
    pub question_id: String,
    pub question: String,
    pub likert: bool,
    pub reminder: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GeneratePersonaRequest {
    pub instruction: String,
    pub reminder: Option<String>,
}

#[derive(Debug, Clone)]
pub enum OracleRequest {
    Decide(DecideRequest),
    RateTrial(RateRequest),
    Interview(InterviewRequest),
    GeneratePersona(GeneratePersonaRequest),
}

pub trait Oracle: Send + Sync {
    fn name(&self) -> &str;
    fn query(&self, request: &OracleRequest) -> Result<String, OracleError>;
}

pub fn build_oracle(config: &OracleConfig) -> Result<Box<dyn Oracle>, OracleError> {
    config.validate()?;
    match config.backend {
        Backend::Mock => {
            let policy: MockPolicy = config.mock_policy.parse().map_err(OracleError::Configuration)?;
            Ok(Box::new(MockOracle::new(policy)))
        }
        Backend::Remote => Ok(Box::new(RemoteOracle::new(config.clone())?)),
    }
}

/// Issues a decision query, enforcing the non-empty-frames precondition and
/// the frame cap before the backend sees the request.
pub fn decide(oracle: &dyn Oracle, config: &OracleConfig, mut request: DecideRequest) -> Result<String, OracleError> {
    if request.frames.is_empty() {
        return Err(OracleError::NoFrames);
    }
    request.frames = subsample_frames(&request.frames, config.max_frames);
    if let Some(window) = config.history_window {
        let keep = window.min(request.history.len());
        request.history.drain(..request.history.len() - keep);
    }
    oracle.query(&OracleRequest::Decide(request))
}

/// Uniform subsample of at most `cap` frames keeping the first and last
/// frames and the original order.
pub fn subsample_frames(frames: &[PathBuf], cap: usize) -> Vec<PathBuf> {
    assert!(cap >= 1, "frame cap must be at least 1");
    if frames.len() <= cap {
        return frames.to_vec();
    }
    if cap == 1 {
        return vec![frames[0].clone()];
    }
    (0..cap)
        .map(|i| {
            let idx = (i as f64 * (frames.len() - 1) as f64 / (cap - 1) as f64).round() as usize;
            frames[idx].clone()
        })
        .collect()
}

/// Asks the backend to compose a persona document from the questionnaire
/// instruction and parses it. A structurally bad reply earns one corrective
/// re-query carrying the parse error.
pub fn generate_persona(oracle: &dyn Oracle, instruction: &str) -> Result<PersonaProfile, OracleError> {
    let mut request = GeneratePersonaRequest { instruction: instruction.to_string(), reminder: None };
    let mut last_error = String::new();
    for _ in 0..2 {
        let reply = oracle.query(&OracleRequest::GeneratePersona(request.clone()))?;
        match parse_persona_document(&reply) {
            Ok(profile) => {
                let violations = validate_persona(&profile);
                if violations.is_empty() {
                    return Ok(profile);
                }
                last_error = violations
                    .iter()
                    .map(|v| format!("{}: {}", v.invariant, v.detail))
                    .collect::<Vec<_>>()
                    .join("; ");
            }
            Err(e) => last_error = e.to_string(),
        }
        request.reminder = Some(format!(
            "The previous reply could not be used ({last_error}). Reply with only the persona JSON object with fields name, description, decision_criteria."
        ));
    }
    Err(OracleError::Generation(format!("reply unusable after corrective re-query: {last_error}")))
}

/// Default frame extraction command; `{input}` and `{outdir}` are replaced
/// after whitespace splitting, so paths with spaces stay single arguments.
pub const DEFAULT_EXTRACT_TEMPLATE: &str =
    "ffmpeg -hide_banner -loglevel error -y -i {input} -start_number 1 {outdir}/%03d.jpg";

/// Default clip concatenation command; `{list}` is a file of `file '<path>'`
/// lines, `{output}` the target video.
pub const DEFAULT_CONCAT_TEMPLATE: &str =
    "ffmpeg -hide_banner -loglevel error -y -f concat -safe 0 -i {list} -c copy {output}";

fn run_template(template: &str, substitutions: &[(&str, &str)]) -> Result<std::process::Output, String> {
    let mut parts = template.split_whitespace().map(|part| {
        let mut arg = part.to_string();
        for (key, value) in substitutions {
            arg = arg.replace(key, value);
        }
        arg
    });
    let program = parts.next().ok_or_else(|| "empty command template".to_string())?;
    Command::new(&program).args(parts).output().map_err(|e| format!("{program}: {e}"))
}

/// Extracts a clip's frames into `<clip>.frames/` and returns them in order.
/// Skips the tool when the directory already holds frames, so re-runs are
/// free and never disturb an existing manifest.
pub fn extract_frames(clip: &Path, template: &str) -> Result<Vec<PathBuf>, OracleError> {
    let err = |output: String| OracleError::Extraction { clip: clip.to_path_buf(), output };
    if !clip.is_file() {
        return Err(err("clip does not exist".into()));
    }
    let mut dir_name = clip.file_name().unwrap_or_default().to_os_string();
    dir_name.push(".frames");
    let outdir = clip.with_file_name(dir_name);
    let existing = list_sorted_files(&outdir);
    if !existing.is_empty() {
        return Ok(existing);
    }
    fs::create_dir_all(&outdir).map_err(|e| err(e.to_string()))?;
    let output = run_template(
        template,
        &[("{input}", &clip.display().to_string()), ("{outdir}", &outdir.display().to_string())],
    )
    .map_err(err)?;
    if !output.status.success() {
        return Err(err(String::from_utf8_lossy(&output.stderr).into_owned()));
    }
    let frames = list_sorted_files(&outdir);
    if frames.is_empty() {
        return Err(err("tool succeeded but produced no frames".into()));
    }
    Ok(frames)
}

/// Concatenates clips into one video via the external tool (concat list
/// protocol). Used to build the per-trial combined-view artifact.
pub fn concat_clips(clips: &[PathBuf], output: &Path, template: &str) -> Result<(), OracleError> {
    let err = |detail: String| OracleError::Extraction { clip: output.to_path_buf(), output: detail };
    if clips.is_empty() {
        return Err(err("nothing to concatenate".into()));
    }
    let list_path = output.with_extension("concat.txt");
    let list: String = clips.iter().map(|c| format!("file '{}'\n", c.display())).collect();
    fs::write(&list_path, list).map_err(|e| err(e.to_string()))?;
    let result = run_template(
        template,
        &[("{list}", &list_path.display().to_string()), ("{output}", &output.display().to_string())],
    )
    .map_err(err)?;
    let _ = fs::remove_file(&list_path);
    if !result.status.success() {
        return Err(err(String::from_utf8_lossy(&result.stderr).into_owned()));
    }
    Ok(())
}

fn list_sorted_files(dir: &Path) -> Vec<PathBuf> {
    let Ok(entries) = fs::read_dir(dir) else { return Vec::new() };
    let mut files: Vec<PathBuf> =
        entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    files.sort();
    files
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AvBehavior, Ehmi};

    fn paths(n: usize) -> Vec<PathBuf> {
        (0..n).map(|i| PathBuf::from(format!("{i:03}.jpg"))).collect()
    }

    #[test]
    fn subsample_keeps_short_lists() {
        let frames = paths(10);
        assert_eq!(subsample_frames(&frames, 24), frames);
        assert_eq!(subsample_frames(&frames, 10), frames);
    }

    #[test]
    fn subsample_keeps_ends_and_order() {
        let frames = paths(100);
        let picked = subsample_frames(&frames, 24);
        assert_eq!(picked.len(), 24);
        assert_eq!(picked[0], frames[0]);
        assert_eq!(picked[23], frames[99]);
        for w in picked.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn subsample_cap_one_takes_first() {
        let frames = paths(5);
        assert_eq!(subsample_frames(&frames, 1), vec![frames[0].clone()]);
    }

    #[test]
    fn decide_rejects_empty_frames() {
        let oracle = MockOracle::new(MockPolicy::Assertive);
        let config = OracleConfig::default();
        let request = DecideRequest {
            system: "p".into(),
            history: Vec::new(),
            status: "*-o-o-o-o-|ROAD".into(),
            time_step: 0,
            position: 0,
            condition: Condition::new(Ehmi::None, AvBehavior::Stop),
            frames: Vec::new(),
            reminder: None,
        };
        assert!(matches!(decide(&oracle, &config, request), Err(OracleError::NoFrames)));
    }

    #[test]
    fn remote_config_requires_endpoint() {
        let config = OracleConfig { backend: Backend::Remote, endpoint: String::new(), ..OracleConfig::default() };
        assert!(matches!(config.validate(), Err(OracleError::Configuration(_))));
    }

    #[test]
    fn generate_persona_round_trips_through_mock() {
        let oracle = MockOracle::new(MockPolicy::Assertive);
        let profile = generate_persona(&oracle, "build the persona").unwrap();
        assert_eq!(profile.name, "G4x01v");
        assert_eq!(profile.decision_criteria.len(), 5);
    }

    #[test]
    fn extract_skips_when_frames_present() {
        let tmp = tempfile::tempdir().unwrap();
        let clip = tmp.path().join("pos0_time0.mp4");
        fs::write(&clip, b"clip").unwrap();
        let dir = tmp.path().join("pos0_time0.mp4.frames");
        fs::create_dir(&dir).unwrap();
        for i in 1..=3 {
            fs::write(dir.join(format!("{i:03}.jpg")), b"jpg").unwrap();
        }
        let frames = extract_frames(&clip, "false").unwrap();
        assert_eq!(frames.len(), 3);
        assert!(frames[0].ends_with("001.jpg"));
    }

    #[test]
    fn extract_runs_template_once() {
        let tmp = tempfile::tempdir().unwrap();
        let clip = tmp.path().join("clip.mp4");
        fs::write(&clip, b"clip").unwrap();
        // Stand-in media tool: copies the input into the frame directory.
        let template = "cp {input} {outdir}/001.jpg";
        let frames = extract_frames(&clip, template).unwrap();
        assert_eq!(frames.len(), 1);
        let again = extract_frames(&clip, "false").unwrap();
        assert_eq!(again, frames);
    }

    #[test]
    fn extract_missing_clip_names_path() {
        let missing = Path::new("/nowhere/clip.mp4");
        match extract_frames(missing, DEFAULT_EXTRACT_TEMPLATE) {
            Err(OracleError::Extraction { clip, .. }) => assert_eq!(clip, missing),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn failing_tool_output_is_carried() {
        let tmp = tempfile::tempdir().unwrap();
        let clip = tmp.path().join("clip.mp4");
        fs::write(&clip, b"clip").unwrap();
        match extract_frames(&clip, "false {input} {outdir}") {
            Err(OracleError::Extraction { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn concat_builds_list_and_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let clips: Vec<PathBuf> = (0..3)
            .map(|i| {
                let p = tmp.path().join(format!("c{i}.mp4"));
                fs::write(&p, b"clip").unwrap();
                p
            })
            .collect();
        let out = tmp.path().join("all.mp4");
        concat_clips(&clips, &out, "cp {list} {output}").unwrap();
        let body = fs::read_to_string(&out).unwrap();
        assert_eq!(body.lines().count(), 3);
        assert!(body.contains("c0.mp4"));
    }
}
