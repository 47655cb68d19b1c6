//! Remote chat-completions backend: persona as system turn, trial history as
//! prior turns, frames inlined as data URIs on the current turn.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};

use super::{
    Backend, DecideRequest, GeneratePersonaRequest, InterviewRequest, Oracle, OracleConfig,
    OracleError, OracleRequest, RateRequest, Role,
};

pub struct RemoteOracle {
    config: OracleConfig,
    credential: String,
    client: reqwest::blocking::Client,
    gate: Gate,
    transcript: Option<Mutex<fs::File>>,
}

impl RemoteOracle {
    /// Fails fast on a missing credential so batch runs abort before the
    /// first request rather than midway.
    pub fn new(config: OracleConfig) -> Result<Self, OracleError> {
        let config = OracleConfig { backend: Backend::Remote, ..config };
        config.validate()?;
        let credential = std::env::var(&config.credential_env)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| {
                OracleError::Configuration(format!(
                    "credential variable {} is not set",
                    config.credential_env
                ))
            })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| OracleError::Configuration(e.to_string()))?;
        let transcript = match &config.transcript_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| OracleError::Configuration(e.to_string()))?;
                let file = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("transcript.jsonl"))
                    .map_err(|e| OracleError::Configuration(e.to_string()))?;
                Some(Mutex::new(file))
            }
            None => None,
        };
        let gate = Gate::new(config.max_in_flight, config.requests_per_s);
        Ok(RemoteOracle { config, credential, client, gate, transcript })
    }

    fn post(&self, kind: &str, messages: Value, n_frames: usize) -> Result<String, OracleError> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        });
        let _permit = self.gate.acquire();
        let mut last = OracleError::Transport { detail: "no attempt made".into(), retryable: false };
        for attempt in 0..=self.config.retry_limit {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 * u64::from(attempt)));
            }
            match self.attempt(&body) {
                Ok(reply) => {
                    self.record(kind, n_frames, &reply);
                    return Ok(reply);
                }
                Err(e @ OracleError::Transport { retryable: true, .. }) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }

    fn attempt(&self, body: &Value) -> Result<String, OracleError> {
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.credential)
            .json(body)
            .send()
            .map_err(|e| OracleError::Transport { detail: e.to_string(), retryable: true })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| OracleError::Transport { detail: e.to_string(), retryable: true })?;
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(OracleError::Transport {
                detail: format!("status {status}: {}", truncate(&text, 300)),
                retryable,
            });
        }
        let parsed: Value = serde_json::from_str(&text).map_err(|e| OracleError::Transport {
            detail: format!("unparseable response body: {e}"),
            retryable: false,
        })?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| OracleError::Transport {
                detail: "response lacks choices[0].message.content".into(),
                retryable: false,
            })
    }

    fn record(&self, kind: &str, n_frames: usize, reply: &str) {
        let Some(file) = &self.transcript else { return };
        let line = json!({
            "kind": kind,
            "model": self.config.model,
            "temperature": self.config.temperature,
            "n_frames": n_frames,
            "reply": reply,
        });
        if let Ok(mut f) = file.lock() {
            let _ = writeln!(f, "{line}");
        }
    }
}

impl Oracle for RemoteOracle {
    fn name(&self) -> &str {
        "remote"
    }

    fn query(&self, request: &OracleRequest) -> Result<String, OracleError> {
        match request {
            OracleRequest::Decide(req) => {
                self.post("decide", decide_messages(req)?, req.frames.len())
            }
            OracleRequest::RateTrial(req) => {
                self.post("rate_trial", rate_messages(req)?, req.frames.len())
            }
            OracleRequest::Interview(req) => self.post("interview", interview_messages(req), 0),
            OracleRequest::GeneratePersona(req) => {
                self.post("generate_persona", persona_messages(req), 0)
            }
        }
    }
}

/// The per-second question the simulator asks, rendered identically for the
/// wire and for accumulated history turns.
pub fn render_decide_prompt(status: &str, time_step: u8, position: u8) -> String {
    format!(
        "Current position: {position}\nStatus: {status}\nTime step: {time_step} of 8. The frames show the last second of the approaching vehicle from where you stand.\nWhat is your next plan?\nReply in exactly this format:\nDecision: <forward|stop|backward>\nReason: <your reasoning>\nConfidence: <1-5>/5 - <why>\nTrust: <1-5>/5 - <why>"
    )
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

fn decide_messages(req: &DecideRequest) -> Result<Value, OracleError> {
    let mut messages = vec![json!({"role": "system", "content": req.system})];
    for turn in &req.history {
        messages.push(json!({"role": role_name(turn.role), "content": turn.text}));
    }
    let mut prompt = render_decide_prompt(&req.status, req.time_step, req.position);
    if let Some(reminder) = &req.reminder {
        prompt.push_str("\n\n");
        prompt.push_str(reminder);
    }
    let mut content = vec![json!({"type": "text", "text": prompt})];
    for frame in &req.frames {
        content.push(json!({"type": "image_url", "image_url": {"url": frame_data_uri(frame)?}}));
    }
    messages.push(json!({"role": "user", "content": content}));
    Ok(Value::Array(messages))
}

fn rate_messages(req: &RateRequest) -> Result<Value, OracleError> {
    let mut prompt = format!(
        "You just completed crossing trial {} ({}). Here is your memory of it:\n\n{}\n\n{}\nReply in exactly this format:\nRating: <1-5>/5 - <your reasoning>",
        req.trial_ordinal,
        req.condition.dir_name(),
        req.memory,
        req.question
    );
    if let Some(reminder) = &req.reminder {
        prompt.push_str("\n\n");
        prompt.push_str(reminder);
    }
    let mut content = vec![json!({"type": "text", "text": prompt})];
    for frame in &req.frames {
        content.push(json!({"type": "image_url", "image_url": {"url": frame_data_uri(frame)?}}));
    }
    Ok(json!([
        {"role": "system", "content": req.system},
        {"role": "user", "content": content},
    ]))
}

fn interview_messages(req: &InterviewRequest) -> Value {
    let mut prompt = String::from("The study is over. Here are your memories of the six trials in the order you experienced them:\n");
    for (i, memory) in req.memories.iter().enumerate() {
        prompt.push_str(&format!("\n--- Trial {} ---\n{memory}\n", i + 1));
    }
    prompt.push_str(&format!("\n{}\n", req.question));
    if req.likert {
        prompt.push_str("Reply in exactly this format:\nRating: <1-5>/5 - <your reasoning>");
    } else {
        prompt.push_str("Answer in a short paragraph.");
    }
    if let Some(reminder) = &req.reminder {
        prompt.push_str("\n\n");
        prompt.push_str(reminder);
    }
    json!([
        {"role": "system", "content": req.system},
        {"role": "user", "content": prompt},
    ])
}

fn persona_messages(req: &GeneratePersonaRequest) -> Value {
    let mut prompt = req.instruction.clone();
    if let Some(reminder) = &req.reminder {
        prompt.push_str("\n\n");
        prompt.push_str(reminder);
    }
    json!([{"role": "user", "content": prompt}])
}

fn frame_data_uri(path: &Path) -> Result<String, OracleError> {
    let bytes = fs::read(path).map_err(|e| OracleError::Transport {
        detail: format!("cannot read frame {}: {e}", path.display()),
        retryable: false,
    })?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    };
    Ok(format!("data:{mime};base64,{}", BASE64.encode(bytes)))
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

/// In-flight cap plus a token-bucket rate limit shared by all worker threads.
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
    bucket: Mutex<TokenBucket>,
}

struct TokenBucket {
    tokens: f64,
    last: Instant,
    rate: f64,
    burst: f64,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(max_in_flight: usize, requests_per_s: f64) -> Self {
        let burst = max_in_flight.max(1) as f64;
        Gate {
            slots: Mutex::new(max_in_flight.max(1)),
            freed: Condvar::new(),
            bucket: Mutex::new(TokenBucket {
                tokens: burst,
                last: Instant::now(),
                rate: requests_per_s.max(0.01),
                burst,
            }),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        drop(slots);
        loop {
            let wait = {
                let mut bucket = self.bucket.lock().unwrap();
                let now = Instant::now();
                bucket.tokens = (bucket.tokens
                    + now.duration_since(bucket.last).as_secs_f64() * bucket.rate)
                    .min(bucket.burst);
                bucket.last = now;
                if bucket.tokens >= 1.0 {
                    bucket.tokens -= 1.0;
                    None
                } else {
                    Some(Duration::from_secs_f64((1.0 - bucket.tokens) / bucket.rate))
                }
            };
            match wait {
                None => return Permit(self),
                Some(d) => std::thread::sleep(d),
            }
        }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut slots = self.0.slots.lock().unwrap();
        *slots += 1;
        self.0.freed.notify_one();
    }
}
