//! Deterministic offline oracle. Every reply is a pure function of the
//! request, so seeded batch runs replay byte-identically.

use super::{DecideRequest, InterviewRequest, Oracle, OracleError, OracleRequest, RateRequest};
use crate::fixtures::MOCK_PERSONA;
use crate::scenario::{Action, AvBehavior, Condition, Ehmi, Position, TimeStep};

/// Rule table selecting an action, ratings, and reason for any simulator
/// state. Total: every (condition, position, time step) has an outcome.
#[derive(Debug, Clone, PartialEq)]
pub enum MockPolicy {
    /// Always forward, fixed high confidence.
    Assertive,
    /// Forward when the vehicle yields, hold position while it approaches.
    Cautious,
    /// Follows a fixed action list (last entry repeats); replay harness.
    Scripted(Vec<Action>),
    /// Hash-seeded persona-and-condition-dependent behavior for synthetic
    /// cohorts: varied start delays, occasional retreats, varied ratings.
    Varied { seed: u64 },
}

impl std::str::FromStr for MockPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(spec) = s.strip_prefix("scripted:") {
            let actions = spec
                .split(',')
                .map(|a| a.trim().parse::<Action>())
                .collect::<Result<Vec<_>, _>>()?;
            if actions.is_empty() {
                return Err("scripted policy needs at least one action".into());
            }
            return Ok(MockPolicy::Scripted(actions));
        }
        if let Some(spec) = s.strip_prefix("varied:") {
            let seed = spec.parse::<u64>().map_err(|e| format!("bad varied seed: {e}"))?;
            return Ok(MockPolicy::Varied { seed });
        }
        match s {
            "assertive" => Ok(MockPolicy::Assertive),
            "cautious" => Ok(MockPolicy::Cautious),
            "varied" => Ok(MockPolicy::Varied { seed: 0 }),
            other => Err(format!("unknown mock policy '{other}'")),
        }
    }
}

struct RuleOutcome {
    action: Action,
    confidence: u8,
    trust: u8,
    reason: String,
}

pub struct MockOracle {
    policy: MockPolicy,
    name: String,
}

impl MockOracle {
    pub fn new(policy: MockPolicy) -> Self {
        let name = match &policy {
            MockPolicy::Assertive => "mock:assertive".to_string(),
            MockPolicy::Cautious => "mock:cautious".to_string(),
            MockPolicy::Scripted(_) => "mock:scripted".to_string(),
            MockPolicy::Varied { seed } => format!("mock:varied:{seed}"),
        };
        MockOracle { policy, name }
    }

    fn decide_outcome(&self, req: &DecideRequest) -> RuleOutcome {
        match &self.policy {
            MockPolicy::Assertive => RuleOutcome {
                action: Action::Forward,
                confidence: 4,
                trust: 3,
                reason: "The way ahead looks clear enough to keep moving toward the road.".into(),
            },
            MockPolicy::Cautious => cautious_rule(req.condition, req.position, req.time_step),
            MockPolicy::Scripted(actions) => {
                let idx = (req.time_step as usize).min(actions.len() - 1);
                RuleOutcome {
                    action: actions[idx],
                    confidence: 4,
                    trust: 3,
                    reason: format!("Scripted step {} of the replay sequence.", req.time_step),
                }
            }
            MockPolicy::Varied { seed } => varied_rule(*seed, req),
        }
    }

    fn rate_outcome(&self, req: &RateRequest) -> (u8, String) {
        let is_trust = req.question_id.contains("trust");
        match &self.policy {
            MockPolicy::Assertive | MockPolicy::Scripted(_) => {
                if is_trust {
                    (3, "The vehicle did what I expected, though I kept some reserve.".into())
                } else {
                    (4, "My choice felt straightforward given what I saw.".into())
                }
            }
            MockPolicy::Cautious => {
                let yielded = req.condition.av == AvBehavior::Stop;
                match (is_trust, yielded) {
                    (true, true) => (4, "It slowed and stopped for me, which earns trust.".into()),
                    (true, false) => (2, "It drove past without yielding, so my trust stays low.".into()),
                    (false, _) => (4, "Waiting until the situation was unambiguous felt right.".into()),
                }
            }
            MockPolicy::Varied { seed } => {
                let h = mix(fnv1a64(&[
                    &seed.to_string(),
                    &req.system,
                    &req.condition.dir_name(),
                    &req.trial_ordinal.to_string(),
                    &req.question_id,
                ]));
                let base = if req.condition.av == AvBehavior::Stop { 3 } else { 2 };
                let score = (base + (h % 3) as u8).min(5);
                let reason = if is_trust {
                    format!("Trust settled at this level after the {} drive.", req.condition.av.dir_fragment())
                } else {
                    "The replayed memory matched how sure I felt in the moment.".to_string()
                };
                (score, reason)
            }
        }
    }

    fn interview_outcome(&self, req: &InterviewRequest) -> String {
        if req.likert {
            let score = match &self.policy {
                MockPolicy::Varied { seed } => {
                    let h = mix(fnv1a64(&[&seed.to_string(), &req.system, &req.question_id]));
                    3 + (h % 3) as u8
                }
                _ => 4,
            };
            return format!(
                "Rating: {score}/5 - Looking back across all six drives, that is where I land."
            );
        }
        match req.question_id.as_str() {
            "q5_eye_meaning" => {
                "The eyes read like the car watching me; when they tracked my direction I took it as the vehicle acknowledging I was there.".into()
            }
            "q6_light_meaning" => {
                "The light strip came across as a yielding signal, the car announcing it had seen me and would give way.".into()
            }
            "q7_no_ehmi_strategy" => {
                "With no display I fell back on motion cues: distance, speed, and whether the car began to slow before I committed.".into()
            }
            other => format!("I have no strong view on {other}, but the drives felt consistent."),
        }
    }
}

impl Oracle for MockOracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn query(&self, request: &OracleRequest) -> Result<String, OracleError> {
        match request {
            OracleRequest::Decide(req) => {
                let out = self.decide_outcome(req);
                Ok(format!(
                    "Decision: {}\nReason: {}\nConfidence: {}/5 - That is how sure this step feels.\nTrust: {}/5 - Based on what the vehicle has shown so far.",
                    out.action, out.reason, out.confidence, out.trust
                ))
            }
            OracleRequest::RateTrial(req) => {
                let (score, reason) = self.rate_outcome(req);
                Ok(format!("Rating: {score}/5 - {reason}"))
            }
            OracleRequest::Interview(req) => Ok(self.interview_outcome(req)),
            OracleRequest::GeneratePersona(_) => Ok(MOCK_PERSONA.to_string()),
        }
    }
}

fn cautious_rule(condition: Condition, position: Position, time_step: TimeStep) -> RuleOutcome {
    let approaching = time_step < 8;
    if condition.av == AvBehavior::Pass && approaching {
        RuleOutcome {
            action: Action::Stop,
            confidence: 4,
            trust: 2,
            reason: "The vehicle keeps coming without any sign of yielding, so I hold my position.".into(),
        }
    } else if condition.av == AvBehavior::Pass {
        RuleOutcome {
            action: Action::Stop,
            confidence: 5,
            trust: 2,
            reason: "It never yielded; I stay put until the road is truly clear.".into(),
        }
    } else {
        RuleOutcome {
            action: Action::Forward,
            confidence: 4,
            trust: 4,
            reason: format!("The approach looks controlled from marker {position}, so I advance."),
        }
    }
}

fn varied_rule(seed: u64, req: &DecideRequest) -> RuleOutcome {
    let trial_key = [seed.to_string(), req.system.clone(), req.condition.dir_name()];
    let trial_hash = mix(fnv1a64(&[&trial_key[0], &trial_key[1], &trial_key[2]]));
    // Skewed start delay: most personas set off early, a few hesitate.
    let delay: TimeStep = [0, 0, 0, 1, 1, 2, 3, 4][(trial_hash % 8) as usize]
        + if req.condition.av == AvBehavior::Pass && (trial_hash >> 8) & 1 == 1 { 2 } else { 0 };
    let retreats = (trial_hash >> 16) % 13 == 0;
    let step_hash = mix(trial_hash ^ fnv1a64(&[&req.time_step.to_string(), &req.position.to_string()]));
    let action = if retreats && req.time_step == delay + 1 && req.position > 0 {
        Action::Backward
    } else if req.time_step < delay {
        Action::Stop
    } else {
        Action::Forward
    };
    let ehmi_note = match req.condition.ehmi {
        Ehmi::Light => "the light strip",
        Ehmi::Eyes => "the eye display",
        Ehmi::None => "the plain windshield",
    };
    let reason = match action {
        Action::Forward => format!("Watching {ehmi_note}, this moment feels safe enough to advance."),
        Action::Stop => format!("I am still reading {ehmi_note} and the car's speed, so I wait."),
        Action::Backward => "The gap feels tighter than I like; I give myself a step of margin.".into(),
    };
    let trust_roll = ((step_hash >> 8) % 3) as u8;
    RuleOutcome {
        action,
        confidence: 3 + (step_hash % 3) as u8,
        trust: if req.condition.av == AvBehavior::Stop { 3 + trust_roll } else { 2 + trust_roll % 2 },
        reason,
    }
}

fn fnv1a64(parts: &[&str]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for part in parts {
        for b in part.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
