//! Persona construction: questionnaire schema, the instruction prompt that
//! turns a questionnaire into a persona document, and the persona store format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Labels the five open-ended experience answers and, prefixed to each entry,
/// the five decision criteria of a persona document. Order is canonical.
pub const CRITERION_LABELS: [&str; 5] = [
    "Impression of autonomous driving",
    "Use case of autonomous driving",
    "Emotion of autonomous driving",
    "Concern of autonomous driving",
    "Expectation of autonomous driving",
];

/// Keys of the five experience answers, in the same order as [`CRITERION_LABELS`].
pub const EXPERIENCE_KEYS: [&str; 5] = ["impression", "use_case", "emotion", "concern", "expectation"];

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("questionnaire field '{0}' is empty")]
    EmptyField(&'static str),
    #[error("age must be positive")]
    ZeroAge,
    #[error("persona document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("persona document is missing the '{0}' component")]
    MissingComponent(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
    Undisclosed,
}

impl Gender {
    fn label(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
            Gender::Undisclosed => "undisclosed",
        }
    }
}

/// Big Five scores on whatever numeric scale the survey used; the scale is
/// carried as metadata rather than normalized away.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BigFive {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperienceAnswers {
    pub impression: String,
    pub use_case: String,
    pub emotion: String,
    pub concern: String,
    pub expectation: String,
}

impl ExperienceAnswers {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &str)> {
        [
            ("impression", self.impression.as_str()),
            ("use_case", self.use_case.as_str()),
            ("emotion", self.emotion.as_str()),
            ("concern", self.concern.as_str()),
            ("expectation", self.expectation.as_str()),
        ]
        .into_iter()
    }
}

/// One participant's survey data, the input of persona construction.
/// `anonymized_id` is the published name of the resulting persona; it is
/// supplied by the caller, never derived here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub participant_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anonymized_id: Option<String>,
    pub age: u32,
    pub gender: Gender,
    pub nationality: String,
    /// Months lived in the study country. Zero is fine (just arrived).
    pub residence_duration_months: u32,
    pub education: String,
    pub occupation: String,
    pub big_five: BigFive,
    pub experience: ExperienceAnswers,
}

impl QuestionnaireResponse {
    /// The name the persona will carry: the anonymized id when present.
    pub fn persona_name(&self) -> &str {
        self.anonymized_id.as_deref().unwrap_or(&self.participant_id)
    }

    pub fn validate(&self) -> Result<(), PersonaError> {
        if self.age == 0 {
            return Err(PersonaError::ZeroAge);
        }
        if self.participant_id.trim().is_empty() {
            return Err(PersonaError::EmptyField("participant_id"));
        }
        for ((key, answer), _) in self.experience.iter().zip(EXPERIENCE_KEYS) {
            if answer.trim().is_empty() {
                return Err(PersonaError::EmptyField(match key {
                    "impression" => "impression",
                    "use_case" => "use_case",
                    "emotion" => "emotion",
                    "concern" => "concern",
                    _ => "expectation",
                }));
            }
        }
        Ok(())
    }
}

/// Knobs of the instruction prompt. The scenario label is spliced into the
/// extraction bullet so the same pipeline can target other encounters.
#[derive(Debug, Clone)]
pub struct PersonaContext {
    pub scenario_label: String,
}

impl Default for PersonaContext {
    fn default() -> Self {
        PersonaContext { scenario_label: "street crossing".to_string() }
    }
}

/// Builds the full persona-construction prompt: five fixed instruction
/// bullets followed by the serialized Part 1-3 questionnaire data. Pure;
/// identical input yields identical bytes.
pub fn compose_persona_instruction(
    resp: &QuestionnaireResponse,
    ctx: &PersonaContext,
) -> Result<String, PersonaError> {
    resp.validate()?;
    let mut out = String::with_capacity(2048);
    out.push_str("You are constructing a persona from a three-part questionnaire.\n\n");
    out.push_str("- Please take the data from Part 1-3 as the base for constructing the corresponding Persona.\n");
    out.push_str("- Please retain all demographic information from Part 1.\n");
    out.push_str(&format!(
        "- Please extract only those elements that are likely to influence perceptions and behaviors related to autonomous vehicle \"in the context of {}\" from the personality traits (Part 2) and open-ended responses (Part 3).\n",
        ctx.scenario_label
    ));
    out.push_str("- Please infer each persona's behavioral preferences regarding decision-making.\n");
    out.push_str("- Please format the resulting persona into a structured JSON object consisting of three components: Name, Description, and Decision Criteria.\n");

    out.push_str("\nPart 1: Demographic information\n");
    out.push_str(&format!("- Name: {}\n", resp.persona_name()));
    out.push_str(&format!("- Age: {}\n", resp.age));
    out.push_str(&format!("- Gender: {}\n", resp.gender.label()));
    out.push_str(&format!("- Nationality: {}\n", resp.nationality));
    out.push_str(&format!("- Residence duration: {} months\n", resp.residence_duration_months));
    out.push_str(&format!("- Education: {}\n", resp.education));
    out.push_str(&format!("- Occupation: {}\n", resp.occupation));

    let scale = resp.big_five.scale.as_deref().unwrap_or("unspecified");
    out.push_str(&format!("\nPart 2: Personality traits (Big Five, scale {scale})\n"));
    out.push_str(&format!("- Openness: {}\n", resp.big_five.openness));
    out.push_str(&format!("- Conscientiousness: {}\n", resp.big_five.conscientiousness));
    out.push_str(&format!("- Extraversion: {}\n", resp.big_five.extraversion));
    out.push_str(&format!("- Agreeableness: {}\n", resp.big_five.agreeableness));
    out.push_str(&format!("- Neuroticism: {}\n", resp.big_five.neuroticism));

    out.push_str("\nPart 3: Open-ended responses\n");
    for (label, (_, answer)) in CRITERION_LABELS.iter().zip(resp.experience.iter()) {
        out.push_str(&format!("- {label}: {answer}\n"));
    }
    Ok(out)
}

/// A persona as stored on disk and injected into the oracle's system turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub name: String,
    pub description: String,
    pub decision_criteria: Vec<String>,
}

impl PersonaProfile {
    pub fn to_document_string(&self) -> String {
        // serde_json only fails on non-string map keys or failing Serialize impls.
        serde_json::to_string_pretty(self).expect("persona serialization")
    }

    /// The persona text placed in the oracle's system turn.
    pub fn system_prompt(&self) -> String {
        let mut s = format!("You are {}.\n\n{}\n\nDecision criteria:\n", self.name, self.description);
        for (i, c) in self.decision_criteria.iter().enumerate() {
            s.push_str(&format!("{}. {}\n", i + 1, c));
        }
        s
    }
}

/// One failed persona invariant; `invariant` is a stable short name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

/// Parses a persona document (the oracle's reply or a stored file) into a
/// profile. Tolerates a Markdown code fence around the JSON; everything else
/// is strict.
pub fn parse_persona_document(document: &str) -> Result<PersonaProfile, PersonaError> {
    let body = strip_code_fence(document);
    let value: serde_json::Value = serde_json::from_str(body)?;
    let obj = value
        .as_object()
        .ok_or(PersonaError::MissingComponent("name"))?;
    for key in ["name", "description", "decision_criteria"] {
        if !obj.contains_key(key) {
            return Err(PersonaError::MissingComponent(match key {
                "name" => "name",
                "description" => "description",
                _ => "decision_criteria",
            }));
        }
    }
    Ok(serde_json::from_value(value)?)
}

fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(end) = rest.rfind("```") {
            return rest[..end].trim();
        }
    }
    t
}

/// Checks the persona store invariants; an empty report means valid.
pub fn validate_persona(profile: &PersonaProfile) -> Vec<Violation> {
    let mut report = Vec::new();
    if profile.name.trim().is_empty() {
        report.push(Violation { invariant: "name", detail: "name is empty".into() });
    }
    if profile.description.trim().is_empty() {
        report.push(Violation { invariant: "description", detail: "description is empty".into() });
    }
    if profile.decision_criteria.len() != 5 {
        report.push(Violation {
            invariant: "criteria count",
            detail: format!("expected 5 decision criteria, found {}", profile.decision_criteria.len()),
        });
        return report;
    }
    for (i, (entry, label)) in profile.decision_criteria.iter().zip(CRITERION_LABELS).enumerate() {
        if !entry.trim_start().starts_with(label) {
            report.push(Violation {
                invariant: "criteria label",
                detail: format!("criterion {} must begin with \"{label}\"", i + 1),
            });
        }
    }
    report
}
