use serde::Deserialize;
use serde_json::{json, Value};

use super::{require_valid_profile, system_description, ElicitError};
use crate::dfd::Dfd;
use crate::gateway::{Gateway, StructuredRequest, TEMPERATURE_DETERMINISTIC};
use crate::model::{ApplicationProfile, LinddunCategory, Methodology, Session, Threat};

pub const PURPOSE_ZERO_SHOT: &str = "zero_shot_threat_model";

const SYSTEM_PROMPT: &str = "You are a privacy engineer performing a LINDDUN privacy threat \
analysis. Identify the privacy threats of the described system. Go through each of the seven \
LINDDUN threat categories in turn (Linking, Identifying, Non-repudiation, Detecting, Data \
Disclosure, Unawareness, Non-compliance) and report the threats that apply to this specific \
system. Give every threat a short title and a description of how it arises in the system.";

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ThreatDraft {
    pub category: LinddunCategory,
    pub title: String,
    pub description: String,
}

pub fn zero_shot_schema() -> Value {
    let cats: Vec<&str> = LinddunCategory::ALL.iter().map(|c| c.as_str()).collect();
    json!({
        "type": "object",
        "properties": {
            "threats": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "category": {"type": "string", "enum": cats},
                        "title": {"type": "string", "minLength": 1},
                        "description": {"type": "string", "minLength": 1}
                    },
                    "required": ["category", "title", "description"],
                    "additionalProperties": false
                }
            }
        },
        "required": ["threats"],
        "additionalProperties": false
    })
}

/// One request covering all seven categories.
pub fn zero_shot_threat_model(
    profile: &ApplicationProfile,
    dfd: Option<&Dfd>,
    gateway: &Gateway,
) -> Result<Vec<ThreatDraft>, ElicitError> {
    require_valid_profile(profile)?;
    let request = StructuredRequest::new(PURPOSE_ZERO_SHOT, SYSTEM_PROMPT, zero_shot_schema())
        .text(system_description(profile, dfd))
        .text("List the privacy threats of this system, covering all seven LINDDUN categories.")
        .temperature(TEMPERATURE_DETERMINISTIC);
    let response = gateway.complete_structured(&request)?;
    #[derive(Deserialize)]
    struct Doc {
        threats: Vec<ThreatDraft>,
    }
    let doc: Doc = serde_json::from_value(response.document)
        .expect("document was validated against the zero-shot schema");
    Ok(doc.threats)
}

/// Run the zero-shot model on a session and append the normalized threats.
pub fn elicit_zero_shot(session: &mut Session, gateway: &Gateway) -> Result<Vec<Threat>, ElicitError> {
    let drafts = zero_shot_threat_model(&session.profile, session.dfd.as_ref(), gateway)?;
    let threats: Vec<Threat> = drafts
        .into_iter()
        .map(|d| {
            Threat::zero_shot(
                session.next_threat_id(Methodology::ZeroShot),
                d.category,
                d.title,
                d.description,
            )
        })
        .collect();
    session
        .elicitation_results
        .zero_shot
        .extend(threats.iter().cloned());
    session.touch();
    Ok(threats)
}
