//! Threat assessment: choosing the working set, inclusion and impact edits,
//! and two-stage selection of privacy patterns as control measures.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::elicitation::system_description;
use crate::gateway::{Gateway, GatewayError, StructuredRequest, TEMPERATURE_DETERMINISTIC};
use crate::kb::PrivacyPattern;
use crate::model::{ApplicationProfile, ControlMeasure, Methodology, Session, Threat, ThreatId};

pub const PURPOSE_IMPACT: &str = "impact_assessment";
pub const PURPOSE_SHORTLIST: &str = "pattern_shortlist";
pub const PURPOSE_SELECT: &str = "pattern_selection";

/// Upper bound on the stage-one shortlist.
pub const SHORTLIST_CAP: usize = 10;

const IMPACT_PROMPT: &str = "You are a privacy engineer assessing the impact of a privacy threat \
on the people whose data a system processes. Describe who is affected, what harm could follow \
if the threat materializes, and how severe and how likely that harm is in this system.";

const SHORTLIST_PROMPT: &str = "You are a privacy engineer looking for mitigations of a privacy \
threat. You receive the threat, the system description and a catalog of privacy patterns with \
a brief description of each. List the patterns that are potentially relevant for mitigating \
this threat, most relevant first. Use the exact pattern names from the catalog.";

const SELECT_PROMPT: &str = "You are a privacy engineer choosing control measures for a privacy \
threat. You receive the threat and the full description of a few candidate privacy patterns. \
Select the patterns that actually mitigate the threat. For each, explain why it is relevant and \
give concrete guidelines on how to implement it in this system.";

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("no {0} threats to import")]
    NoResults(Methodology),
    #[error("no assessment source selected")]
    NoSource,
    #[error("unknown threat `{0}` in the working set")]
    UnknownThreat(String),
    #[error("the privacy pattern catalog is empty")]
    EmptyCatalog,
    #[error("the shortlist is empty")]
    EmptyShortlist,
    #[error("pattern `{0}` is not in the catalog")]
    NotInCatalog(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl AssessError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoResults(_) => "NO_RESULTS",
            Self::NoSource => "NO_ASSESSMENT_SOURCE",
            Self::UnknownThreat(_) => "UNKNOWN_THREAT",
            Self::EmptyCatalog | Self::EmptyShortlist | Self::NotInCatalog(_) => "INVALID_ARGUMENT",
            Self::Gateway(e) => e.code(),
        }
    }
}

/// Make `methodology` the assessment source and return its threats.
/// Threats of the previous source keep their edits in their own list.
pub fn import_threats(session: &mut Session, methodology: Methodology) -> Result<&[Threat], AssessError> {
    if session.elicitation_results.list(methodology).is_empty() {
        return Err(AssessError::NoResults(methodology));
    }
    session.assessment_source = Some(methodology);
    session.touch();
    Ok(session.working_set())
}

fn working_threat<'a>(session: &'a mut Session, id: &ThreatId) -> Result<&'a mut Threat, AssessError> {
    let source = session.assessment_source.ok_or(AssessError::NoSource)?;
    session
        .elicitation_results
        .list_mut(source)
        .iter_mut()
        .find(|t| t.id() == id)
        .ok_or_else(|| AssessError::UnknownThreat(id.to_string()))
}

pub fn set_inclusion(session: &mut Session, id: &ThreatId, included: bool) -> Result<(), AssessError> {
    working_threat(session, id)?.included = included;
    session.touch();
    Ok(())
}

pub fn set_impact(session: &mut Session, id: &ThreatId, text: impl Into<String>) -> Result<(), AssessError> {
    working_threat(session, id)?.impact = Some(text.into());
    session.touch();
    Ok(())
}

pub fn impact_schema() -> Value {
    json!({
        "type": "object",
        "properties": {"impact": {"type": "string", "minLength": 1}},
        "required": ["impact"],
        "additionalProperties": false
    })
}

pub fn generate_impact(
    threat: &Threat,
    profile: &ApplicationProfile,
    gateway: &Gateway,
) -> Result<String, AssessError> {
    let request = StructuredRequest::new(PURPOSE_IMPACT, IMPACT_PROMPT, impact_schema())
        .text(system_description(profile, None))
        .text(threat.to_prompt_text())
        .temperature(TEMPERATURE_DETERMINISTIC);
    let response = gateway.complete_structured(&request)?;
    Ok(response.document["impact"]
        .as_str()
        .expect("document was validated against the impact schema")
        .to_string())
}

/// Generate and store an impact, replacing any manual text.
pub fn generate_impact_for(
    session: &mut Session,
    id: &ThreatId,
    gateway: &Gateway,
) -> Result<String, AssessError> {
    let threat = working_threat(session, id)?.clone();
    let impact = generate_impact(&threat, &session.profile, gateway)?;
    set_impact(session, id, impact.clone())?;
    Ok(impact)
}

pub fn shortlist_schema(catalog: &[PrivacyPattern]) -> Value {
    let names: Vec<&str> = catalog.iter().map(|p| p.name.as_str()).collect();
    json!({
        "type": "object",
        "properties": {
            "patterns": {"type": "array", "items": {"type": "string", "enum": names}}
        },
        "required": ["patterns"],
        "additionalProperties": false
    })
}

/// Stage one: pick potentially relevant patterns from their briefs only.
/// Duplicates are dropped, order is kept, and the list is capped at
/// [`SHORTLIST_CAP`].
pub fn shortlist_patterns(
    threat: &Threat,
    profile: &ApplicationProfile,
    catalog: &[PrivacyPattern],
    gateway: &Gateway,
) -> Result<Vec<String>, AssessError> {
    if catalog.is_empty() {
        return Err(AssessError::EmptyCatalog);
    }
    let mut briefs = String::from("Privacy pattern catalog:\n");
    for p in catalog {
        briefs.push_str(&format!("- {}: {}\n", p.name, p.brief));
    }
    let request = StructuredRequest::new(PURPOSE_SHORTLIST, SHORTLIST_PROMPT, shortlist_schema(catalog))
        .text(threat.to_prompt_text())
        .text(system_description(profile, None))
        .text(briefs)
        .temperature(TEMPERATURE_DETERMINISTIC);
    let response = gateway.complete_structured(&request)?;
    let mut seen = HashSet::new();
    Ok(response.document["patterns"]
        .as_array()
        .expect("document was validated against the shortlist schema")
        .iter()
        .filter_map(Value::as_str)
        .filter(|n| seen.insert(n.to_string()))
        .take(SHORTLIST_CAP)
        .map(str::to_string)
        .collect())
}

pub fn selection_schema(shortlist: &[String]) -> Value {
    json!({
        "type": "object",
        "properties": {
            "controls": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "pattern_name": {"type": "string", "enum": shortlist},
                        "relevance": {"type": "string", "minLength": 1},
                        "implementation_guidance": {"type": "string", "minLength": 1}
                    },
                    "required": ["pattern_name", "relevance", "implementation_guidance"],
                    "additionalProperties": false
                }
            }
        },
        "required": ["controls"],
        "additionalProperties": false
    })
}

/// Stage two: choose among the shortlisted patterns using their full text.
pub fn select_controls(
    threat: &Threat,
    shortlist: &[String],
    catalog: &[PrivacyPattern],
    gateway: &Gateway,
) -> Result<Vec<ControlMeasure>, AssessError> {
    if shortlist.is_empty() {
        return Err(AssessError::EmptyShortlist);
    }
    let mut details = String::from("Candidate privacy patterns:\n");
    for name in shortlist {
        let p = catalog
            .iter()
            .find(|p| &p.name == name)
            .ok_or_else(|| AssessError::NotInCatalog(name.clone()))?;
        details.push_str(&format!("\n## {}\n{}\n", p.name, p.full_text));
    }
    let request = StructuredRequest::new(PURPOSE_SELECT, SELECT_PROMPT, selection_schema(shortlist))
        .text(threat.to_prompt_text())
        .text(details)
        .temperature(TEMPERATURE_DETERMINISTIC);
    let response = gateway.complete_structured(&request)?;
    #[derive(Deserialize)]
    struct Doc {
        controls: Vec<ControlMeasure>,
    }
    let doc: Doc = serde_json::from_value(response.document)
        .expect("document was validated against the selection schema");
    let mut seen = HashSet::new();
    Ok(doc
        .controls
        .into_iter()
        .filter(|c| seen.insert(c.pattern_name.clone()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ControlSelection {
    pub shortlist: Vec<String>,
    pub controls: Vec<ControlMeasure>,
}

/// Run both stages for a working-set threat and store the result. An empty
/// shortlist skips stage two and clears the controls.
pub fn select_controls_for(
    session: &mut Session,
    id: &ThreatId,
    catalog: &[PrivacyPattern],
    gateway: &Gateway,
) -> Result<ControlSelection, AssessError> {
    let threat = working_threat(session, id)?.clone();
    let shortlist = shortlist_patterns(&threat, &session.profile, catalog, gateway)?;
    let controls = if shortlist.is_empty() {
        Vec::new()
    } else {
        select_controls(&threat, &shortlist, catalog, gateway)?
    };
    working_threat(session, id)?.controls = controls.clone();
    session.touch();
    Ok(ControlSelection { shortlist, controls })
}
