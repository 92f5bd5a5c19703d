//! Threat elicitation: the zero-shot threat model, LINDDUN GO with one or
//! several debating agents, and LINDDUN PRO per-edge analysis.

mod go;
mod personas;
mod pro;
mod zero_shot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::go::{
    format_previous_analysis, go_multi_agent, go_single_agent, run_linddun_go, verdict_schema,
    CardFailure, DebateError, DebateSettings, GoCardResult, GoRunOptions, GoRunReport, ProviderMode,
    DEFAULT_ROUNDS, PURPOSE_GO_JUDGE, PURPOSE_GO_MULTI_AGENT, PURPOSE_GO_SINGLE_AGENT,
};
pub use self::personas::{default_roster, load_personas, parse_personas, AgentPersona, PersonaError};
pub use self::pro::{
    elicit_pro, pro_analyze_edge, pro_finding_schema, pro_pairs, ProFailure, ProFinding, ProReport, ProRun,
    PURPOSE_PRO_EDGE,
};
pub use self::zero_shot::{
    elicit_zero_shot, zero_shot_schema, zero_shot_threat_model, ThreatDraft, PURPOSE_ZERO_SHOT,
};

use crate::dfd::Dfd;
use crate::gateway::GatewayError;
use crate::kb::DrawError;
use crate::model::{has_errors, validate_profile, ApplicationProfile, ValidationIssue};

/// One agent's present/absent judgment on a card.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoVerdict {
    pub threat_present: bool,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_id: Option<String>,
    pub provider_id: String,
}

/// A completed multi-agent debate over one card.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub card_id: String,
    /// One entry per round, each holding one verdict per persona in roster order.
    pub rounds: Vec<Vec<GoVerdict>>,
    pub judge: GoVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GoOutcome {
    SingleAgent { verdict: GoVerdict },
    MultiAgent { transcript: DebateTranscript },
}

impl GoOutcome {
    /// The verdict that decides whether a threat is recorded.
    pub fn final_verdict(&self) -> &GoVerdict {
        match self {
            Self::SingleAgent { verdict } => verdict,
            Self::MultiAgent { transcript } => &transcript.judge,
        }
    }
}

/// Audit record of one GO card evaluation kept in the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoRecord {
    pub card_id: String,
    pub outcome: GoOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threat_id: Option<crate::model::ThreatId>,
}

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error("profile is not ready for elicitation: {}", summarize(.0))]
    InvalidProfile(Vec<ValidationIssue>),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("session has no data flow diagram")]
    NoDfd,
    #[error(transparent)]
    Draw(#[from] DrawError),
    #[error(transparent)]
    Debate(#[from] DebateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl ElicitError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidProfile(_) => "INVALID_PROFILE",
            Self::InvalidArgument(_) => "INVALID_ARGUMENT",
            Self::UnknownEdge(_) => "UNKNOWN_EDGE",
            Self::NoDfd => "NO_DFD",
            Self::Draw(_) => "INVALID_ARGUMENT",
            Self::Debate(e) => e.code(),
            Self::Gateway(e) => e.code(),
        }
    }
}

fn summarize(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .filter(|i| i.is_error())
        .map(|i| i.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn require_valid_profile(profile: &ApplicationProfile) -> Result<(), ElicitError> {
    let issues = validate_profile(profile);
    if has_errors(&issues) {
        return Err(ElicitError::InvalidProfile(issues));
    }
    Ok(())
}

/// Prompt text describing the system under analysis.
pub fn system_description(profile: &ApplicationProfile, dfd: Option<&Dfd>) -> String {
    let mut out = format!("System description:\n{}", profile.to_prompt_text());
    if let Some(dfd) = dfd.filter(|d| !d.is_empty()) {
        if !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("\nData flow diagram edges:\n");
        out.push_str(&dfd.to_prompt_text());
    }
    out
}
