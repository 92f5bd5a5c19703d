use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPersona {
    pub persona_id: String,
    pub display_name: String,
    /// Area of expertise and focus, used as the agent's system prompt.
    pub system_prompt: String,
}

impl AgentPersona {
    pub fn new(id: &str, name: &str, prompt: &str) -> Self {
        Self {
            persona_id: id.into(),
            display_name: name.into(),
            system_prompt: prompt.into(),
        }
    }
}

pub fn default_roster() -> Vec<AgentPersona> {
    vec![
        AgentPersona::new(
            "privacy_expert",
            "Privacy expert",
            "You are a privacy expert with deep knowledge of LINDDUN and privacy engineering. \
             You focus on how personal data could be linked, identified, detected or disclosed, \
             and on whether individuals are aware of and in control of the processing.",
        ),
        AgentPersona::new(
            "software_developer",
            "Software developer",
            "You are a senior software developer who builds and operates systems like the one \
             described. You focus on concrete implementation details: what is logged, stored, \
             cached and sent to which component or third party.",
        ),
        AgentPersona::new(
            "legal_compliance",
            "Legal and compliance officer",
            "You are a legal and compliance officer familiar with data protection law such as \
             the GDPR. You focus on legal bases, consent, retention obligations, data subject \
             rights and cross-border transfers.",
        ),
        AgentPersona::new(
            "end_user_advocate",
            "End-user advocate",
            "You represent the people whose data the system processes. You focus on what users \
             expect, what they are told, and what choices they actually have.",
        ),
    ]
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("cannot read persona roster: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed persona roster: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("persona roster is empty")]
    Empty,
    #[error("duplicate persona_id `{0}`")]
    Duplicate(String),
    #[error("persona `{0}` has an empty field")]
    EmptyField(String),
}

/// Parse a `personas.json` roster: a JSON array of personas, or an object
/// with a `personas` array.
pub fn parse_personas(text: &str) -> Result<Vec<AgentPersona>, PersonaError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        List(Vec<AgentPersona>),
        Wrapped { personas: Vec<AgentPersona> },
    }
    let roster = match serde_json::from_str::<Doc>(text)? {
        Doc::List(l) | Doc::Wrapped { personas: l } => l,
    };
    check_roster(&roster)?;
    Ok(roster)
}

pub(crate) fn check_roster(roster: &[AgentPersona]) -> Result<(), PersonaError> {
    if roster.is_empty() {
        return Err(PersonaError::Empty);
    }
    let mut seen = HashSet::new();
    for p in roster {
        if p.persona_id.trim().is_empty()
            || p.display_name.trim().is_empty()
            || p.system_prompt.trim().is_empty()
        {
            return Err(PersonaError::EmptyField(p.persona_id.clone()));
        }
        if !seen.insert(p.persona_id.as_str()) {
            return Err(PersonaError::Duplicate(p.persona_id.clone()));
        }
    }
    Ok(())
}

pub fn load_personas(path: &Path) -> Result<Vec<AgentPersona>, PersonaError> {
    parse_personas(&std::fs::read_to_string(path)?)
}
