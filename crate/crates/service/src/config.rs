use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use linddun_core::dfd::DEFAULT_MAX_IMAGE_BYTES;
use linddun_core::elicitation::{default_roster, load_personas, AgentPersona, DEFAULT_ROUNDS};
use linddun_core::gateway::{ProviderConfig, DEFAULT_IN_FLIGHT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_KB_DIR: &str = "PILLAR_KB_DIR";
pub const ENV_SESSIONS_DIR: &str = "PILLAR_SESSIONS_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {}: {message}", path.display())]
    Read { path: PathBuf, message: String },
    #[error("{what} {} does not exist or is not a directory", path.display())]
    MissingDir { what: &'static str, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

/// Service settings. Loaded from an optional JSON file; the directory
/// environment variables override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// `None` uses the knowledge base compiled into the binary.
    pub kb_dir: Option<PathBuf>,
    pub sessions_dir: PathBuf,
    pub providers: Vec<ProviderConfig>,
    /// Provider used when a request does not ask for random selection.
    /// Defaults to the first enabled provider.
    pub default_provider: Option<String>,
    pub personas: Vec<AgentPersona>,
    /// Replaces `personas` when set.
    pub personas_file: Option<PathBuf>,
    pub default_rounds: usize,
    pub max_upload_bytes: usize,
    pub in_flight_limit: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            kb_dir: None,
            sessions_dir: PathBuf::from("sessions"),
            providers: Vec::new(),
            default_provider: None,
            personas: default_roster(),
            personas_file: None,
            default_rounds: DEFAULT_ROUNDS,
            max_upload_bytes: DEFAULT_MAX_IMAGE_BYTES,
            in_flight_limit: DEFAULT_IN_FLIGHT,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let read = |message: String| ConfigError::Read {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| read(e.to_string()))
    }

    pub fn apply_env(&mut self) {
        if let Some(v) = std::env::var_os(ENV_KB_DIR).filter(|v| !v.is_empty()) {
            self.kb_dir = Some(v.into());
        }
        if let Some(v) = std::env::var_os(ENV_SESSIONS_DIR).filter(|v| !v.is_empty()) {
            self.sessions_dir = v.into();
        }
    }

    /// Check the startup invariants and load the persona file, if any.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        if !self.sessions_dir.is_dir() {
            return Err(ConfigError::MissingDir {
                what: "sessions_dir",
                path: self.sessions_dir.clone(),
            });
        }
        if let Some(dir) = &self.kb_dir {
            if !dir.is_dir() {
                return Err(ConfigError::MissingDir {
                    what: "kb_dir",
                    path: dir.clone(),
                });
            }
        }
        if let Some(path) = &self.personas_file {
            self.personas = load_personas(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.personas.is_empty() {
            return Err(ConfigError::Invalid("the persona roster is empty".into()));
        }
        if self.default_rounds == 0 {
            return Err(ConfigError::Invalid("default_rounds must be at least 1".into()));
        }
        if self.max_upload_bytes == 0 || self.in_flight_limit == 0 {
            return Err(ConfigError::Invalid(
                "max_upload_bytes and in_flight_limit must be positive".into(),
            ));
        }
        if self.providers.is_empty() {
            return Err(ConfigError::Invalid(
                "no LLM providers configured (add one to the config file or pass --provider)".into(),
            ));
        }
        Ok(())
    }
}
