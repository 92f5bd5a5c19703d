//! Session-level operations shared by the HTTP API and the CLI.
//!
//! Everything here is blocking: it touches the disk and may call LLM
//! providers. Mutations of one session are serialized by a per-session lock;
//! different sessions proceed independently.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use linddun_core::assessment::{self, AssessError, ControlSelection};
use linddun_core::dfd::{
    encode_edges_csv, generate_dfd_from_description, generate_dfd_from_image, parse_edges_csv,
    render_dot, validate_dfd, CsvError, Dfd, DfdGenError, DotOptions, EdgeId, ImagePayload,
};
use linddun_core::elicitation::{
    elicit_pro, elicit_zero_shot, run_linddun_go, AgentPersona, ElicitError, GoRunOptions,
    GoRunReport, ProRun, ProviderMode,
};
use linddun_core::gateway::{Gateway, GatewayError, ImageMediaType, MockProvider};
use linddun_core::kb::{load_knowledge_base, KbError, KnowledgeBase};
use linddun_core::model::{
    has_errors, validate_profile, ApplicationProfile, LinddunCategory, Methodology, ReportMeta,
    Session, SessionId, Threat, ThreatId, ValidationIssue,
};
use linddun_core::report::{build_report_model, render_markdown, ReportError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ConfigError, ServiceConfig};
use crate::store::{SessionStore, SessionSummary, StoreError};

/// Problem-details error: a stable code, a human message and optional
/// structured detail. `status` is the HTTP status the API answers with.
#[derive(Debug, Clone, PartialEq)]
pub struct AppError {
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for AppError {}

impl AppError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(422, "INVALID_ARGUMENT", message)
    }

    pub fn to_json(&self) -> Value {
        json!({"code": self.code, "message": self.message, "detail": self.detail})
    }
}

fn issues_detail(issues: &[ValidationIssue]) -> Value {
    json!({ "issues": issues })
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) => 404,
            StoreError::InvalidId(_) => 400,
            StoreError::Corrupt { .. } | StoreError::Io { .. } => 500,
        };
        let detail = match &e {
            StoreError::Corrupt { path, .. } | StoreError::Io { path, .. } => {
                json!({ "path": path.display().to_string() })
            }
            _ => Value::Null,
        };
        AppError::new(status, e.code(), e.to_string()).with_detail(detail)
    }
}

impl From<GatewayError> for AppError {
    fn from(e: GatewayError) -> Self {
        let status = match &e {
            GatewayError::SchemaViolation { .. }
            | GatewayError::Authentication { .. }
            | GatewayError::Transport { .. } => 502,
            GatewayError::Timeout { .. } => 504,
            GatewayError::NoVisionProvider { .. } | GatewayError::ProviderNotEnabled { .. } => 422,
            GatewayError::NoProviders => 503,
            GatewayError::InvalidRequest { .. } => 500,
        };
        let detail = match &e {
            GatewayError::SchemaViolation {
                provider_id,
                purpose_tag,
                attempts,
                ..
            } => json!({"provider_id": provider_id, "purpose_tag": purpose_tag, "attempts": attempts}),
            GatewayError::Timeout {
                provider_id,
                purpose_tag,
            }
            | GatewayError::Authentication {
                provider_id,
                purpose_tag,
                ..
            }
            | GatewayError::Transport {
                provider_id,
                purpose_tag,
                ..
            } => json!({"provider_id": provider_id, "purpose_tag": purpose_tag}),
            _ => Value::Null,
        };
        AppError::new(status, e.code(), e.to_string()).with_detail(detail)
    }
}

impl From<ElicitError> for AppError {
    fn from(e: ElicitError) -> Self {
        match e {
            ElicitError::Gateway(g) => g.into(),
            ElicitError::InvalidProfile(issues) => {
                let err = ElicitError::InvalidProfile(issues.clone());
                AppError::new(422, err.code(), err.to_string()).with_detail(issues_detail(&issues))
            }
            ElicitError::UnknownEdge(_) => AppError::new(404, e.code(), e.to_string()),
            ElicitError::NoDfd => AppError::new(409, e.code(), e.to_string()),
            other => AppError::new(422, other.code(), other.to_string()),
        }
    }
}

impl From<AssessError> for AppError {
    fn from(e: AssessError) -> Self {
        match e {
            AssessError::Gateway(g) => g.into(),
            AssessError::UnknownThreat(_) => AppError::new(404, e.code(), e.to_string()),
            AssessError::NoResults(_) | AssessError::NoSource => {
                AppError::new(409, e.code(), e.to_string())
            }
            other => AppError::new(422, other.code(), other.to_string()),
        }
    }
}

impl From<DfdGenError> for AppError {
    fn from(e: DfdGenError) -> Self {
        match e {
            DfdGenError::Gateway(g) => g.into(),
            DfdGenError::InvalidProfile(issues) => {
                let msg = DfdGenError::InvalidProfile(issues.clone()).to_string();
                AppError::new(422, "INVALID_PROFILE", msg).with_detail(issues_detail(&issues))
            }
            DfdGenError::PayloadTooLarge { size, limit } => AppError::new(
                413,
                "PAYLOAD_TOO_LARGE",
                DfdGenError::PayloadTooLarge { size, limit }.to_string(),
            )
            .with_detail(json!({"size": size, "limit": limit})),
        }
    }
}

impl From<ReportError> for AppError {
    fn from(e: ReportError) -> Self {
        match &e {
            ReportError::NoSource => AppError::new(409, e.code(), e.to_string()),
            ReportError::InvalidDfd(issues) => {
                AppError::new(422, e.code(), e.to_string()).with_detail(issues_detail(issues))
            }
        }
    }
}

impl From<CsvError> for AppError {
    fn from(e: CsvError) -> Self {
        AppError::new(422, "INVALID_CSV", e.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("provider setup: {0}")]
    Gateway(#[from] GatewayError),
}

/// Shared state: configuration, store, knowledge base and gateway.
pub struct App {
    pub config: ServiceConfig,
    pub store: SessionStore,
    pub kb: KnowledgeBase,
    pub gateway: Gateway,
    locks: Mutex<HashMap<SessionId, Arc<Mutex<()>>>>,
}

/// Profile or DFD as stored, with its lint results.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileView {
    pub profile: ApplicationProfile,
    pub issues: Vec<ValidationIssue>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DfdView {
    pub dfd: Option<Dfd>,
    pub issues: Vec<ValidationIssue>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DfdSource {
    #[default]
    Description,
    Image,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerateMode {
    /// Store the generated diagram as the session DFD.
    #[default]
    Replace,
    /// Append the generated edges to the current DFD, renumbering ids.
    Merge,
    /// Return the diagram without touching the session.
    Preview,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateDfdRequest {
    #[serde(default)]
    pub source: DfdSource,
    /// Base64-encoded image bytes, for `source = image`.
    #[serde(default)]
    pub image_base64: Option<String>,
    /// `png` or `jpeg` (a MIME type is accepted too).
    #[serde(default)]
    pub media_type: Option<String>,
    #[serde(default)]
    pub mode: GenerateMode,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedView {
    pub dfd: Dfd,
    pub issues: Vec<ValidationIssue>,
    pub mode: GenerateMode,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoRequest {
    pub n_cards: usize,
    #[serde(default)]
    pub multi_agent: bool,
    /// Defaults to the configured number of rounds.
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub provider_mode: ProviderMode,
    #[serde(default)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProRequest {
    pub edge_id: EdgeId,
    pub flow_description: String,
    pub categories: Vec<LinddunCategory>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreatPatch {
    #[serde(default)]
    pub included: Option<bool>,
    #[serde(default)]
    pub impact: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportArtifacts {
    pub markdown: String,
    /// Graphviz source of the diagram, when the report includes it.
    pub dot: Option<String>,
    pub notice: Option<String>,
    pub generated_at: DateTime<Utc>,
    pub threat_count: usize,
}

impl App {
    /// Validate the config and assemble the shared state. `mock` backs every
    /// provider of kind `mock`; a synthesizing mock is used when `None`.
    pub fn from_config(mut config: ServiceConfig, mock: Option<Arc<MockProvider>>) -> Result<Self, StartupError> {
        config.validate()?;
        let store = SessionStore::open(&config.sessions_dir)?;
        let kb = match &config.kb_dir {
            Some(dir) => load_knowledge_base(dir)?,
            None => KnowledgeBase::bundled(),
        };
        let mut gateway = Gateway::from_configs(config.providers.clone(), mock)?
            .with_in_flight_limit(config.in_flight_limit);
        if let Some(id) = &config.default_provider {
            gateway = gateway.with_default_provider(id)?;
        }
        Ok(Self::assemble(config, store, kb, gateway))
    }

    pub fn assemble(config: ServiceConfig, store: SessionStore, kb: KnowledgeBase, gateway: Gateway) -> Self {
        Self {
            config,
            store,
            kb,
            gateway,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn personas(&self) -> &[AgentPersona] {
        &self.config.personas
    }

    fn lock_for(&self, id: &SessionId) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .unwrap()
            .entry(id.clone())
            .or_default()
            .clone()
    }

    /// Load, mutate and save under the session's lock. Nothing is written
    /// when `f` fails.
    pub fn mutate<T>(
        &self,
        id: &SessionId,
        f: impl FnOnce(&mut Session) -> Result<T, AppError>,
    ) -> Result<T, AppError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut session = self.store.load(id)?;
        let out = f(&mut session)?;
        session.touch();
        self.store.save(&session)?;
        Ok(out)
    }

    pub fn load(&self, id: &SessionId) -> Result<Session, AppError> {
        Ok(self.store.load(id)?)
    }

    pub fn create_session(&self, app_name: Option<String>) -> Result<Session, AppError> {
        let mut s = Session::new();
        if let Some(name) = app_name {
            s.report_meta.app_name = name;
        }
        self.store.save(&s)?;
        tracing::info!(session = %s.id, "session created");
        Ok(s)
    }

    pub fn list_sessions(&self) -> Result<Vec<SessionSummary>, AppError> {
        Ok(self.store.list()?)
    }

    pub fn profile(&self, id: &SessionId) -> Result<ProfileView, AppError> {
        let profile = self.load(id)?.profile;
        let issues = validate_profile(&profile);
        Ok(ProfileView { profile, issues })
    }

    /// Profiles with lint errors are stored anyway; elicitation refuses them.
    pub fn set_profile(&self, id: &SessionId, profile: ApplicationProfile) -> Result<ProfileView, AppError> {
        let issues = validate_profile(&profile);
        self.mutate(id, |s| {
            s.profile = profile.clone();
            Ok(())
        })?;
        Ok(ProfileView { profile, issues })
    }

    pub fn dfd(&self, id: &SessionId) -> Result<DfdView, AppError> {
        let dfd = self.load(id)?.dfd;
        let issues = dfd.as_ref().map(validate_dfd).unwrap_or_default();
        Ok(DfdView { dfd, issues })
    }

    /// Whole-diagram replacement. Diagrams with lint errors are rejected.
    pub fn set_dfd(&self, id: &SessionId, dfd: Dfd) -> Result<DfdView, AppError> {
        let issues = validate_dfd(&dfd);
        if has_errors(&issues) {
            return Err(AppError::new(422, "INVALID_DFD", "the data flow diagram has errors")
                .with_detail(issues_detail(&issues)));
        }
        self.mutate(id, |s| {
            s.dfd = Some(dfd.clone());
            Ok(())
        })?;
        Ok(DfdView {
            dfd: Some(dfd),
            issues,
        })
    }

    pub fn import_csv(&self, id: &SessionId, text: &str) -> Result<DfdView, AppError> {
        let dfd = parse_edges_csv(text)?;
        self.set_dfd(id, dfd)
    }

    /// Header-only CSV when the session has no diagram.
    pub fn export_csv(&self, id: &SessionId) -> Result<String, AppError> {
        let dfd = self.load(id)?.dfd.unwrap_or_default();
        Ok(encode_edges_csv(&dfd))
    }

    pub fn dot(&self, id: &SessionId, options: &DotOptions) -> Result<String, AppError> {
        let dfd = self.load(id)?.dfd.unwrap_or_default();
        if let Some(h) = &options.highlight_edge {
            if dfd.edge(h).is_none() {
                return Err(AppError::new(404, "UNKNOWN_EDGE", format!("unknown edge `{h}`")));
            }
        }
        render_dot(&dfd, options).map_err(|issues| {
            AppError::new(422, "INVALID_DFD", "the data flow diagram has errors")
                .with_detail(issues_detail(&issues))
        })
    }

    pub fn generate_dfd(&self, id: &SessionId, req: GenerateDfdRequest) -> Result<GeneratedView, AppError> {
        let session = self.load(id)?;
        let generated = match req.source {
            DfdSource::Description => generate_dfd_from_description(&session.profile, &self.gateway)?,
            DfdSource::Image => {
                use base64::Engine as _;
                let encoded = req
                    .image_base64
                    .as_deref()
                    .ok_or_else(|| AppError::invalid("image_base64 is required for source=image"))?;
                let media = req
                    .media_type
                    .as_deref()
                    .ok_or_else(|| AppError::invalid("media_type is required for source=image"))?;
                let media_type = ImageMediaType::parse(media)
                    .ok_or_else(|| AppError::invalid(format!("unsupported media type `{media}` (png or jpeg)")))?;
                let data = base64::engine::general_purpose::STANDARD
                    .decode(encoded.trim())
                    .map_err(|e| AppError::invalid(format!("image_base64 is not valid base64: {e}")))?;
                let payload = ImagePayload { data, media_type };
                generate_dfd_from_image(&payload, self.config.max_upload_bytes, &self.gateway)?
            }
        };
        let mut dfd = generated.dfd;
        let mut issues = generated.issues;
        match req.mode {
            GenerateMode::Preview => {}
            GenerateMode::Replace => {
                let stored = dfd.clone();
                self.mutate(id, |s| {
                    s.dfd = Some(stored);
                    Ok(())
                })?;
            }
            GenerateMode::Merge => {
                dfd = self.mutate(id, |s| {
                    let mut merged = s.dfd.clone().unwrap_or_default();
                    merged.edges.extend(dfd.edges.iter().cloned());
                    merged.renumber();
                    s.dfd = Some(merged.clone());
                    Ok(merged)
                })?;
                issues = validate_dfd(&dfd);
            }
        }
        Ok(GeneratedView {
            dfd,
            issues,
            mode: req.mode,
        })
    }

    pub fn elicit_zero_shot(&self, id: &SessionId) -> Result<Vec<Threat>, AppError> {
        self.mutate(id, |s| Ok(elicit_zero_shot(s, &self.gateway)?))
    }

    pub fn elicit_go(&self, id: &SessionId, req: GoRequest) -> Result<GoRunReport, AppError> {
        let options = GoRunOptions {
            n_cards: req.n_cards,
            multi_agent: req.multi_agent,
            rounds: req.rounds.unwrap_or(self.config.default_rounds),
            seed: req.seed,
            personas: self.config.personas.clone(),
            provider_mode: req.provider_mode,
            parallel: req.parallel,
        };
        self.mutate(id, |s| {
            let report = run_linddun_go(s, &self.kb.deck, &options, &self.gateway)?;
            for f in &report.failures {
                tracing::warn!(session = %s.id, card = %f.card_id, code = %f.code, "GO card failed");
            }
            Ok(report)
        })
    }

    pub fn elicit_pro(&self, id: &SessionId, req: ProRequest) -> Result<ProRun, AppError> {
        let categories: BTreeSet<LinddunCategory> = req.categories.into_iter().collect();
        self.mutate(id, |s| {
            Ok(elicit_pro(
                s,
                &self.kb,
                &req.edge_id,
                &req.flow_description,
                &categories,
                &self.gateway,
            )?)
        })
    }

    pub fn import_threats(&self, id: &SessionId, methodology: Methodology) -> Result<Vec<Threat>, AppError> {
        self.mutate(id, |s| Ok(assessment::import_threats(s, methodology)?.to_vec()))
    }

    fn working_threat(s: &Session, tid: &ThreatId) -> Result<Threat, AppError> {
        if s.assessment_source.is_none() {
            return Err(AssessError::NoSource.into());
        }
        s.working_set()
            .iter()
            .find(|t| t.id() == tid)
            .cloned()
            .ok_or_else(|| AssessError::UnknownThreat(tid.to_string()).into())
    }

    pub fn generate_impact(&self, id: &SessionId, tid: &ThreatId) -> Result<Threat, AppError> {
        self.mutate(id, |s| {
            assessment::generate_impact_for(s, tid, &self.gateway)?;
            Self::working_threat(s, tid)
        })
    }

    pub fn select_controls(&self, id: &SessionId, tid: &ThreatId) -> Result<ControlSelection, AppError> {
        self.mutate(id, |s| {
            Ok(assessment::select_controls_for(s, tid, &self.kb.patterns, &self.gateway)?)
        })
    }

    pub fn patch_threat(&self, id: &SessionId, tid: &ThreatId, patch: ThreatPatch) -> Result<Threat, AppError> {
        self.mutate(id, |s| {
            Self::working_threat(s, tid)?;
            if let Some(inc) = patch.included {
                assessment::set_inclusion(s, tid, inc)?;
            }
            if let Some(text) = patch.impact {
                assessment::set_impact(s, tid, text)?;
            }
            Self::working_threat(s, tid)
        })
    }

    pub fn set_report_meta(&self, id: &SessionId, meta: ReportMeta) -> Result<ReportMeta, AppError> {
        self.mutate(id, |s| {
            s.report_meta = meta.clone();
            Ok(())
        })?;
        Ok(meta)
    }

    /// Read-only: building a report does not modify the session.
    pub fn build_report(&self, id: &SessionId, generated_at: Option<DateTime<Utc>>) -> Result<ReportArtifacts, AppError> {
        let session = self.load(id)?;
        let generated_at = generated_at.unwrap_or_else(Utc::now);
        let model = build_report_model(&session, generated_at)?;
        Ok(ReportArtifacts {
            markdown: render_markdown(&model),
            dot: model.dfd_dot.clone(),
            notice: model.notice.clone(),
            generated_at,
            threat_count: model.threats.len(),
        })
    }
}
