//! Multi-provider LLM access with enforced structured output.
//!
//! Every call site builds a [`StructuredRequest`] carrying a JSON schema. The
//! [`Gateway`] picks a provider, transmits the schema through the provider's
//! native channel when it has one (otherwise embeds it in the prompt), and
//! validates the reply locally. Non-conforming replies are retried with a
//! corrective message until the provider's attempt budget is spent.

mod http;
mod limiter;
mod mock;
mod synth;
pub mod wire;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use self::http::HttpProvider;
pub use self::limiter::{InFlightLimiter, Permit};
pub use self::mock::{MockProvider, MockReply, MockRule, RecordedCall};
pub use self::synth::synthesize;

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_IN_FLIGHT: usize = 8;

/// Temperature for classification-style calls (PRO, judge, selection).
pub const TEMPERATURE_DETERMINISTIC: f32 = 0.0;
/// Temperature for GO agent calls, where diverse opinions are wanted.
pub const TEMPERATURE_DEBATE: f32 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProviderKind {
    #[serde(rename = "openai-like")]
    OpenaiLike,
    #[serde(rename = "gemini-like")]
    GeminiLike,
    #[serde(rename = "mistral-like")]
    MistralLike,
    #[serde(rename = "mock")]
    Mock,
}

impl ProviderKind {
    pub fn default_key_env(self) -> Option<&'static str> {
        match self {
            Self::OpenaiLike => Some("OPENAI_API_KEY"),
            Self::GeminiLike => Some("GOOGLE_API_KEY"),
            Self::MistralLike => Some("MISTRAL_API_KEY"),
            Self::Mock => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default)]
    pub vision: bool,
    #[serde(default)]
    pub native_structured_output: bool,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the API key; never the key.
    #[serde(default)]
    pub api_key_ref: Option<String>,
    #[serde(default)]
    pub capabilities: Capabilities,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Total attempt budget for one structured request.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl ProviderConfig {
    pub fn mock(provider_id: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            kind: ProviderKind::Mock,
            model_name: "mock".into(),
            api_key_ref: None,
            capabilities: Capabilities {
                vision: true,
                native_structured_output: false,
            },
            base_url: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            enabled: true,
        }
    }

    pub fn openai(model: impl Into<String>) -> Self {
        Self {
            provider_id: "openai".into(),
            kind: ProviderKind::OpenaiLike,
            model_name: model.into(),
            api_key_ref: Some("OPENAI_API_KEY".into()),
            capabilities: Capabilities {
                vision: true,
                native_structured_output: true,
            },
            base_url: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            enabled: true,
        }
    }

    pub fn gemini(model: impl Into<String>) -> Self {
        Self {
            provider_id: "gemini".into(),
            kind: ProviderKind::GeminiLike,
            model_name: model.into(),
            api_key_ref: Some("GOOGLE_API_KEY".into()),
            capabilities: Capabilities::default(),
            base_url: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            enabled: true,
        }
    }

    pub fn mistral(model: impl Into<String>) -> Self {
        Self {
            provider_id: "mistral".into(),
            kind: ProviderKind::MistralLike,
            model_name: model.into(),
            api_key_ref: Some("MISTRAL_API_KEY".into()),
            capabilities: Capabilities::default(),
            base_url: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            enabled: true,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.provider_id = id.into();
        self
    }

    pub fn with_capabilities(mut self, vision: bool, native_structured_output: bool) -> Self {
        self.capabilities = Capabilities {
            vision,
            native_structured_output,
        };
        self
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    pub fn disabled(mut self) -> Self {
        self.enabled = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageMediaType {
    #[serde(rename = "image/png")]
    Png,
    #[serde(rename = "image/jpeg")]
    Jpeg,
}

impl ImageMediaType {
    pub fn mime(self) -> &'static str {
        match self {
            Self::Png => "image/png",
            Self::Jpeg => "image/jpeg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "png" | "image/png" => Some(Self::Png),
            "jpeg" | "jpg" | "image/jpeg" | "image/jpg" => Some(Self::Jpeg),
            _ => None,
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub enum UserPart {
    Text(String),
    Image {
        data: Vec<u8>,
        media_type: ImageMediaType,
    },
}

impl fmt::Debug for UserPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Text(t) => f.debug_tuple("Text").field(t).finish(),
            Self::Image { data, media_type } => f
                .debug_struct("Image")
                .field("bytes", &data.len())
                .field("media_type", media_type)
                .finish(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "provider_id")]
pub enum ProviderSelector {
    Fixed(String),
    RandomEnabled,
}

#[derive(Debug, Clone)]
pub struct StructuredRequest {
    /// Stable identifier of the call site, e.g. `go_single_agent`.
    pub purpose_tag: String,
    pub system_prompt: String,
    pub user_parts: Vec<UserPart>,
    pub response_schema: Value,
    pub temperature: f32,
    pub seed: Option<u64>,
    /// `None` means the gateway's default provider.
    pub provider_selector: Option<ProviderSelector>,
}

impl StructuredRequest {
    pub fn new(purpose_tag: impl Into<String>, system_prompt: impl Into<String>, schema: Value) -> Self {
        Self {
            purpose_tag: purpose_tag.into(),
            system_prompt: system_prompt.into(),
            user_parts: Vec::new(),
            response_schema: schema,
            temperature: TEMPERATURE_DETERMINISTIC,
            seed: None,
            provider_selector: None,
        }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.user_parts.push(UserPart::Text(text.into()));
        self
    }

    pub fn image(mut self, data: Vec<u8>, media_type: ImageMediaType) -> Self {
        self.user_parts.push(UserPart::Image { data, media_type });
        self
    }

    pub fn temperature(mut self, t: f32) -> Self {
        self.temperature = t;
        self
    }

    pub fn seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn provider(mut self, selector: ProviderSelector) -> Self {
        self.provider_selector = Some(selector);
        self
    }

    pub fn has_images(&self) -> bool {
        self.user_parts
            .iter()
            .any(|p| matches!(p, UserPart::Image { .. }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredResponse {
    pub document: Value,
    pub provider_id: String,
    pub attempts: u32,
    pub raw_text: String,
}

/// What a provider receives for one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderCall {
    pub purpose_tag: String,
    pub system_prompt: String,
    pub user_parts: Vec<UserPart>,
    pub response_schema: Value,
    /// True when the schema was embedded in `system_prompt` because the
    /// provider has no native enforcement channel.
    pub schema_in_prompt: bool,
    pub temperature: f32,
    pub seed: Option<u64>,
    pub attempt: u32,
}

impl ProviderCall {
    /// System prompt followed by every text part, newline separated.
    pub fn body_text(&self) -> String {
        let mut out = self.system_prompt.clone();
        for p in &self.user_parts {
            if let UserPart::Text(t) = p {
                out.push('\n');
                out.push_str(t);
            }
        }
        out
    }

    pub fn text_parts(&self) -> impl Iterator<Item = &str> {
        self.user_parts.iter().filter_map(|p| match p {
            UserPart::Text(t) => Some(t.as_str()),
            _ => None,
        })
    }

    pub fn has_images(&self) -> bool {
        self.user_parts
            .iter()
            .any(|p| matches!(p, UserPart::Image { .. }))
    }
}

/// Failure inside a single provider attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport error: {0}")]
    Transport(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, config: &ProviderConfig, call: &ProviderCall) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("[{provider_id}/{purpose_tag}] reply violated the response schema after {attempts} attempts: {detail}")]
    SchemaViolation {
        provider_id: String,
        purpose_tag: String,
        attempts: u32,
        detail: String,
        last_raw: String,
    },
    #[error("[{provider_id}/{purpose_tag}] request timed out")]
    Timeout {
        provider_id: String,
        purpose_tag: String,
    },
    #[error("[{provider_id}/{purpose_tag}] authentication failed: {message}")]
    Authentication {
        provider_id: String,
        purpose_tag: String,
        message: String,
    },
    #[error("[{provider_id}/{purpose_tag}] transport error: {message}")]
    Transport {
        provider_id: String,
        purpose_tag: String,
        message: String,
    },
    #[error("[{purpose_tag}] no enabled provider has vision capability")]
    NoVisionProvider { purpose_tag: String },
    #[error("provider `{provider_id}` is not configured or not enabled")]
    ProviderNotEnabled { provider_id: String },
    #[error("no providers are enabled")]
    NoProviders,
    #[error("[{purpose_tag}] invalid request: {message}")]
    InvalidRequest { purpose_tag: String, message: String },
}

impl GatewayError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::SchemaViolation { .. } => "SCHEMA_VIOLATION",
            Self::Timeout { .. } => "TIMEOUT",
            Self::Authentication { .. } => "AUTHENTICATION_FAILED",
            Self::Transport { .. } => "TRANSPORT_ERROR",
            Self::NoVisionProvider { .. } => "NO_VISION_PROVIDER",
            Self::ProviderNotEnabled { .. } => "PROVIDER_NOT_ENABLED",
            Self::NoProviders => "NO_PROVIDERS",
            Self::InvalidRequest { .. } => "INVALID_REQUEST",
        }
    }

    pub fn is_schema_violation(&self) -> bool {
        matches!(self, Self::SchemaViolation { .. })
    }
}

/// Pick a provider among `enabled`. A random selector draws uniformly from
/// `rng`; a fixed one must name an enabled provider.
pub fn choose_provider<R: Rng + ?Sized>(
    selector: &ProviderSelector,
    enabled: &[&ProviderConfig],
    rng: &mut R,
) -> Result<String, GatewayError> {
    let enabled: Vec<&&ProviderConfig> = enabled.iter().filter(|p| p.enabled).collect();
    if enabled.is_empty() {
        return Err(GatewayError::NoProviders);
    }
    match selector {
        ProviderSelector::Fixed(id) => enabled
            .iter()
            .find(|p| &p.provider_id == id)
            .map(|p| p.provider_id.clone())
            .ok_or_else(|| GatewayError::ProviderNotEnabled {
                provider_id: id.clone(),
            }),
        ProviderSelector::RandomEnabled => {
            let i = rng.random_range(0..enabled.len());
            Ok(enabled[i].provider_id.clone())
        }
    }
}

/// Seeded form of [`choose_provider`]: the same seed always yields the same id.
pub fn select_provider(
    selector: &ProviderSelector,
    enabled: &[ProviderConfig],
    seed: u64,
) -> Result<String, GatewayError> {
    let refs: Vec<&ProviderConfig> = enabled.iter().collect();
    choose_provider(selector, &refs, &mut ChaCha8Rng::seed_from_u64(seed))
}

struct Registered {
    config: ProviderConfig,
    provider: Arc<dyn Provider>,
}

/// Shareable handle over the configured providers.
pub struct Gateway {
    providers: Vec<Registered>,
    default_provider: String,
    limiter: InFlightLimiter,
    rng: Mutex<ChaCha8Rng>,
    /// Compiled validators keyed by the serialized schema.
    validators: Mutex<HashMap<String, Arc<jsonschema::Validator>>>,
}

/// Schemas are few and fixed per purpose; this only bounds pathological use.
const VALIDATOR_CACHE_LIMIT: usize = 64;

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field(
                "providers",
                &self
                    .providers
                    .iter()
                    .map(|p| p.config.provider_id.as_str())
                    .collect::<Vec<_>>(),
            )
            .field("default_provider", &self.default_provider)
            .finish()
    }
}

impl Gateway {
    /// The first enabled provider becomes the default.
    pub fn new(providers: Vec<(ProviderConfig, Arc<dyn Provider>)>) -> Result<Self, GatewayError> {
        let mut seen = HashSet::new();
        for (cfg, _) in &providers {
            if !seen.insert(cfg.provider_id.clone()) {
                return Err(GatewayError::InvalidRequest {
                    purpose_tag: "gateway_config".into(),
                    message: format!("duplicate provider_id `{}`", cfg.provider_id),
                });
            }
            if cfg.timeout_secs == 0 {
                return Err(GatewayError::InvalidRequest {
                    purpose_tag: "gateway_config".into(),
                    message: format!("provider `{}` has a zero timeout", cfg.provider_id),
                });
            }
        }
        let default_provider = providers
            .iter()
            .find(|(c, _)| c.enabled)
            .map(|(c, _)| c.provider_id.clone())
            .ok_or(GatewayError::NoProviders)?;
        Ok(Self {
            providers: providers
                .into_iter()
                .map(|(config, provider)| Registered { config, provider })
                .collect(),
            default_provider,
            limiter: InFlightLimiter::new(DEFAULT_IN_FLIGHT),
            rng: Mutex::new(ChaCha8Rng::from_os_rng()),
            validators: Mutex::default(),
        })
    }

    /// A gateway over a single mock provider.
    pub fn with_mock(config: ProviderConfig, mock: Arc<MockProvider>) -> Self {
        Self::new(vec![(config, mock as Arc<dyn Provider>)]).expect("single mock provider is valid")
    }

    /// Build HTTP-backed providers from configuration. Mock entries share
    /// the supplied mock instance (a synthesizing one when `None`).
    pub fn from_configs(
        configs: Vec<ProviderConfig>,
        mock: Option<Arc<MockProvider>>,
    ) -> Result<Self, GatewayError> {
        let http: Arc<dyn Provider> = Arc::new(HttpProvider::new());
        let mock = mock.unwrap_or_else(|| Arc::new(MockProvider::synthesizing()));
        let providers = configs
            .into_iter()
            .map(|c| {
                let p: Arc<dyn Provider> = match c.kind {
                    ProviderKind::Mock => mock.clone(),
                    _ => http.clone(),
                };
                (c, p)
            })
            .collect();
        Self::new(providers)
    }

    pub fn with_default_provider(mut self, id: &str) -> Result<Self, GatewayError> {
        if !self.enabled_configs().iter().any(|c| c.provider_id == id) {
            return Err(GatewayError::ProviderNotEnabled {
                provider_id: id.into(),
            });
        }
        self.default_provider = id.into();
        Ok(self)
    }

    pub fn with_in_flight_limit(mut self, n: usize) -> Self {
        self.limiter = InFlightLimiter::new(n);
        self
    }

    fn validator(&self, key: &str, schema: &Value) -> Result<Arc<jsonschema::Validator>, String> {
        if let Some(v) = self.validators.lock().unwrap().get(key) {
            return Ok(v.clone());
        }
        let compiled = Arc::new(jsonschema::validator_for(schema).map_err(|e| e.to_string())?);
        let mut cache = self.validators.lock().unwrap();
        if cache.len() >= VALIDATOR_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key.to_string(), compiled.clone());
        Ok(compiled)
    }

    pub fn with_selection_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap() = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn default_provider(&self) -> &str {
        &self.default_provider
    }

    pub fn enabled_configs(&self) -> Vec<&ProviderConfig> {
        self.providers
            .iter()
            .map(|p| &p.config)
            .filter(|c| c.enabled)
            .collect()
    }

    pub fn config(&self, id: &str) -> Option<&ProviderConfig> {
        self.providers
            .iter()
            .map(|p| &p.config)
            .find(|c| c.provider_id == id)
    }

    /// First enabled vision-capable provider, preferring the default.
    pub fn vision_provider(&self) -> Option<&str> {
        let enabled = self.enabled_configs();
        enabled
            .iter()
            .find(|c| c.provider_id == self.default_provider && c.capabilities.vision)
            .or_else(|| enabled.iter().find(|c| c.capabilities.vision))
            .map(|c| c.provider_id.as_str())
    }

    pub fn limiter(&self) -> &InFlightLimiter {
        &self.limiter
    }

    /// Issue independent requests concurrently, returning results in input
    /// order. No more workers are started than the in-flight limit admits,
    /// and a single request runs on the calling thread.
    pub fn complete_all(
        &self,
        requests: &[StructuredRequest],
    ) -> Vec<Result<StructuredResponse, GatewayError>> {
        let workers = requests.len().min(self.limiter.limit());
        if workers <= 1 {
            return requests.iter().map(|r| self.complete_structured(r)).collect();
        }
        let next = std::sync::atomic::AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<StructuredResponse, GatewayError>>> =
            (0..requests.len()).map(|_| None).collect();
        let done = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut out = Vec::new();
                        loop {
                            let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                            let Some(req) = requests.get(i) else { break out };
                            out.push((i, self.complete_structured(req)));
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gateway worker panicked"))
                .collect::<Vec<_>>()
        });
        for (i, r) in done {
            slots[i] = Some(r);
        }
        slots.into_iter().map(|r| r.expect("every request ran")).collect()
    }

    fn resolve(&self, request: &StructuredRequest) -> Result<&Registered, GatewayError> {
        let images = request.has_images();
        let candidates: Vec<&ProviderConfig> = self
            .enabled_configs()
            .into_iter()
            .filter(|c| !images || c.capabilities.vision)
            .collect();
        let selector = request
            .provider_selector
            .clone()
            .unwrap_or_else(|| ProviderSelector::Fixed(self.default_provider.clone()));
        if images && candidates.is_empty() {
            return Err(GatewayError::NoVisionProvider {
                purpose_tag: request.purpose_tag.clone(),
            });
        }
        let id = {
            let mut rng = self.rng.lock().unwrap();
            match choose_provider(&selector, &candidates, &mut *rng) {
                Err(GatewayError::ProviderNotEnabled { provider_id })
                    if images && self.enabled_configs().iter().any(|c| c.provider_id == provider_id) =>
                {
                    return Err(GatewayError::NoVisionProvider {
                        purpose_tag: request.purpose_tag.clone(),
                    })
                }
                other => other?,
            }
        };
        Ok(self
            .providers
            .iter()
            .find(|p| p.config.provider_id == id)
            .expect("chosen provider is registered"))
    }

    /// Issue a structured request. The returned document always validates
    /// against `request.response_schema`.
    pub fn complete_structured(
        &self,
        request: &StructuredRequest,
    ) -> Result<StructuredResponse, GatewayError> {
        let invalid = |message: String| GatewayError::InvalidRequest {
            purpose_tag: request.purpose_tag.clone(),
            message,
        };
        if request.user_parts.is_empty() {
            return Err(invalid("request has no user parts".into()));
        }
        if request
            .response_schema
            .as_object()
            .is_none_or(|o| o.is_empty())
        {
            return Err(invalid("response schema is empty".into()));
        }
        let schema_text = request.response_schema.to_string();
        let validator = self
            .validator(&schema_text, &request.response_schema)
            .map_err(|e| invalid(format!("response schema does not compile: {e}")))?;

        let registered = self.resolve(request)?;
        let cfg = &registered.config;
        let native = cfg.capabilities.native_structured_output;
        let system_prompt = if native {
            request.system_prompt.clone()
        } else {
            format!(
                "{}\n\nRespond only with a single JSON document that conforms to this JSON schema:\n{}",
                request.system_prompt, schema_text
            )
        };

        let budget = cfg.max_retries.max(1);
        let mut parts = request.user_parts.clone();
        let mut last = (String::new(), String::new());
        for attempt in 1..=budget {
            let call = ProviderCall {
                purpose_tag: request.purpose_tag.clone(),
                system_prompt: system_prompt.clone(),
                user_parts: parts.clone(),
                response_schema: request.response_schema.clone(),
                schema_in_prompt: !native,
                temperature: request.temperature,
                seed: request.seed,
                attempt,
            };
            let raw = {
                let _permit = self.limiter.acquire();
                registered.provider.complete(cfg, &call)
            }
            .map_err(|e| self.map_provider_error(e, cfg, request))?;

            match parse_document(&raw).and_then(|doc| {
                let errors: Vec<String> = validator
                    .iter_errors(&doc)
                    .take(5)
                    .map(|e| {
                        let path = e.instance_path.to_string();
                        if path.is_empty() {
                            e.to_string()
                        } else {
                            format!("{path}: {e}")
                        }
                    })
                    .collect();
                if errors.is_empty() {
                    Ok(doc)
                } else {
                    Err(errors.join("; "))
                }
            }) {
                Ok(document) => {
                    tracing::debug!(
                        provider = %cfg.provider_id,
                        purpose = %request.purpose_tag,
                        attempt,
                        "structured request satisfied"
                    );
                    return Ok(StructuredResponse {
                        document,
                        provider_id: cfg.provider_id.clone(),
                        attempts: attempt,
                        raw_text: raw,
                    });
                }
                Err(detail) => {
                    tracing::warn!(
                        provider = %cfg.provider_id,
                        purpose = %request.purpose_tag,
                        attempt,
                        %detail,
                        "reply rejected by schema"
                    );
                    if attempt < budget {
                        parts.push(UserPart::Text(corrective_message(&detail, &raw)));
                    }
                    last = (raw, detail);
                }
            }
        }
        Err(GatewayError::SchemaViolation {
            provider_id: cfg.provider_id.clone(),
            purpose_tag: request.purpose_tag.clone(),
            attempts: budget,
            detail: last.1,
            last_raw: last.0,
        })
    }

    fn map_provider_error(
        &self,
        e: ProviderError,
        cfg: &ProviderConfig,
        request: &StructuredRequest,
    ) -> GatewayError {
        tracing::warn!(provider = %cfg.provider_id, purpose = %request.purpose_tag, error = %e, "provider call failed");
        let provider_id = cfg.provider_id.clone();
        let purpose_tag = request.purpose_tag.clone();
        match e {
            ProviderError::Timeout => GatewayError::Timeout {
                provider_id,
                purpose_tag,
            },
            ProviderError::Auth(message) => GatewayError::Authentication {
                provider_id,
                purpose_tag,
                message,
            },
            ProviderError::Transport(message) => GatewayError::Transport {
                provider_id,
                purpose_tag,
                message,
            },
        }
    }
}

fn corrective_message(detail: &str, raw: &str) -> String {
    format!(
        "Your previous reply was rejected because it does not conform to the required JSON schema: {detail}\n\
         Previous reply:\n{raw}\n\
         Reply again with only a JSON document that conforms to the schema."
    )
}

/// Parse a reply, tolerating surrounding whitespace and a Markdown code fence.
pub fn parse_document(raw: &str) -> Result<Value, String> {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        text = rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    serde_json::from_str(text).map_err(|e| format!("reply is not valid JSON: {e}"))
}
