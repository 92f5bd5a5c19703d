//! Domain types shared across the workbench: LINDDUN categories, the
//! application profile, normalized threats, and the persistent session.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dfd::{Dfd, EdgeId};
use crate::elicitation::GoRecord;
use crate::error::ParseEnumError;

/// Version written into every session document.
pub const SCHEMA_VERSION: u32 = 1;

/// The seven LINDDUN privacy threat categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinddunCategory {
    Linking,
    Identifying,
    NonRepudiation,
    Detecting,
    DataDisclosure,
    Unawareness,
    NonCompliance,
}

impl LinddunCategory {
    pub const ALL: [LinddunCategory; 7] = [
        LinddunCategory::Linking,
        LinddunCategory::Identifying,
        LinddunCategory::NonRepudiation,
        LinddunCategory::Detecting,
        LinddunCategory::DataDisclosure,
        LinddunCategory::Unawareness,
        LinddunCategory::NonCompliance,
    ];

    /// Short code used as the root id of the category's threat tree.
    pub fn code(self) -> &'static str {
        match self {
            Self::Linking => "L",
            Self::Identifying => "I",
            Self::NonRepudiation => "Nr",
            Self::Detecting => "D",
            Self::DataDisclosure => "DD",
            Self::Unawareness => "U",
            Self::NonCompliance => "Nc",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    /// Serialized name, identical to the serde representation.
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linking => "Linking",
            Self::Identifying => "Identifying",
            Self::NonRepudiation => "NonRepudiation",
            Self::Detecting => "Detecting",
            Self::DataDisclosure => "DataDisclosure",
            Self::Unawareness => "Unawareness",
            Self::NonCompliance => "NonCompliance",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Linking => "Linking",
            Self::Identifying => "Identifying",
            Self::NonRepudiation => "Non-repudiation",
            Self::Detecting => "Detecting",
            Self::DataDisclosure => "Data Disclosure",
            Self::Unawareness => "Unawareness",
            Self::NonCompliance => "Non-compliance",
        }
    }
}

impl fmt::Display for LinddunCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for LinddunCategory {
    type Err = ParseEnumError;

    /// Accepts the serialized name, the display name, or the tree code
    /// (case-insensitive for names).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Some(c) = Self::from_code(t) {
            return Ok(c);
        }
        let norm: String = t
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().to_ascii_lowercase() == norm)
            .ok_or_else(|| ParseEnumError::new("LINDDUN category", s))
    }
}

/// Which elicitation method produced a threat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Methodology {
    ZeroShot,
    LinddunGo,
    LinddunPro,
}

impl Methodology {
    pub const ALL: [Methodology; 3] = [Self::ZeroShot, Self::LinddunGo, Self::LinddunPro];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ZeroShot => "zero_shot",
            Self::LinddunGo => "linddun_go",
            Self::LinddunPro => "linddun_pro",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::ZeroShot => "Zero-shot threat model",
            Self::LinddunGo => "LINDDUN GO",
            Self::LinddunPro => "LINDDUN PRO",
        }
    }

    fn id_prefix(self) -> &'static str {
        match self {
            Self::ZeroShot => "zs",
            Self::LinddunGo => "go",
            Self::LinddunPro => "pro",
        }
    }
}

impl fmt::Display for Methodology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Methodology {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "zero_shot" | "zeroshot" => Ok(Self::ZeroShot),
            "linddun_go" | "go" => Ok(Self::LinddunGo),
            "linddun_pro" | "pro" => Ok(Self::LinddunPro),
            _ => Err(ParseEnumError::new("methodology", s)),
        }
    }
}

/// Where on a DFD edge a PRO threat sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreatLocation {
    Source,
    Flow,
    Destination,
}

impl ThreatLocation {
    pub const ALL: [ThreatLocation; 3] = [Self::Source, Self::Flow, Self::Destination];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Source => "source",
            Self::Flow => "flow",
            Self::Destination => "destination",
        }
    }
}

impl fmt::Display for ThreatLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppKind {
    #[default]
    Web,
    Mobile,
    Desktop,
    Iot,
    Other,
}

impl AppKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Web => "web",
            Self::Mobile => "mobile",
            Self::Desktop => "desktop",
            Self::Iot => "iot",
            Self::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AppType {
    pub kind: AppKind,
    #[serde(default)]
    pub label: String,
}

/// One row of the "types of data collected" table.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DataTypeRow {
    pub name: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub collected_from: String,
    #[serde(default)]
    pub stored: bool,
    #[serde(default)]
    pub encrypted_at_rest: bool,
    #[serde(default)]
    pub shared_with_third_parties: bool,
    #[serde(default)]
    pub notes: String,
}

/// Textual description of the system under analysis.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ApplicationProfile {
    #[serde(default)]
    pub app_type: AppType,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub data_policy: String,
    #[serde(default)]
    pub authentication_methods: Vec<String>,
    #[serde(default)]
    pub data_types: Vec<DataTypeRow>,
}

impl ApplicationProfile {
    /// Plain-text rendering handed to the LLM as the system description.
    pub fn to_prompt_text(&self) -> String {
        let mut out = String::new();
        let app_type = if self.app_type.label.is_empty() {
            self.app_type.kind.as_str().to_string()
        } else {
            format!("{} ({})", self.app_type.kind.as_str(), self.app_type.label)
        };
        out.push_str(&format!("Application type: {app_type}\n"));
        out.push_str(&format!("Description: {}\n", self.description));
        if !self.data_policy.is_empty() {
            out.push_str(&format!("Data policy: {}\n", self.data_policy));
        }
        if !self.authentication_methods.is_empty() {
            out.push_str(&format!(
                "Authentication methods: {}\n",
                self.authentication_methods.join(", ")
            ));
        }
        if !self.data_types.is_empty() {
            out.push_str("Data collected:\n");
            for row in &self.data_types {
                out.push_str(&format!(
                    "- {} (category: {}, collected from: {}, stored: {}, encrypted at rest: {}, shared with third parties: {})",
                    row.name,
                    or_unspecified(&row.category),
                    or_unspecified(&row.collected_from),
                    yes_no(row.stored),
                    yes_no(row.encrypted_at_rest),
                    yes_no(row.shared_with_third_parties),
                ));
                if !row.notes.is_empty() {
                    out.push_str(&format!(" notes: {}", row.notes));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn or_unspecified(s: &str) -> &str {
    if s.is_empty() {
        "unspecified"
    } else {
        s
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// Closed set of validation issue codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    // profile
    EmptyDescription,
    DuplicateDataType,
    EmptyDataTypeName,
    // dfd
    EmptyName,
    DuplicateEdgeId,
    NoProcessEndpoint,
    SelfLoop,
    EmptyDataLabel,
    EmptyGeneration,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EmptyDescription => "EMPTY_DESCRIPTION",
            Self::DuplicateDataType => "DUPLICATE_DATA_TYPE",
            Self::EmptyDataTypeName => "EMPTY_DATA_TYPE_NAME",
            Self::EmptyName => "EMPTY_NAME",
            Self::DuplicateEdgeId => "DUPLICATE_EDGE_ID",
            Self::NoProcessEndpoint => "NO_PROCESS_ENDPOINT",
            Self::SelfLoop => "SELF_LOOP",
            Self::EmptyDataLabel => "EMPTY_DATA_LABEL",
            Self::EmptyGeneration => "EMPTY_GENERATION",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub code: IssueCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_ref: Option<EdgeId>,
}

impl ValidationIssue {
    pub fn error(code: IssueCode, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            code,
            message: message.into(),
            edge_ref: None,
        }
    }

    pub fn warning(code: IssueCode, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            code,
            message: message.into(),
            edge_ref: None,
        }
    }

    pub fn on_edge(mut self, edge: &EdgeId) -> Self {
        self.edge_ref = Some(edge.clone());
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

pub fn has_errors(issues: &[ValidationIssue]) -> bool {
    issues.iter().any(ValidationIssue::is_error)
}

/// Check a profile before elicitation. An empty result means the profile is
/// ready; errors block elicitation, warnings do not.
pub fn validate_profile(profile: &ApplicationProfile) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    if profile.description.trim().is_empty() {
        issues.push(ValidationIssue::error(
            IssueCode::EmptyDescription,
            "description empty",
        ));
    }
    let mut seen = HashSet::new();
    for (i, row) in profile.data_types.iter().enumerate() {
        let name = row.name.trim();
        if name.is_empty() {
            issues.push(ValidationIssue::error(
                IssueCode::EmptyDataTypeName,
                format!("data type row {} has an empty name", i + 1),
            ));
            continue;
        }
        if !seen.insert(name.to_string()) {
            issues.push(ValidationIssue::error(
                IssueCode::DuplicateDataType,
                format!("duplicate data type \"{name}\""),
            ));
        }
    }
    issues
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreatId(pub String);

impl ThreatId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ThreatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ThreatId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A privacy pattern chosen as a mitigation for a threat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlMeasure {
    pub pattern_name: String,
    pub relevance: String,
    pub implementation_guidance: String,
}

/// Methodology-specific provenance of a threat. Keeping it as an enum makes
/// the field-presence rules structural.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ThreatOrigin {
    ZeroShot,
    LinddunGo {
        card_ref: String,
    },
    LinddunPro {
        location: ThreatLocation,
        edge_ref: EdgeId,
    },
}

/// A normalized elicited threat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ThreatRepr", into = "ThreatRepr")]
pub struct Threat {
    id: ThreatId,
    origin: ThreatOrigin,
    category: LinddunCategory,
    title: String,
    description: String,
    tree_node: Option<String>,
    pub included: bool,
    pub impact: Option<String>,
    pub controls: Vec<ControlMeasure>,
}

impl Threat {
    fn new(
        id: ThreatId,
        origin: ThreatOrigin,
        category: LinddunCategory,
        title: String,
        description: String,
        tree_node: Option<String>,
    ) -> Self {
        Self {
            id,
            origin,
            category,
            title,
            description,
            tree_node,
            included: false,
            impact: None,
            controls: Vec::new(),
        }
    }

    pub fn zero_shot(
        id: ThreatId,
        category: LinddunCategory,
        title: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self::new(
            id,
            ThreatOrigin::ZeroShot,
            category,
            title.into(),
            description.into(),
            None,
        )
    }

    pub fn linddun_go(
        id: ThreatId,
        card_ref: impl Into<String>,
        category: LinddunCategory,
        title: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self::new(
            id,
            ThreatOrigin::LinddunGo {
                card_ref: card_ref.into(),
            },
            category,
            title.into(),
            description.into(),
            None,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn linddun_pro(
        id: ThreatId,
        edge_ref: EdgeId,
        location: ThreatLocation,
        category: LinddunCategory,
        tree_node: impl Into<String>,
        title: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self::new(
            id,
            ThreatOrigin::LinddunPro { location, edge_ref },
            category,
            title.into(),
            description.into(),
            Some(tree_node.into()),
        )
    }

    pub fn id(&self) -> &ThreatId {
        &self.id
    }

    pub fn methodology(&self) -> Methodology {
        match self.origin {
            ThreatOrigin::ZeroShot => Methodology::ZeroShot,
            ThreatOrigin::LinddunGo { .. } => Methodology::LinddunGo,
            ThreatOrigin::LinddunPro { .. } => Methodology::LinddunPro,
        }
    }

    pub fn origin(&self) -> &ThreatOrigin {
        &self.origin
    }

    pub fn category(&self) -> LinddunCategory {
        self.category
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn tree_node(&self) -> Option<&str> {
        self.tree_node.as_deref()
    }

    pub fn location(&self) -> Option<ThreatLocation> {
        match self.origin {
            ThreatOrigin::LinddunPro { location, .. } => Some(location),
            _ => None,
        }
    }

    pub fn edge_ref(&self) -> Option<&EdgeId> {
        match &self.origin {
            ThreatOrigin::LinddunPro { edge_ref, .. } => Some(edge_ref),
            _ => None,
        }
    }

    pub fn card_ref(&self) -> Option<&str> {
        match &self.origin {
            ThreatOrigin::LinddunGo { card_ref } => Some(card_ref),
            _ => None,
        }
    }

    /// Prompt-ready summary of the threat.
    pub fn to_prompt_text(&self) -> String {
        let mut out = format!(
            "Threat: {}\nLINDDUN category: {}\nDescription: {}\n",
            self.title,
            self.category.display_name(),
            self.description
        );
        if let Some(loc) = self.location() {
            out.push_str(&format!("Location on the data flow: {loc}\n"));
        }
        if let Some(node) = &self.tree_node {
            out.push_str(&format!("Threat tree node: {node}\n"));
        }
        out
    }
}

/// Flat wire form of [`Threat`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThreatRepr {
    id: ThreatId,
    methodology: Methodology,
    category: LinddunCategory,
    title: String,
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    location: Option<ThreatLocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_ref: Option<EdgeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tree_node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    card_ref: Option<String>,
    #[serde(default)]
    included: bool,
    #[serde(default)]
    impact: Option<String>,
    #[serde(default)]
    controls: Vec<ControlMeasure>,
}

impl TryFrom<ThreatRepr> for Threat {
    type Error = String;

    fn try_from(r: ThreatRepr) -> Result<Self, Self::Error> {
        let origin = match r.methodology {
            Methodology::ZeroShot => {
                if r.location.is_some() || r.edge_ref.is_some() || r.card_ref.is_some() {
                    return Err(format!(
                        "threat {}: zero-shot threats carry no location, edge_ref or card_ref",
                        r.id
                    ));
                }
                ThreatOrigin::ZeroShot
            }
            Methodology::LinddunGo => {
                if r.location.is_some() || r.edge_ref.is_some() {
                    return Err(format!(
                        "threat {}: LINDDUN GO threats carry no location or edge_ref",
                        r.id
                    ));
                }
                let card_ref = r
                    .card_ref
                    .ok_or_else(|| format!("threat {}: LINDDUN GO threat without card_ref", r.id))?;
                ThreatOrigin::LinddunGo { card_ref }
            }
            Methodology::LinddunPro => {
                if r.card_ref.is_some() {
                    return Err(format!(
                        "threat {}: LINDDUN PRO threats carry no card_ref",
                        r.id
                    ));
                }
                match (r.location, r.edge_ref) {
                    (Some(location), Some(edge_ref)) => {
                        ThreatOrigin::LinddunPro { location, edge_ref }
                    }
                    _ => {
                        return Err(format!(
                            "threat {}: LINDDUN PRO threat needs both location and edge_ref",
                            r.id
                        ))
                    }
                }
            }
        };
        Ok(Threat {
            id: r.id,
            origin,
            category: r.category,
            title: r.title,
            description: r.description,
            tree_node: r.tree_node,
            included: r.included,
            impact: r.impact,
            controls: r.controls,
        })
    }
}

impl From<Threat> for ThreatRepr {
    fn from(t: Threat) -> Self {
        let methodology = t.methodology();
        let (location, edge_ref, card_ref) = match t.origin {
            ThreatOrigin::ZeroShot => (None, None, None),
            ThreatOrigin::LinddunGo { card_ref } => (None, None, Some(card_ref)),
            ThreatOrigin::LinddunPro { location, edge_ref } => {
                (Some(location), Some(edge_ref), None)
            }
        };
        ThreatRepr {
            id: t.id,
            methodology,
            category: t.category,
            title: t.title,
            description: t.description,
            location,
            edge_ref,
            tree_node: t.tree_node,
            card_ref,
            included: t.included,
            impact: t.impact,
            controls: t.controls,
        }
    }
}

/// General information printed at the top of the report.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    #[serde(default)]
    pub app_name: String,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub organization: String,
    #[serde(default)]
    pub date: String,
    #[serde(default)]
    pub scope_notes: String,
    #[serde(default)]
    pub include_dfd: bool,
}

/// Elicitation output, one list per methodology, plus the raw GO records
/// (verdicts and debate transcripts) for auditing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ElicitationResults {
    #[serde(default)]
    pub zero_shot: Vec<Threat>,
    #[serde(default)]
    pub linddun_go: Vec<Threat>,
    #[serde(default)]
    pub linddun_pro: Vec<Threat>,
    #[serde(default)]
    pub go_records: Vec<GoRecord>,
}

impl ElicitationResults {
    pub fn list(&self, methodology: Methodology) -> &[Threat] {
        match methodology {
            Methodology::ZeroShot => &self.zero_shot,
            Methodology::LinddunGo => &self.linddun_go,
            Methodology::LinddunPro => &self.linddun_pro,
        }
    }

    pub fn list_mut(&mut self, methodology: Methodology) -> &mut Vec<Threat> {
        match methodology {
            Methodology::ZeroShot => &mut self.zero_shot,
            Methodology::LinddunGo => &mut self.linddun_go,
            Methodology::LinddunPro => &mut self.linddun_pro,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Threat> {
        self.zero_shot
            .iter()
            .chain(self.linddun_go.iter())
            .chain(self.linddun_pro.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn generate() -> Self {
        Self(uuid::Uuid::new_v4().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Ids double as file names, so only a conservative alphabet is allowed.
    pub fn is_well_formed(&self) -> bool {
        !self.0.is_empty()
            && self.0.len() <= 128
            && self
                .0
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The persistent unit of work spanning all four phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default)]
    pub profile: ApplicationProfile,
    #[serde(default)]
    pub dfd: Option<Dfd>,
    #[serde(default)]
    pub elicitation_results: ElicitationResults,
    #[serde(default)]
    pub assessment_source: Option<Methodology>,
    #[serde(default)]
    pub report_meta: ReportMeta,
    pub schema_version: u32,
    /// Monotonic counter behind generated threat ids.
    #[serde(default)]
    pub threat_counter: u64,
    /// Top-level fields this version does not know about, kept verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionDocError {
    #[error("incompatible session document: schema_version {found}, this build reads {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("session document has no schema_version")]
    MissingVersion,
    #[error("malformed session document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("invalid session: {0}")]
    Invalid(String),
}

impl Session {
    pub fn new() -> Self {
        Self::with_id(SessionId::generate(), Utc::now())
    }

    pub fn with_id(id: SessionId, now: DateTime<Utc>) -> Self {
        Self {
            id,
            created_at: now,
            updated_at: now,
            profile: ApplicationProfile::default(),
            dfd: None,
            elicitation_results: ElicitationResults::default(),
            assessment_source: None,
            report_meta: ReportMeta::default(),
            schema_version: SCHEMA_VERSION,
            threat_counter: 0,
            extra: Map::new(),
        }
    }

    pub fn touch(&mut self) {
        self.updated_at = Utc::now();
    }

    pub fn next_threat_id(&mut self, methodology: Methodology) -> ThreatId {
        self.threat_counter += 1;
        ThreatId(format!("{}-{}", methodology.id_prefix(), self.threat_counter))
    }

    /// Threats of the current assessment source, empty when none is set.
    pub fn working_set(&self) -> &[Threat] {
        match self.assessment_source {
            Some(m) => self.elicitation_results.list(m),
            None => &[],
        }
    }

    /// Structural checks not expressible in the type system.
    pub fn check(&self) -> Result<(), SessionDocError> {
        if let Some(m) = self.assessment_source {
            if self.elicitation_results.list(m).is_empty() {
                return Err(SessionDocError::Invalid(format!(
                    "assessment_source {m} has no results"
                )));
            }
        }
        let mut ids = HashSet::new();
        for t in self.elicitation_results.all() {
            if !ids.insert(t.id()) {
                return Err(SessionDocError::Invalid(format!(
                    "duplicate threat id {}",
                    t.id()
                )));
            }
        }
        Ok(())
    }

    /// Canonical JSON document form.
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serialization is infallible")
    }

    pub fn from_document(text: &str) -> Result<Self, SessionDocError> {
        let value: Value = serde_json::from_str(text)?;
        let version = value
            .get("schema_version")
            .and_then(Value::as_u64)
            .ok_or(SessionDocError::MissingVersion)?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(SessionDocError::VersionMismatch {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        let session: Session = serde_json::from_value(value)?;
        session.check()?;
        Ok(session)
    }
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

/// Serialize then deserialize through the canonical document form.
pub fn session_roundtrip(session: &Session) -> Result<Session, SessionDocError> {
    Session::from_document(&session.to_document())
}
