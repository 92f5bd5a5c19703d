//! Edge-based data flow diagrams: model, lints, CSV codec, DOT output and
//! LLM-assisted generation.

mod csv;
mod dot;
mod generate;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseEnumError;
use crate::model::{IssueCode, ValidationIssue};

pub use self::csv::{encode_edges_csv, parse_edges_csv, CsvError, CSV_HEADER};
pub use self::dot::{render_dot, DotOptions, RankDir};
pub use self::generate::{
    edge_list_schema, generate_dfd_from_description, generate_dfd_from_image, DfdGenError,
    GeneratedDfd, ImagePayload, DEFAULT_MAX_IMAGE_BYTES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfdNodeKind {
    Entity,
    Process,
    DataStore,
}

impl DfdNodeKind {
    pub const ALL: [DfdNodeKind; 3] = [Self::Entity, Self::Process, Self::DataStore];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Entity => "entity",
            Self::Process => "process",
            Self::DataStore => "data_store",
        }
    }
}

impl fmt::Display for DfdNodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DfdNodeKind {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entity" => Ok(Self::Entity),
            "process" => Ok(Self::Process),
            "data_store" => Ok(Self::DataStore),
            _ => Err(ParseEnumError::new("node kind", s)),
        }
    }
}

/// DFD element kinds as seen by the mapping table: the three node kinds plus
/// the data flow itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Entity,
    Process,
    DataStore,
    DataFlow,
}

impl ElementKind {
    pub const ALL: [ElementKind; 4] = [
        Self::Entity,
        Self::Process,
        Self::DataStore,
        Self::DataFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Entity => "entity",
            Self::Process => "process",
            Self::DataStore => "data_store",
            Self::DataFlow => "data_flow",
        }
    }
}

impl From<DfdNodeKind> for ElementKind {
    fn from(k: DfdNodeKind) -> Self {
        match k {
            DfdNodeKind::Entity => Self::Entity,
            DfdNodeKind::Process => Self::Process,
            DfdNodeKind::DataStore => Self::DataStore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub String);

impl EdgeId {
    /// Id for the edge at zero-based position `index`.
    pub fn sequential(index: usize) -> Self {
        Self(format!("e{}", index + 1))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EdgeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A DFD node is identified by its name together with its kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef<'a> {
    pub name: &'a str,
    pub kind: DfdNodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfdEdge {
    pub id: EdgeId,
    pub from_name: String,
    pub from_kind: DfdNodeKind,
    pub to_name: String,
    pub to_kind: DfdNodeKind,
    #[serde(default)]
    pub data_label: String,
    #[serde(default)]
    pub crosses_trust_boundary: bool,
}

impl DfdEdge {
    pub fn source(&self) -> NodeRef<'_> {
        NodeRef {
            name: &self.from_name,
            kind: self.from_kind,
        }
    }

    pub fn destination(&self) -> NodeRef<'_> {
        NodeRef {
            name: &self.to_name,
            kind: self.to_kind,
        }
    }

    pub fn to_prompt_text(&self) -> String {
        format!(
            "{} ({}) -> {} ({}), data: {}{}",
            self.from_name,
            self.from_kind,
            self.to_name,
            self.to_kind,
            if self.data_label.is_empty() {
                "unspecified"
            } else {
                &self.data_label
            },
            if self.crosses_trust_boundary {
                ", crosses a trust boundary"
            } else {
                ""
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dfd {
    pub edges: Vec<DfdEdge>,
}

impl Dfd {
    pub fn new(edges: Vec<DfdEdge>) -> Self {
        Self { edges }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&DfdEdge> {
        self.edges.iter().find(|e| &e.id == id)
    }

    /// Distinct `(name, kind)` endpoints in first-appearance order.
    pub fn nodes(&self) -> Vec<NodeRef<'_>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for e in &self.edges {
            for n in [e.source(), e.destination()] {
                if seen.insert(n.clone()) {
                    out.push(n);
                }
            }
        }
        out
    }

    /// Reassign ids as `e1..eN` in edge order.
    pub fn renumber(&mut self) {
        for (i, e) in self.edges.iter_mut().enumerate() {
            e.id = EdgeId::sequential(i);
        }
    }

    pub fn to_prompt_text(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!("- [{}] {}\n", e.id, e.to_prompt_text()));
        }
        out
    }
}

/// Lint a DFD. Errors: empty endpoint names, duplicate edge ids. Warnings:
/// edges without a process endpoint, self-loops, empty data labels.
pub fn validate_dfd(dfd: &Dfd) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let mut id_count: HashMap<&EdgeId, usize> = HashMap::new();
    for e in &dfd.edges {
        *id_count.entry(&e.id).or_default() += 1;
    }
    let mut reported = HashSet::new();
    for e in &dfd.edges {
        if id_count[&e.id] > 1 && reported.insert(&e.id) {
            issues.push(
                ValidationIssue::error(
                    IssueCode::DuplicateEdgeId,
                    format!("edge id {} used {} times", e.id, id_count[&e.id]),
                )
                .on_edge(&e.id),
            );
        }
        if e.from_name.trim().is_empty() || e.to_name.trim().is_empty() {
            let which = match (e.from_name.trim().is_empty(), e.to_name.trim().is_empty()) {
                (true, true) => "source and destination names are",
                (true, false) => "source name is",
                _ => "destination name is",
            };
            issues.push(
                ValidationIssue::error(IssueCode::EmptyName, format!("edge {}: {which} empty", e.id))
                    .on_edge(&e.id),
            );
        }
        if e.from_kind != DfdNodeKind::Process && e.to_kind != DfdNodeKind::Process {
            issues.push(
                ValidationIssue::warning(
                    IssueCode::NoProcessEndpoint,
                    format!(
                        "edge {} connects {} to {} without a process",
                        e.id, e.from_kind, e.to_kind
                    ),
                )
                .on_edge(&e.id),
            );
        }
        if e.source() == e.destination() {
            issues.push(
                ValidationIssue::warning(
                    IssueCode::SelfLoop,
                    format!("edge {} loops on {} \"{}\"", e.id, e.from_kind, e.from_name),
                )
                .on_edge(&e.id),
            );
        }
        if e.data_label.trim().is_empty() {
            issues.push(
                ValidationIssue::warning(
                    IssueCode::EmptyDataLabel,
                    format!("edge {} has no data label", e.id),
                )
                .on_edge(&e.id),
            );
        }
    }
    issues
}
