use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{require_valid_profile, system_description, ElicitError};
use crate::dfd::{DfdEdge, EdgeId};
use crate::gateway::{Gateway, StructuredRequest, TEMPERATURE_DETERMINISTIC};
use crate::kb::{applicable_locations, KnowledgeBase, MappingTable, ThreatTree};
use crate::model::{ApplicationProfile, LinddunCategory, Methodology, Session, Threat, ThreatLocation};

pub const PURPOSE_PRO_EDGE: &str = "pro_edge_analysis";

const SYSTEM_PROMPT: &str = "You are a privacy engineer performing a LINDDUN PRO analysis of one \
interaction in a data flow diagram. You receive the system description, the interaction, a \
description of the data flow, the location to analyze (the source element, the data flow \
itself, or the destination element), one LINDDUN threat category and that category's threat \
tree. Identify the most probable threat of that category at that location. Name the most \
specific threat tree node that matches it, give the threat a short title and describe how it \
arises in this system.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProFinding {
    pub edge_ref: EdgeId,
    pub location: ThreatLocation,
    pub category: LinddunCategory,
    pub tree_node: String,
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProFailure {
    pub category: LinddunCategory,
    pub location: ThreatLocation,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ProReport {
    pub findings: Vec<ProFinding>,
    pub failures: Vec<ProFailure>,
}

/// Response schema for one (category, location) request. Node ids are
/// restricted to the category's tree.
pub fn pro_finding_schema(tree: &ThreatTree) -> Value {
    json!({
        "type": "object",
        "properties": {
            "tree_node": {"type": "string", "enum": tree.node_ids()},
            "title": {"type": "string", "minLength": 1},
            "description": {"type": "string", "minLength": 1}
        },
        "required": ["tree_node", "title", "description"],
        "additionalProperties": false
    })
}

/// The (category, location) pairs admitted by the mapping table, categories
/// in canonical order and locations source, flow, destination.
pub fn pro_pairs(
    table: &MappingTable,
    edge: &DfdEdge,
    categories: &BTreeSet<LinddunCategory>,
) -> Vec<(LinddunCategory, ThreatLocation)> {
    categories
        .iter()
        .flat_map(|&c| {
            applicable_locations(table, edge, c)
                .into_iter()
                .map(move |l| (c, l))
        })
        .collect()
}

fn location_text(edge: &DfdEdge, location: ThreatLocation) -> String {
    match location {
        ThreatLocation::Source => format!(
            "Location to analyze: the source element \"{}\" ({})",
            edge.from_name, edge.from_kind
        ),
        ThreatLocation::Flow => format!(
            "Location to analyze: the data flow \"{}\" from \"{}\" to \"{}\"",
            edge.data_label, edge.from_name, edge.to_name
        ),
        ThreatLocation::Destination => format!(
            "Location to analyze: the destination element \"{}\" ({})",
            edge.to_name, edge.to_kind
        ),
    }
}

#[derive(Deserialize)]
struct FindingDoc {
    tree_node: String,
    title: String,
    description: String,
}

/// Analyze one edge for the selected categories: one request per admitted
/// (category, location) pair, issued concurrently. Per-pair failures are
/// collected and the rest of the batch continues.
pub fn pro_analyze_edge(
    edge: &DfdEdge,
    flow_description: &str,
    categories: &BTreeSet<LinddunCategory>,
    kb: &KnowledgeBase,
    profile: &ApplicationProfile,
    gateway: &Gateway,
) -> Result<ProReport, ElicitError> {
    if flow_description.trim().is_empty() {
        return Err(ElicitError::InvalidArgument("flow_description is empty".into()));
    }
    if categories.is_empty() {
        return Err(ElicitError::InvalidArgument("no LINDDUN category selected".into()));
    }
    require_valid_profile(profile)?;

    let context = system_description(profile, None);
    let pairs = pro_pairs(&kb.mapping, edge, categories);
    let requests: Vec<_> = pairs
        .iter()
        .map(|&(category, location)| {
            let tree = kb.trees.tree(category);
            StructuredRequest::new(PURPOSE_PRO_EDGE, SYSTEM_PROMPT, pro_finding_schema(tree))
                .text(context.clone())
                .text(format!("Interaction under analysis:\n{}", edge.to_prompt_text()))
                .text(format!("Data flow description:\n{flow_description}"))
                .text(location_text(edge, location))
                .text(format!(
                    "LINDDUN category: {}\nThreat tree for this category:\n{}",
                    category.display_name(),
                    tree.to_prompt_text()
                ))
                .temperature(TEMPERATURE_DETERMINISTIC)
        })
        .collect();

    let results = gateway.complete_all(&requests);

    let mut report = ProReport::default();
    for ((category, location), result) in pairs.into_iter().zip(results) {
        match result {
            Ok(response) => {
                let doc: FindingDoc = serde_json::from_value(response.document)
                    .expect("document was validated against the finding schema");
                debug_assert_eq!(kb.trees.category_of(&doc.tree_node), Some(category));
                report.findings.push(ProFinding {
                    edge_ref: edge.id.clone(),
                    location,
                    category,
                    tree_node: doc.tree_node,
                    title: doc.title,
                    description: doc.description,
                });
            }
            Err(e) => {
                tracing::warn!(category = %category, location = %location, code = e.code(), "PRO request failed");
                report.failures.push(ProFailure {
                    category,
                    location,
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProRun {
    pub threats: Vec<Threat>,
    pub failures: Vec<ProFailure>,
}

/// Analyze an edge of the session DFD and append the findings as threats.
pub fn elicit_pro(
    session: &mut Session,
    kb: &KnowledgeBase,
    edge_id: &EdgeId,
    flow_description: &str,
    categories: &BTreeSet<LinddunCategory>,
    gateway: &Gateway,
) -> Result<ProRun, ElicitError> {
    let dfd = session.dfd.as_ref().ok_or(ElicitError::NoDfd)?;
    let edge = dfd
        .edge(edge_id)
        .ok_or_else(|| ElicitError::UnknownEdge(edge_id.to_string()))?
        .clone();
    let report = pro_analyze_edge(&edge, flow_description, categories, kb, &session.profile, gateway)?;
    let threats: Vec<Threat> = report
        .findings
        .into_iter()
        .map(|f| {
            Threat::linddun_pro(
                session.next_threat_id(Methodology::LinddunPro),
                f.edge_ref,
                f.location,
                f.category,
                f.tree_node,
                f.title,
                f.description,
            )
        })
        .collect();
    session
        .elicitation_results
        .linddun_pro
        .extend(threats.iter().cloned());
    session.touch();
    Ok(ProRun {
        threats,
        failures: report.failures,
    })
}
