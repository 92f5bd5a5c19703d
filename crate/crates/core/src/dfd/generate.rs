use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::{validate_dfd, Dfd, DfdEdge, DfdNodeKind, EdgeId};
use crate::gateway::{
    Gateway, GatewayError, ImageMediaType, ProviderSelector, StructuredRequest,
    TEMPERATURE_DETERMINISTIC,
};
use crate::model::{has_errors, validate_profile, ApplicationProfile, IssueCode, ValidationIssue};

pub const DEFAULT_MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;

pub const PURPOSE_DFD_FROM_DESCRIPTION: &str = "dfd_from_description";
pub const PURPOSE_DFD_FROM_IMAGE: &str = "dfd_from_image";

const DFD_SYSTEM_PROMPT: &str = "You are a privacy engineer building a data flow diagram (DFD). \
Describe the system as a list of directed edges. Every edge goes from a source element to a \
destination element. Element kinds are `entity` (an external entity such as a user or a third \
party), `process` (code that handles data) and `data_store` (a database, file or cache). Use \
the same name every time an element appears. Label each edge with the data that flows along it \
and mark whether the flow crosses a trust boundary.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub data: Vec<u8>,
    pub media_type: ImageMediaType,
}

/// A generated diagram plus its lint results. The caller decides whether
/// to merge it into or replace the session's DFD.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDfd {
    pub dfd: Dfd,
    pub issues: Vec<ValidationIssue>,
}

#[derive(Debug, Error)]
pub enum DfdGenError {
    #[error("profile is not ready for generation: {}", summarize(.0))]
    InvalidProfile(Vec<ValidationIssue>),
    #[error("image payload of {size} bytes exceeds the {limit} byte limit")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn summarize(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| i.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Response schema: `{ "edges": [DfdEdge without id] }`.
pub fn edge_list_schema() -> Value {
    let kinds: Vec<&str> = DfdNodeKind::ALL.iter().map(|k| k.as_str()).collect();
    json!({
        "type": "object",
        "properties": {
            "edges": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "from_name": {"type": "string", "minLength": 1},
                        "from_kind": {"type": "string", "enum": kinds},
                        "to_name": {"type": "string", "minLength": 1},
                        "to_kind": {"type": "string", "enum": kinds},
                        "data_label": {"type": "string"},
                        "crosses_trust_boundary": {"type": "boolean"}
                    },
                    "required": ["from_name", "from_kind", "to_name", "to_kind", "data_label", "crosses_trust_boundary"],
                    "additionalProperties": false
                }
            }
        },
        "required": ["edges"],
        "additionalProperties": false
    })
}

#[derive(Deserialize)]
struct EdgeDoc {
    from_name: String,
    from_kind: DfdNodeKind,
    to_name: String,
    to_kind: DfdNodeKind,
    data_label: String,
    crosses_trust_boundary: bool,
}

#[derive(Deserialize)]
struct EdgeListDoc {
    edges: Vec<EdgeDoc>,
}

fn into_generated(document: Value) -> GeneratedDfd {
    let doc: EdgeListDoc =
        serde_json::from_value(document).expect("document was validated against the edge schema");
    let dfd = Dfd::new(
        doc.edges
            .into_iter()
            .enumerate()
            .map(|(i, e)| DfdEdge {
                id: EdgeId::sequential(i),
                from_name: e.from_name,
                from_kind: e.from_kind,
                to_name: e.to_name,
                to_kind: e.to_kind,
                data_label: e.data_label,
                crosses_trust_boundary: e.crosses_trust_boundary,
            })
            .collect(),
    );
    let mut issues = validate_dfd(&dfd);
    if dfd.is_empty() {
        issues.push(ValidationIssue::warning(
            IssueCode::EmptyGeneration,
            "the model returned no edges",
        ));
    }
    GeneratedDfd { dfd, issues }
}

pub fn generate_dfd_from_description(
    profile: &ApplicationProfile,
    gateway: &Gateway,
) -> Result<GeneratedDfd, DfdGenError> {
    let issues = validate_profile(profile);
    if has_errors(&issues) {
        return Err(DfdGenError::InvalidProfile(issues));
    }
    let request = StructuredRequest::new(
        PURPOSE_DFD_FROM_DESCRIPTION,
        DFD_SYSTEM_PROMPT,
        edge_list_schema(),
    )
    .text(format!(
        "Build the data flow diagram of this system.\n\n{}",
        profile.to_prompt_text()
    ))
    .temperature(TEMPERATURE_DETERMINISTIC);
    let response = gateway.complete_structured(&request)?;
    Ok(into_generated(response.document))
}

/// Transcribe a DFD picture. Only vision-capable providers are eligible.
pub fn generate_dfd_from_image(
    image: &ImagePayload,
    max_bytes: usize,
    gateway: &Gateway,
) -> Result<GeneratedDfd, DfdGenError> {
    if image.data.len() > max_bytes {
        return Err(DfdGenError::PayloadTooLarge {
            size: image.data.len(),
            limit: max_bytes,
        });
    }
    let provider = gateway
        .vision_provider()
        .ok_or_else(|| GatewayError::NoVisionProvider {
            purpose_tag: PURPOSE_DFD_FROM_IMAGE.into(),
        })?
        .to_string();
    let request = StructuredRequest::new(PURPOSE_DFD_FROM_IMAGE, DFD_SYSTEM_PROMPT, edge_list_schema())
        .text("Transcribe the data flow diagram in the attached image into its list of edges.")
        .image(image.data.clone(), image.media_type)
        .temperature(TEMPERATURE_DETERMINISTIC)
        .provider(ProviderSelector::Fixed(provider));
    let response = gateway.complete_structured(&request)?;
    Ok(into_generated(response.document))
}
