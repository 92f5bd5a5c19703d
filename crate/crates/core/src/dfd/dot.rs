use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{validate_dfd, Dfd, DfdNodeKind, EdgeId, NodeRef};
use crate::model::ValidationIssue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RankDir {
    #[default]
    LR,
    TB,
    RL,
    BT,
}

impl RankDir {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::LR => "LR",
            Self::TB => "TB",
            Self::RL => "RL",
            Self::BT => "BT",
        }
    }
}

impl std::str::FromStr for RankDir {
    type Err = crate::error::ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LR" => Ok(Self::LR),
            "TB" => Ok(Self::TB),
            "RL" => Ok(Self::RL),
            "BT" => Ok(Self::BT),
            _ => Err(crate::error::ParseEnumError::new("rankdir", s)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotOptions {
    #[serde(default)]
    pub rankdir: RankDir,
    #[serde(default)]
    pub highlight_edge: Option<EdgeId>,
}

const HIGHLIGHT_COLOR: &str = "red";

fn shape(kind: DfdNodeKind) -> &'static str {
    match kind {
        DfdNodeKind::Entity => "box",
        DfdNodeKind::Process => "ellipse",
        DfdNodeKind::DataStore => "cylinder",
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Render the DFD as a Graphviz digraph. Nodes get synthetic ids `n0..`
/// in first-appearance order and carry their name as label.
pub fn render_dot(dfd: &Dfd, options: &DotOptions) -> Result<String, Vec<ValidationIssue>> {
    let errors: Vec<_> = validate_dfd(dfd)
        .into_iter()
        .filter(ValidationIssue::is_error)
        .collect();
    if !errors.is_empty() {
        return Err(errors);
    }

    let nodes = dfd.nodes();
    let ids: HashMap<&NodeRef<'_>, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();

    let mut out = String::new();
    out.push_str("digraph dfd {\n");
    let _ = writeln!(out, "  rankdir={};", options.rankdir.as_str());
    for (i, n) in nodes.iter().enumerate() {
        let _ = writeln!(
            out,
            "  n{i} [label={}, shape={}];",
            quote(n.name),
            shape(n.kind)
        );
    }
    for e in &dfd.edges {
        let mut attrs = vec![
            format!("id={}", quote(e.id.as_str())),
            format!("label={}", quote(&e.data_label)),
        ];
        if e.crosses_trust_boundary {
            attrs.push("style=dashed".into());
        }
        if options.highlight_edge.as_ref() == Some(&e.id) {
            attrs.push(format!("color={HIGHLIGHT_COLOR}"));
            attrs.push("penwidth=2".into());
        }
        let _ = writeln!(
            out,
            "  n{} -> n{} [{}];",
            ids[&e.source()],
            ids[&e.destination()],
            attrs.join(", ")
        );
    }
    out.push_str("}\n");
    Ok(out)
}
