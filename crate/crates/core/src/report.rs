//! Final report: the included threats with their impact and controls,
//! rendered as Markdown.

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::dfd::{render_dot, Dfd, DotOptions};
use crate::model::{has_errors, Methodology, ReportMeta, Session, Threat, ValidationIssue};

pub const NO_THREATS_NOTICE: &str = "No threats were selected for inclusion in this report.";

/// Everything the renderer needs, with the timestamp frozen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportModel {
    pub meta: ReportMeta,
    pub methodology: Methodology,
    pub generated_at: DateTime<Utc>,
    pub threats: Vec<Threat>,
    /// Diagram edges for the edge table; set together with `dfd_dot`.
    pub dfd: Option<Dfd>,
    pub dfd_dot: Option<String>,
    pub notice: Option<String>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no assessment source selected")]
    NoSource,
    #[error("the data flow diagram cannot be rendered: {}", .0.iter().map(|i| i.message.as_str()).collect::<Vec<_>>().join("; "))]
    InvalidDfd(Vec<ValidationIssue>),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoSource => "NO_ASSESSMENT_SOURCE",
            Self::InvalidDfd(_) => "INVALID_DFD",
        }
    }
}

pub fn build_report_model(session: &Session, generated_at: DateTime<Utc>) -> Result<ReportModel, ReportError> {
    let methodology = session.assessment_source.ok_or(ReportError::NoSource)?;
    let threats: Vec<Threat> = session
        .working_set()
        .iter()
        .filter(|t| t.included)
        .cloned()
        .collect();
    let (dfd, dfd_dot) = match (&session.dfd, session.report_meta.include_dfd) {
        (Some(dfd), true) if !dfd.is_empty() => {
            let dot = render_dot(dfd, &DotOptions::default()).map_err(|issues| {
                debug_assert!(has_errors(&issues));
                ReportError::InvalidDfd(issues)
            })?;
            (Some(dfd.clone()), Some(dot))
        }
        _ => (None, None),
    };
    let notice = threats.is_empty().then(|| NO_THREATS_NOTICE.to_string());
    Ok(ReportModel {
        meta: session.report_meta.clone(),
        methodology,
        generated_at,
        threats,
        dfd,
        dfd_dot,
        notice,
    })
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn cell(s: &str) -> String {
    one_line(s).replace('|', "\\|")
}

fn methodology_text(m: Methodology) -> &'static str {
    match m {
        Methodology::ZeroShot => {
            "Threats were elicited with a zero-shot threat model: a single analysis of the system \
             description covering all seven LINDDUN categories."
        }
        Methodology::LinddunGo => {
            "Threats were elicited with LINDDUN GO: cards from the LINDDUN GO deck were evaluated \
             against the system description, and a card yields a threat when the threat it \
             describes was judged present."
        }
        Methodology::LinddunPro => {
            "Threats were elicited with LINDDUN PRO: selected data flows were analyzed at their \
             source, the flow itself and their destination, guided by the LINDDUN mapping table \
             and threat trees."
        }
    }
}

/// Render the report. Output depends only on `model`.
pub fn render_markdown(model: &ReportModel) -> String {
    let mut out = String::new();
    let meta = &model.meta;
    let name = if meta.app_name.trim().is_empty() {
        "Untitled system".to_string()
    } else {
        one_line(&meta.app_name)
    };
    let _ = writeln!(out, "# Privacy Threat Report: {name}\n");
    let date = if meta.date.trim().is_empty() {
        model.generated_at.format("%Y-%m-%d").to_string()
    } else {
        meta.date.clone()
    };
    out.push_str("| Field | Value |\n|---|---|\n");
    for (k, v) in [("Author", &meta.author), ("Organization", &meta.organization)] {
        if !v.trim().is_empty() {
            let _ = writeln!(out, "| {k} | {} |", cell(v));
        }
    }
    let _ = writeln!(out, "| Date | {} |", cell(&date));
    let _ = writeln!(
        out,
        "| Generated | {} |",
        model.generated_at.to_rfc3339_opts(SecondsFormat::Secs, true)
    );
    let _ = writeln!(out, "| Threats included | {} |", model.threats.len());
    out.push('\n');
    if !meta.scope_notes.trim().is_empty() {
        let _ = writeln!(out, "{}\n", meta.scope_notes.trim());
    }

    let _ = writeln!(out, "## Methodology\n");
    let _ = writeln!(out, "Method: {}.\n", model.methodology.display_name());
    let _ = writeln!(out, "{}\n", methodology_text(model.methodology));

    if let (Some(dfd), Some(_)) = (&model.dfd, &model.dfd_dot) {
        let _ = writeln!(out, "## Data Flow Diagram\n");
        let _ = writeln!(out, "![Data flow diagram](dfd.png)\n");
        out.push_str("| Edge | Source | Destination | Data | Crosses trust boundary |\n");
        out.push_str("|---|---|---|---|---|\n");
        for e in &dfd.edges {
            let _ = writeln!(
                out,
                "| {} | {} ({}) | {} ({}) | {} | {} |",
                cell(e.id.as_str()),
                cell(&e.from_name),
                e.from_kind,
                cell(&e.to_name),
                e.to_kind,
                cell(&e.data_label),
                if e.crosses_trust_boundary { "yes" } else { "no" }
            );
        }
        out.push('\n');
    }

    if let Some(notice) = &model.notice {
        let _ = writeln!(out, "> {notice}\n");
    }

    for t in &model.threats {
        let _ = writeln!(out, "## {}\n", one_line(t.title()));
        let _ = writeln!(out, "### Category\n\n{}\n", t.category().display_name());
        let _ = writeln!(out, "### Description\n\n{}\n", t.description().trim());
        if t.location().is_some() || t.tree_node().is_some() {
            out.push_str("### Location and Tree Node\n\n");
            if let (Some(loc), Some(edge)) = (t.location(), t.edge_ref()) {
                let _ = writeln!(out, "- Location: {loc} of edge {edge}");
            }
            if let Some(node) = t.tree_node() {
                let _ = writeln!(out, "- Threat tree node: {node}");
            }
            out.push('\n');
        }
        out.push_str("### Impact\n\n");
        match t.impact.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
            Some(impact) => {
                let _ = writeln!(out, "{impact}\n");
            }
            None => out.push_str("_No impact assessment recorded._\n\n"),
        }
        out.push_str("### Control Measures\n\n");
        if t.controls.is_empty() {
            out.push_str("_No control measures selected._\n\n");
        }
        for c in &t.controls {
            let _ = writeln!(out, "#### {}\n", one_line(&c.pattern_name));
            let _ = writeln!(out, "**Relevance:** {}\n", c.relevance.trim());
            let _ = writeln!(out, "**Implementation guidance:** {}\n", c.implementation_guidance.trim());
        }
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}
