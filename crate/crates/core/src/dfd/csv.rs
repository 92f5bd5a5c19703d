use thiserror::Error;

use super::{Dfd, DfdEdge, DfdNodeKind, EdgeId};

/// Column names, in order, of the edge table.
pub const CSV_HEADER: [&str; 6] = ["from", "from_kind", "to", "to_kind", "data", "trust_boundary"];

/// Row numbers are 1-based and count the header as row 1.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("missing header row")]
    MissingHeader,
    #[error("row 1: header column {index} should be `{expected}`, found `{found}`")]
    HeaderColumn {
        index: usize,
        expected: &'static str,
        found: String,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: unknown node kind `{token}` in column {column}")]
    UnknownKind {
        row: usize,
        column: &'static str,
        token: String,
    },
    #[error("row {row}: invalid trust_boundary `{token}` (expected true, false, 0 or 1)")]
    BadBoolean { row: usize, token: String },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
}

fn parse_bool(token: &str) -> Option<bool> {
    match token.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Parse the edge table. Edge ids are assigned as `e1..eN` in row order.
pub fn parse_edges_csv(text: &str) -> Result<Dfd, CsvError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(CsvError::MissingHeader),
        Some(r) => r.map_err(|e| CsvError::Malformed {
            row: 1,
            message: e.to_string(),
        })?,
    };
    for (index, expected) in CSV_HEADER.iter().enumerate() {
        let found = header.get(index).unwrap_or("").trim();
        if !found.eq_ignore_ascii_case(expected) {
            return Err(CsvError::HeaderColumn {
                index: index + 1,
                expected,
                found: found.to_string(),
            });
        }
    }
    if header.len() != CSV_HEADER.len() {
        return Err(CsvError::Arity {
            row: 1,
            expected: CSV_HEADER.len(),
            found: header.len(),
        });
    }

    let mut edges = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| CsvError::Malformed {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != CSV_HEADER.len() {
            return Err(CsvError::Arity {
                row,
                expected: CSV_HEADER.len(),
                found: rec.len(),
            });
        }
        let kind = |col: usize, column: &'static str| -> Result<DfdNodeKind, CsvError> {
            rec[col].parse().map_err(|_| CsvError::UnknownKind {
                row,
                column,
                token: rec[col].to_string(),
            })
        };
        let from_kind = kind(1, "from_kind")?;
        let to_kind = kind(3, "to_kind")?;
        let crosses_trust_boundary = parse_bool(&rec[5]).ok_or_else(|| CsvError::BadBoolean {
            row,
            token: rec[5].to_string(),
        })?;
        edges.push(DfdEdge {
            id: EdgeId::sequential(edges.len()),
            from_name: rec[0].to_string(),
            from_kind,
            to_name: rec[2].to_string(),
            to_kind,
            data_label: rec[4].to_string(),
            crosses_trust_boundary,
        });
    }
    Ok(Dfd { edges })
}

/// Emit the edge table with LF line endings, quoting only when required.
pub fn encode_edges_csv(dfd: &Dfd) -> String {
    let mut writer = ::csv::WriterBuilder::new()
        .terminator(::csv::Terminator::Any(b'\n'))
        .quote_style(::csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    writer
        .write_record(CSV_HEADER)
        .expect("writing to a Vec cannot fail");
    for e in &dfd.edges {
        writer
            .write_record([
                e.from_name.as_str(),
                e.from_kind.as_str(),
                e.to_name.as_str(),
                e.to_kind.as_str(),
                e.data_label.as_str(),
                if e.crosses_trust_boundary {
                    "true"
                } else {
                    "false"
                },
            ])
            .expect("writing to a Vec cannot fail");
    }
    let bytes = writer.into_inner().expect("flushing a Vec cannot fail");
    String::from_utf8(bytes).expect("input fields are UTF-8")
}
