//! Recognizer for the Graphviz DOT language, independent of the renderer.
//! It builds a flat view of the graph so node and edge statements can be
//! counted and compared.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    Kw(&'static str),
    Punct(char),
    EdgeOp(&'static str),
}

const KEYWORDS: [&str; 6] = ["strict", "graph", "digraph", "subgraph", "node", "edge"];

fn is_id_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || !c.is_ascii()
}

fn is_id_char(c: char) -> bool {
    is_id_start(c) || c.is_ascii_digit()
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line_start = true;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line_start = true;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' && line_start {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        line_start = false;
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err("unterminated comment".into());
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }
        if "{}[];,=:".contains(c) {
            toks.push(Tok::Punct(c));
            i += 1;
            continue;
        }
        if c == '-' && matches!(chars.get(i + 1), Some('>') | Some('-')) {
            toks.push(Tok::EdgeOp(if chars[i + 1] == '>' { "->" } else { "--" }));
            i += 2;
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err("unterminated quoted string".into()),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => match chars.get(i + 1) {
                        Some('"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some('\\') => {
                            s.push_str("\\\\");
                            i += 2;
                        }
                        Some('\n') => i += 2,
                        _ => {
                            s.push('\\');
                            i += 1;
                        }
                    },
                    Some('\n') => return Err("raw newline inside a quoted string".into()),
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            toks.push(Tok::Id(s));
            continue;
        }
        if c == '<' {
            let mut depth = 0;
            let start = i;
            loop {
                match chars.get(i) {
                    None => return Err("unterminated HTML string".into()),
                    Some('<') => depth += 1,
                    Some('>') => {
                        depth -= 1;
                        if depth == 0 {
                            i += 1;
                            break;
                        }
                    }
                    _ => {}
                }
                i += 1;
            }
            toks.push(Tok::Id(chars[start..i].iter().collect()));
            continue;
        }
        if c.is_ascii_digit() || c == '.' || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.')) {
            let start = i;
            if c == '-' {
                i += 1;
            }
            let mut digits = 0;
            while chars.get(i).is_some_and(char::is_ascii_digit) {
                i += 1;
                digits += 1;
            }
            if chars.get(i) == Some(&'.') {
                i += 1;
                while chars.get(i).is_some_and(char::is_ascii_digit) {
                    i += 1;
                    digits += 1;
                }
            }
            if digits == 0 {
                return Err(format!("malformed numeral at offset {start}"));
            }
            if chars.get(i).is_some_and(|&c| is_id_start(c)) {
                return Err(format!("numeral runs into an identifier at offset {start}"));
            }
            toks.push(Tok::Id(chars[start..i].iter().collect()));
            continue;
        }
        if is_id_start(c) {
            let start = i;
            while chars.get(i).is_some_and(|&c| is_id_char(c)) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            match KEYWORDS.iter().find(|k| k.eq_ignore_ascii_case(&word)) {
                Some(k) => toks.push(Tok::Kw(k)),
                None => toks.push(Tok::Id(word)),
            }
            continue;
        }
        return Err(format!("unexpected character {c:?}"));
    }
    Ok(toks)
}

pub type Attrs = BTreeMap<String, String>;

#[derive(Debug, Default)]
pub struct Graph {
    pub directed: bool,
    pub graph_attrs: Attrs,
    /// Node statements in order.
    pub nodes: Vec<(String, Attrs)>,
    /// One entry per edge, chains already split.
    pub edges: Vec<(String, String, Attrs)>,
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    graph: Graph,
    /// Set when the last operand was a subgraph, which is not a node statement.
    was_subgraph: bool,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, p: char) -> Result<(), String> {
        match self.bump() {
            Some(Tok::Punct(c)) if c == p => Ok(()),
            other => Err(format!("expected {p:?}, found {other:?}")),
        }
    }

    fn id(&mut self) -> Result<String, String> {
        match self.bump() {
            Some(Tok::Id(s)) => Ok(s),
            other => Err(format!("expected an ID, found {other:?}")),
        }
    }

    fn graph(&mut self) -> Result<(), String> {
        if self.peek() == Some(&Tok::Kw("strict")) {
            self.bump();
        }
        match self.bump() {
            Some(Tok::Kw("digraph")) => self.graph.directed = true,
            Some(Tok::Kw("graph")) => self.graph.directed = false,
            other => return Err(format!("expected graph or digraph, found {other:?}")),
        }
        if matches!(self.peek(), Some(Tok::Id(_))) {
            self.bump();
        }
        self.expect('{')?;
        self.stmt_list()?;
        self.expect('}')?;
        if self.pos != self.toks.len() {
            return Err("trailing tokens after the graph".into());
        }
        Ok(())
    }

    fn stmt_list(&mut self) -> Result<(), String> {
        while !matches!(self.peek(), Some(Tok::Punct('}')) | None) {
            self.stmt()?;
            if self.peek() == Some(&Tok::Punct(';')) {
                self.bump();
            }
        }
        Ok(())
    }

    fn stmt(&mut self) -> Result<(), String> {
        match self.peek() {
            Some(Tok::Kw("graph")) => {
                self.bump();
                let attrs = self.attr_list()?;
                self.graph.graph_attrs.extend(attrs);
                Ok(())
            }
            Some(Tok::Kw("node")) | Some(Tok::Kw("edge")) => {
                self.bump();
                self.attr_list().map(drop)
            }
            Some(Tok::Id(_)) if self.peek_at(1) == Some(&Tok::Punct('=')) => {
                let k = self.id()?;
                self.bump();
                let v = self.id()?;
                self.graph.graph_attrs.insert(k, v);
                Ok(())
            }
            Some(Tok::Id(_)) | Some(Tok::Kw("subgraph")) | Some(Tok::Punct('{')) => {
                let first = self.operand()?;
                if matches!(self.peek(), Some(Tok::EdgeOp(_))) {
                    let mut chain = vec![first];
                    while let Some(Tok::EdgeOp(op)) = self.peek().cloned() {
                        let want = if self.graph.directed { "->" } else { "--" };
                        if op != want {
                            return Err(format!("edge operator {op} in a {} graph", if self.graph.directed { "directed" } else { "undirected" }));
                        }
                        self.bump();
                        chain.push(self.operand()?);
                    }
                    let attrs = self.optional_attr_list()?;
                    for pair in chain.windows(2) {
                        for from in &pair[0] {
                            for to in &pair[1] {
                                self.graph.edges.push((from.clone(), to.clone(), attrs.clone()));
                            }
                        }
                    }
                } else {
                    let attrs = self.optional_attr_list()?;
                    if let [single] = first.as_slice() {
                        if !self.was_subgraph {
                            self.graph.nodes.push((single.clone(), attrs));
                        }
                    }
                }
                self.was_subgraph = false;
                Ok(())
            }
            other => Err(format!("unexpected token {other:?}")),
        }
    }

    /// A node id (with optional port) or a subgraph; returns the node ids it names.
    fn operand(&mut self) -> Result<Vec<String>, String> {
        match self.peek() {
            Some(Tok::Kw("subgraph")) | Some(Tok::Punct('{')) => {
                if self.peek() == Some(&Tok::Kw("subgraph")) {
                    self.bump();
                    if matches!(self.peek(), Some(Tok::Id(_))) {
                        self.bump();
                    }
                }
                self.expect('{')?;
                let before = self.graph.nodes.len();
                self.stmt_list()?;
                self.expect('}')?;
                self.was_subgraph = true;
                Ok(self.graph.nodes[before..].iter().map(|(n, _)| n.clone()).collect())
            }
            _ => {
                let id = self.id()?;
                if self.peek() == Some(&Tok::Punct(':')) {
                    self.bump();
                    self.id()?;
                    if self.peek() == Some(&Tok::Punct(':')) {
                        self.bump();
                        self.id()?;
                    }
                }
                Ok(vec![id])
            }
        }
    }

    fn optional_attr_list(&mut self) -> Result<Attrs, String> {
        if self.peek() == Some(&Tok::Punct('[')) {
            self.attr_list()
        } else {
            Ok(Attrs::new())
        }
    }

    fn attr_list(&mut self) -> Result<Attrs, String> {
        let mut attrs = Attrs::new();
        self.expect('[')?;
        loop {
            while self.peek() != Some(&Tok::Punct(']')) {
                let k = self.id()?;
                self.expect('=')?;
                let v = self.id()?;
                if attrs.insert(k.clone(), v).is_some() {
                    return Err(format!("attribute {k} repeated"));
                }
                if matches!(self.peek(), Some(Tok::Punct(';')) | Some(Tok::Punct(','))) {
                    self.bump();
                }
            }
            self.expect(']')?;
            if self.peek() != Some(&Tok::Punct('[')) {
                return Ok(attrs);
            }
            self.bump();
        }
    }
}

/// Parse `src` as a DOT graph.
pub fn parse(src: &str) -> Result<Graph, String> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        graph: Graph::default(),
        was_subgraph: false,
    };
    p.graph()?;
    Ok(p.graph)
}

/// Undo the label-level escapes a renderer applies to a string value.
pub fn unescape_label(s: &str) -> String {
    let mut out = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(o) => {
                    out.push('\\');
                    out.push(o);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}
