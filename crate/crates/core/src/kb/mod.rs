//! LINDDUN knowledge assets: the GO card deck, the PRO mapping table, the
//! threat trees and the privacy-pattern catalog.
//!
//! Assets are JSON documents (see `assets/kb/SCHEMA.md`). Loading is
//! all-or-nothing and checks every structural invariant up front, so the
//! rest of the crate can index into a [`KnowledgeBase`] without re-checking.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfd::{DfdEdge, ElementKind};
use crate::model::{LinddunCategory, ThreatLocation};

pub const DECK_FILE: &str = "go_deck.json";
pub const MAPPING_FILE: &str = "mapping_table.json";
pub const TREES_FILE: &str = "threat_trees.json";
pub const PATTERNS_FILE: &str = "privacy_patterns.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoCard {
    pub id: String,
    pub title: String,
    pub category: LinddunCategory,
    pub description: String,
    #[serde(default)]
    pub hotspots: Vec<String>,
    pub elicitation_question: String,
}

impl GoCard {
    pub fn to_prompt_text(&self) -> String {
        let mut out = format!(
            "Card {}: {}\nCategory: {}\nDescription: {}\n",
            self.id,
            self.title,
            self.category.display_name(),
            self.description
        );
        if !self.hotspots.is_empty() {
            out.push_str("Hotspots:\n");
            for h in &self.hotspots {
                let _ = writeln!(out, "- {h}");
            }
        }
        let _ = writeln!(out, "Question: {}", self.elicitation_question);
        out
    }
}

/// Boolean applicability of each LINDDUN category to each DFD element kind.
/// Always total over the 4 x 7 keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    entries: BTreeMap<(ElementKind, LinddunCategory), bool>,
}

impl MappingTable {
    pub fn from_fn(f: impl Fn(ElementKind, LinddunCategory) -> bool) -> Self {
        let mut entries = BTreeMap::new();
        for kind in ElementKind::ALL {
            for cat in LinddunCategory::ALL {
                entries.insert((kind, cat), f(kind, cat));
            }
        }
        Self { entries }
    }

    pub fn applies(&self, kind: ElementKind, category: LinddunCategory) -> bool {
        self.entries[&(kind, category)]
    }

    pub fn set(&mut self, kind: ElementKind, category: LinddunCategory, applicable: bool) {
        self.entries.insert((kind, category), applicable);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn to_document(&self) -> MappingDoc {
        let mut table: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
        for ((kind, cat), v) in &self.entries {
            table
                .entry(kind.as_str().to_string())
                .or_default()
                .insert(cat.as_str().to_string(), *v);
        }
        MappingDoc {
            version: None,
            table,
        }
    }
}

impl Serialize for MappingTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MappingDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    table: BTreeMap<String, BTreeMap<String, bool>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatTreeNode {
    pub node_id: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub children: Vec<ThreatTreeNode>,
}

impl ThreatTreeNode {
    fn walk<'a>(&'a self, out: &mut Vec<&'a ThreatTreeNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatTree {
    pub category: LinddunCategory,
    pub root: ThreatTreeNode,
}

impl ThreatTree {
    /// Pre-order list of nodes.
    pub fn nodes(&self) -> Vec<&ThreatTreeNode> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes().into_iter().map(|n| n.node_id.clone()).collect()
    }

    /// Indented outline used inside prompts.
    pub fn to_prompt_text(&self) -> String {
        fn rec(node: &ThreatTreeNode, depth: usize, out: &mut String) {
            let _ = write!(out, "{}- [{}] {}", "  ".repeat(depth), node.node_id, node.label);
            if !node.description.is_empty() {
                let _ = write!(out, ": {}", node.description);
            }
            out.push('\n');
            for c in &node.children {
                rec(c, depth + 1, out);
            }
        }
        let mut out = String::new();
        rec(&self.root, 0, &mut out);
        out
    }
}

/// One tree per category with a global node index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreatTreeSet {
    trees: BTreeMap<LinddunCategory, ThreatTree>,
    index: HashMap<String, LinddunCategory>,
}

impl ThreatTreeSet {
    pub fn tree(&self, category: LinddunCategory) -> &ThreatTree {
        &self.trees[&category]
    }

    pub fn trees(&self) -> impl Iterator<Item = &ThreatTree> {
        self.trees.values()
    }

    /// Category of the tree holding `node_id`.
    pub fn category_of(&self, node_id: &str) -> Option<LinddunCategory> {
        self.index.get(node_id).copied()
    }

    pub fn from_trees(trees: Vec<ThreatTree>) -> Result<Self, String> {
        let mut by_cat = BTreeMap::new();
        for t in trees {
            let cat = t.category;
            if by_cat.insert(cat, t).is_some() {
                return Err(format!("more than one tree for category {}", cat.as_str()));
            }
        }
        for cat in LinddunCategory::ALL {
            if !by_cat.contains_key(&cat) {
                return Err(format!("no tree for category {}", cat.as_str()));
            }
        }
        let mut index = HashMap::new();
        for (cat, tree) in &by_cat {
            if tree.root.node_id != cat.code() {
                return Err(format!(
                    "tree {}: root id \"{}\" does not match category code \"{}\"",
                    cat.as_str(),
                    tree.root.node_id,
                    cat.code()
                ));
            }
            check_ancestry(&tree.root, *cat, &mut index)?;
        }
        Ok(Self {
            trees: by_cat,
            index,
        })
    }
}

fn check_ancestry(
    node: &ThreatTreeNode,
    cat: LinddunCategory,
    index: &mut HashMap<String, LinddunCategory>,
) -> Result<(), String> {
    if node.label.trim().is_empty() {
        return Err(format!("tree node \"{}\" has an empty label", node.node_id));
    }
    if index.insert(node.node_id.clone(), cat).is_some() {
        return Err(format!("duplicate tree node id \"{}\"", node.node_id));
    }
    for child in &node.children {
        let ok = child
            .node_id
            .strip_prefix(&node.node_id)
            .and_then(|rest| rest.strip_prefix('.'))
            .is_some_and(|seg| !seg.is_empty() && !seg.contains('.'));
        if !ok {
            return Err(format!(
                "tree node \"{}\" under \"{}\" (root \"{}\") breaks the dotted-path ancestry",
                child.node_id,
                node.node_id,
                cat.code()
            ));
        }
        check_ancestry(child, cat, index)?;
    }
    Ok(())
}

impl Serialize for ThreatTreeSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Doc<'a> {
            trees: Vec<&'a ThreatTree>,
        }
        Doc {
            trees: self.trees.values().collect(),
        }
        .serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyPattern {
    pub name: String,
    pub brief: String,
    pub full_text: String,
    #[serde(default)]
    pub related_categories: Vec<LinddunCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KnowledgeBase {
    pub deck: Vec<GoCard>,
    pub mapping: MappingTable,
    pub trees: ThreatTreeSet,
    pub patterns: Vec<PrivacyPattern>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KbError {
    #[error("{file}: missing ({message})")]
    Missing { file: String, message: String },
    #[error("{file}: malformed document: {message}")]
    Malformed { file: String, message: String },
    #[error("{file}: {location}: {message}")]
    Invariant {
        file: String,
        location: String,
        message: String,
    },
}

fn invariant(file: &str, location: impl Into<String>, message: impl Into<String>) -> KbError {
    KbError::Invariant {
        file: file.into(),
        location: location.into(),
        message: message.into(),
    }
}

fn malformed(file: &str, e: impl ToString) -> KbError {
    KbError::Malformed {
        file: file.into(),
        message: e.to_string(),
    }
}

#[derive(Deserialize)]
struct DeckDoc {
    #[serde(default)]
    #[allow(dead_code)]
    version: Option<String>,
    cards: Vec<GoCard>,
}

#[derive(Deserialize)]
struct TreesDoc {
    #[serde(default)]
    #[allow(dead_code)]
    version: Option<String>,
    trees: Vec<ThreatTree>,
}

#[derive(Deserialize)]
struct PatternsDoc {
    #[serde(default)]
    #[allow(dead_code)]
    version: Option<String>,
    patterns: Vec<PrivacyPattern>,
}

pub fn parse_deck(text: &str) -> Result<Vec<GoCard>, KbError> {
    let doc: DeckDoc = serde_json::from_str(text).map_err(|e| malformed(DECK_FILE, e))?;
    let mut ids = HashSet::new();
    for (i, card) in doc.cards.iter().enumerate() {
        let loc = format!("cards[{i}] (id \"{}\")", card.id);
        if !ids.insert(card.id.as_str()) {
            return Err(invariant(DECK_FILE, loc, format!("duplicate card id \"{}\"", card.id)));
        }
        for (field, value) in [
            ("id", &card.id),
            ("title", &card.title),
            ("description", &card.description),
            ("elicitation_question", &card.elicitation_question),
        ] {
            if value.trim().is_empty() {
                return Err(invariant(DECK_FILE, loc, format!("{field} is empty")));
            }
        }
        if card.hotspots.iter().any(|h| h.trim().is_empty()) {
            return Err(invariant(DECK_FILE, loc, "empty hotspot"));
        }
    }
    Ok(doc.cards)
}

pub fn parse_mapping(text: &str) -> Result<MappingTable, KbError> {
    let doc: MappingDoc = serde_json::from_str(text).map_err(|e| malformed(MAPPING_FILE, e))?;
    let mut entries = BTreeMap::new();
    for (kind_name, row) in &doc.table {
        let kind = ElementKind::ALL
            .into_iter()
            .find(|k| k.as_str() == kind_name)
            .ok_or_else(|| {
                invariant(MAPPING_FILE, format!("table.{kind_name}"), "unknown element kind")
            })?;
        for (cat_name, v) in row {
            let cat = LinddunCategory::ALL
                .into_iter()
                .find(|c| c.as_str() == cat_name)
                .ok_or_else(|| {
                    invariant(
                        MAPPING_FILE,
                        format!("table.{kind_name}.{cat_name}"),
                        "unknown LINDDUN category",
                    )
                })?;
            entries.insert((kind, cat), *v);
        }
    }
    for kind in ElementKind::ALL {
        for cat in LinddunCategory::ALL {
            if !entries.contains_key(&(kind, cat)) {
                return Err(invariant(
                    MAPPING_FILE,
                    format!("table.{}.{}", kind.as_str(), cat.as_str()),
                    "missing entry; the table must cover all 4 x 7 keys",
                ));
            }
        }
    }
    Ok(MappingTable { entries })
}

pub fn parse_trees(text: &str) -> Result<ThreatTreeSet, KbError> {
    let doc: TreesDoc = serde_json::from_str(text).map_err(|e| malformed(TREES_FILE, e))?;
    ThreatTreeSet::from_trees(doc.trees).map_err(|m| invariant(TREES_FILE, "trees", m))
}

pub fn parse_patterns(text: &str) -> Result<Vec<PrivacyPattern>, KbError> {
    let doc: PatternsDoc = serde_json::from_str(text).map_err(|e| malformed(PATTERNS_FILE, e))?;
    let mut names = HashSet::new();
    for (i, p) in doc.patterns.iter().enumerate() {
        let loc = format!("patterns[{i}] (name \"{}\")", p.name);
        if p.name.trim().is_empty() {
            return Err(invariant(PATTERNS_FILE, loc, "name is empty"));
        }
        if !names.insert(p.name.as_str()) {
            return Err(invariant(PATTERNS_FILE, loc, format!("duplicate pattern name \"{}\"", p.name)));
        }
        if p.brief.trim().is_empty() || p.full_text.trim().is_empty() {
            return Err(invariant(PATTERNS_FILE, loc, "brief and full_text must be non-empty"));
        }
    }
    Ok(doc.patterns)
}

impl KnowledgeBase {
    pub fn from_documents(
        deck: &str,
        mapping: &str,
        trees: &str,
        patterns: &str,
    ) -> Result<Self, KbError> {
        Ok(Self {
            deck: parse_deck(deck)?,
            mapping: parse_mapping(mapping)?,
            trees: parse_trees(trees)?,
            patterns: parse_patterns(patterns)?,
        })
    }

    /// The assets compiled into the crate.
    pub fn bundled() -> Self {
        Self::from_documents(
            include_str!("../../assets/kb/go_deck.json"),
            include_str!("../../assets/kb/mapping_table.json"),
            include_str!("../../assets/kb/threat_trees.json"),
            include_str!("../../assets/kb/privacy_patterns.json"),
        )
        .expect("bundled knowledge base is valid")
    }

    pub fn card(&self, id: &str) -> Option<&GoCard> {
        self.deck.iter().find(|c| c.id == id)
    }

    pub fn pattern(&self, name: &str) -> Option<&PrivacyPattern> {
        self.patterns.iter().find(|p| p.name == name)
    }
}

/// Load the four asset files from `dir`. Nothing is returned unless every
/// file is present and valid.
pub fn load_knowledge_base(dir: &Path) -> Result<KnowledgeBase, KbError> {
    let read = |file: &str| -> Result<String, KbError> {
        std::fs::read_to_string(dir.join(file)).map_err(|e| KbError::Missing {
            file: file.into(),
            message: e.to_string(),
        })
    };
    KnowledgeBase::from_documents(
        &read(DECK_FILE)?,
        &read(MAPPING_FILE)?,
        &read(TREES_FILE)?,
        &read(PATTERNS_FILE)?,
    )
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot draw {requested} cards from a deck of {available}")]
pub struct DrawError {
    pub requested: usize,
    pub available: usize,
}

/// Draw `n` distinct cards, uniformly without replacement.
pub fn draw_cards_with<R: Rng + ?Sized>(
    deck: &[GoCard],
    n: usize,
    rng: &mut R,
) -> Result<Vec<GoCard>, DrawError> {
    if n > deck.len() {
        return Err(DrawError {
            requested: n,
            available: deck.len(),
        });
    }
    Ok(rand::seq::index::sample(rng, deck.len(), n)
        .into_iter()
        .map(|i| deck[i].clone())
        .collect())
}

/// Seeded draw; without a seed the draw uses OS entropy.
pub fn draw_cards(deck: &[GoCard], n: usize, seed: Option<u64>) -> Result<Vec<GoCard>, DrawError> {
    let mut rng = match seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_os_rng(),
    };
    draw_cards_with(deck, n, &mut rng)
}

/// Locations on `edge` where `category` must be assessed: the source if the
/// table admits the source's kind, the flow if it admits data flows, the
/// destination if it admits the destination's kind.
pub fn applicable_locations(
    table: &MappingTable,
    edge: &DfdEdge,
    category: LinddunCategory,
) -> BTreeSet<ThreatLocation> {
    let mut out = BTreeSet::new();
    if table.applies(edge.from_kind.into(), category) {
        out.insert(ThreatLocation::Source);
    }
    if table.applies(ElementKind::DataFlow, category) {
        out.insert(ThreatLocation::Flow);
    }
    if table.applies(edge.to_kind.into(), category) {
        out.insert(ThreatLocation::Destination);
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown threat tree node \"{0}\"")]
pub struct NodeNotFound(pub String);

pub fn lookup_tree_node<'a>(
    trees: &'a ThreatTreeSet,
    node_id: &str,
) -> Result<&'a ThreatTreeNode, NodeNotFound> {
    let cat = trees
        .category_of(node_id)
        .ok_or_else(|| NodeNotFound(node_id.into()))?;
    trees
        .tree(cat)
        .nodes()
        .into_iter()
        .find(|n| n.node_id == node_id)
        .ok_or_else(|| NodeNotFound(node_id.into()))
}
