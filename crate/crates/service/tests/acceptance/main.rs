//! Acceptance suite. Every criterion runs offline against the mock provider
//! and the fixture knowledge base and prints one PASS/FAIL line. The process
//! exits non-zero when any criterion fails.
//!
//! `UPDATE_GOLDEN=1` rewrites the golden demo report instead of comparing.

mod dot;

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use linddun_core::assessment::{
    select_controls, shortlist_patterns, PURPOSE_SELECT, PURPOSE_SHORTLIST, SHORTLIST_CAP,
};
use linddun_core::dfd::{
    encode_edges_csv, parse_edges_csv, render_dot, Dfd, DfdEdge, DfdNodeKind, DotOptions, EdgeId, ElementKind,
    RankDir,
};
use linddun_core::elicitation::{
    format_previous_analysis, go_multi_agent, pro_analyze_edge, run_linddun_go, verdict_schema, AgentPersona,
    DebateSettings, GoOutcome, GoRunOptions, ProviderMode, PURPOSE_GO_JUDGE, PURPOSE_GO_MULTI_AGENT,
    PURPOSE_PRO_EDGE,
};
use linddun_core::gateway::{
    select_provider, Gateway, MockProvider, MockReply, Provider, ProviderConfig, ProviderSelector, StructuredRequest,
};
use linddun_core::kb::{draw_cards, load_knowledge_base, KnowledgeBase, MappingTable, PrivacyPattern};
use linddun_core::model::{
    ApplicationProfile, ControlMeasure, LinddunCategory, Methodology, Session, SessionId, Threat, ThreatId,
    ThreatLocation,
};
use linddun_core::report::{build_report_model, render_markdown};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("CSV round-trip", csv_round_trip),
        ("DOT validity", dot_validity),
        ("mapping gate oracle", mapping_gate),
        ("debate protocol", debate_protocol),
        ("structured-output discipline", structured_output),
        ("two-stage pattern selection", two_stage_selection),
        ("seeded determinism", seeded_determinism),
        ("report fidelity", report_fidelity),
        ("end-to-end offline demo", offline_demo),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let ms = started.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{ms} ms]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {why} [{ms} ms]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fixtures

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture_kb_dir() -> PathBuf {
    manifest_dir().join("../core/tests/fixtures/kb")
}

fn fixture_kb() -> KnowledgeBase {
    load_knowledge_base(&fixture_kb_dir()).expect("fixture knowledge base loads")
}

fn demo_dir() -> PathBuf {
    manifest_dir().join("tests/fixtures/demo")
}

fn profile() -> ApplicationProfile {
    let text = std::fs::read_to_string(demo_dir().join("profile.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn mock_gateway(mock: &Arc<MockProvider>, max_retries: u32) -> Gateway {
    Gateway::with_mock(ProviderConfig::mock("mock").with_max_retries(max_retries), mock.clone())
}

const ODD_CHARS: &[char] = &[
    ' ', ',', '"', '\\', '\n', '\r', ';', '{', '}', '[', ']', '-', '>', '=', '#', '/', '*', '<', '\'', '\t', '|',
    'é', '中', '→',
];

fn text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let len = rng.random_range(0..=max);
    (0..len)
        .map(|_| {
            if rng.random_bool(0.3) {
                *ODD_CHARS.choose(rng).unwrap()
            } else {
                rng.random_range(b'a'..=b'z') as char
            }
        })
        .collect()
}

fn node_name(rng: &mut ChaCha8Rng) -> String {
    format!("{}{}", rng.random_range(b'A'..=b'Z') as char, text(rng, 10))
}

fn random_dfd(rng: &mut ChaCha8Rng, max_edges: usize) -> Dfd {
    let mut pool: Vec<(String, DfdNodeKind)> = Vec::new();
    for _ in 0..rng.random_range(1..=8) {
        let kind = *DfdNodeKind::ALL.choose(rng).unwrap();
        // occasionally reuse a name under another kind: a different node
        let name = match pool.choose(rng) {
            Some((n, _)) if rng.random_bool(0.2) => n.clone(),
            _ => node_name(rng),
        };
        pool.push((name, kind));
    }
    let edges = (0..rng.random_range(0..=max_edges))
        .map(|i| {
            let (from_name, from_kind) = pool.choose(rng).unwrap().clone();
            let (to_name, to_kind) = pool.choose(rng).unwrap().clone();
            DfdEdge {
                id: EdgeId::sequential(i),
                from_name,
                from_kind,
                to_name,
                to_kind,
                data_label: if rng.random_bool(0.2) { String::new() } else { text(rng, 16) },
                crosses_trust_boundary: rng.random(),
            }
        })
        .collect();
    Dfd::new(edges)
}

fn corpus() -> &'static [Dfd] {
    static CORPUS: OnceLock<Vec<Dfd>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC5F);
        (0..1000).map(|_| random_dfd(&mut rng, 30)).collect()
    })
}

// ------------------------------------------------------------- criterion 1

fn csv_round_trip() -> Outcome {
    let dfds = corpus();
    let started = Instant::now();
    let mut edges = 0;
    for (i, d) in dfds.iter().enumerate() {
        let text = encode_edges_csv(d);
        let back = parse_edges_csv(&text).map_err(|e| format!("DFD #{i}: {e}"))?;
        ensure!(&back == d, "DFD #{i} changed on round-trip");
        edges += d.edges.len();
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}, limit 5 s");
    Ok(format!("{} DFDs, {edges} edges, identity in {elapsed:?}", dfds.len()))
}

// ------------------------------------------------------------- criterion 2

fn shape_of(kind: DfdNodeKind) -> &'static str {
    match kind {
        DfdNodeKind::Entity => "box",
        DfdNodeKind::Process => "ellipse",
        DfdNodeKind::DataStore => "cylinder",
    }
}

fn visible(s: &str) -> String {
    s.replace('\r', "")
}

fn check_dot(d: &Dfd, options: &DotOptions) -> Result<(), String> {
    let src = render_dot(d, options).map_err(|issues| format!("render refused: {issues:?}"))?;
    let g = dot::parse(&src).map_err(|e| format!("DOT does not parse: {e}\n{src}"))?;
    ensure!(g.directed, "graph is not a digraph");
    ensure!(
        g.graph_attrs.get("rankdir").map(String::as_str) == Some(options.rankdir.as_str()),
        "rankdir missing"
    );
    let expected_nodes = d.nodes();
    ensure!(
        g.nodes.len() == expected_nodes.len(),
        "{} node statements for {} nodes",
        g.nodes.len(),
        expected_nodes.len()
    );
    ensure!(g.edges.len() == d.edges.len(), "{} edge statements for {} edges", g.edges.len(), d.edges.len());

    let mut declared: HashMap<&str, (String, &str)> = HashMap::new();
    for (id, attrs) in &g.nodes {
        let label = dot::unescape_label(attrs.get("label").ok_or("node without label")?);
        let shape = attrs.get("shape").map(String::as_str).unwrap_or("");
        ensure!(declared.insert(id, (label, shape)).is_none(), "node {id} declared twice");
    }
    for n in &expected_nodes {
        let want = (visible(n.name), shape_of(n.kind));
        ensure!(
            declared.values().any(|(l, s)| *l == want.0 && *s == want.1),
            "no node statement for {:?} ({})",
            n.name,
            n.kind
        );
    }
    for ((from, to, attrs), e) in g.edges.iter().zip(&d.edges) {
        let (Some(src_node), Some(dst_node)) = (declared.get(from.as_str()), declared.get(to.as_str())) else {
            return Err(format!("edge {} references an undeclared node", e.id));
        };
        ensure!(
            src_node.0 == visible(&e.from_name) && src_node.1 == shape_of(e.from_kind),
            "edge {} starts at the wrong node",
            e.id
        );
        ensure!(
            dst_node.0 == visible(&e.to_name) && dst_node.1 == shape_of(e.to_kind),
            "edge {} ends at the wrong node",
            e.id
        );
        ensure!(attrs.get("id") == Some(&e.id.as_str().to_string()), "edge {} lost its id", e.id);
        let label = attrs.get("label").map(|l| dot::unescape_label(l)).unwrap_or_default();
        ensure!(label == visible(&e.data_label), "edge {} label {label:?} differs", e.id);
        ensure!(
            (attrs.get("style").map(String::as_str) == Some("dashed")) == e.crosses_trust_boundary,
            "edge {} trust-boundary style is wrong",
            e.id
        );
        let highlighted = options.highlight_edge.as_ref() == Some(&e.id);
        ensure!(attrs.contains_key("color") == highlighted, "edge {} highlight is wrong", e.id);
    }
    Ok(())
}

fn dot_validity() -> Outcome {
    // the checker itself must reject broken input
    for bad in [
        "digraph { a -> }",
        "digraph { a -- b }",
        "digraph { a [label=\"x] }",
        "digraph { a [label=x y] }",
        "digraph { a -> b",
        "digraph { 1a }",
        "digraph { a [label=\"line\nbreak\"] }",
    ] {
        ensure!(dot::parse(bad).is_err(), "grammar check accepted {bad:?}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xD07);
    let (mut nodes, mut edges) = (0, 0);
    for (i, d) in corpus().iter().enumerate() {
        let options = DotOptions {
            rankdir: *[RankDir::LR, RankDir::TB, RankDir::RL, RankDir::BT].choose(&mut rng).unwrap(),
            highlight_edge: d.edges.choose(&mut rng).filter(|_| rng.random_bool(0.5)).map(|e| e.id.clone()),
        };
        check_dot(d, &options).map_err(|e| format!("DFD #{i}: {e}"))?;
        nodes += d.nodes().len();
        edges += d.edges.len();
    }
    Ok(format!("{} graphs parse; {nodes} nodes and {edges} edges matched", corpus().len()))
}

// ------------------------------------------------------------- criterion 3

fn kind_index(k: ElementKind) -> usize {
    match k {
        ElementKind::Entity => 0,
        ElementKind::Process => 1,
        ElementKind::DataStore => 2,
        ElementKind::DataFlow => 3,
    }
}

fn element(k: DfdNodeKind) -> ElementKind {
    match k {
        DfdNodeKind::Entity => ElementKind::Entity,
        DfdNodeKind::Process => ElementKind::Process,
        DfdNodeKind::DataStore => ElementKind::DataStore,
    }
}

fn category_index(c: LinddunCategory) -> usize {
    LinddunCategory::ALL.iter().position(|x| *x == c).unwrap()
}

/// The three-location rule evaluated directly on the raw truth table.
fn brute_locations(
    bits: &[[bool; 7]; 4],
    from: DfdNodeKind,
    to: DfdNodeKind,
    c: LinddunCategory,
) -> BTreeSet<ThreatLocation> {
    let ci = category_index(c);
    let mut out = BTreeSet::new();
    for loc in ThreatLocation::ALL {
        let kind = match loc {
            ThreatLocation::Source => element(from),
            ThreatLocation::Flow => ElementKind::DataFlow,
            ThreatLocation::Destination => element(to),
        };
        if bits[kind_index(kind)][ci] {
            out.insert(loc);
        }
    }
    out
}

/// Recover the (category, location) pair a PRO request was issued for.
fn pair_of_request(body: &str) -> Option<(LinddunCategory, ThreatLocation)> {
    let category = body.lines().find_map(|l| {
        let name = l.strip_prefix("LINDDUN category: ")?;
        LinddunCategory::ALL.into_iter().find(|c| c.display_name() == name)
    })?;
    let location = body.lines().find_map(|l| {
        let rest = l.strip_prefix("Location to analyze: the ")?;
        if rest.starts_with("source element") {
            Some(ThreatLocation::Source)
        } else if rest.starts_with("data flow") {
            Some(ThreatLocation::Flow)
        } else if rest.starts_with("destination element") {
            Some(ThreatLocation::Destination)
        } else {
            None
        }
    })?;
    Some((category, location))
}

fn mapping_gate() -> Outcome {
    let base = fixture_kb();
    let profile = profile();
    let mut rng = ChaCha8Rng::seed_from_u64(0x3A7E);
    let started = Instant::now();
    let mut requests = 0;
    for case in 0..10_000 {
        let mut bits = [[false; 7]; 4];
        for row in bits.iter_mut() {
            for b in row.iter_mut() {
                *b = rng.random();
            }
        }
        let table = MappingTable::from_fn(|k, c| bits[kind_index(k)][category_index(c)]);
        let from = *DfdNodeKind::ALL.choose(&mut rng).unwrap();
        let to = *DfdNodeKind::ALL.choose(&mut rng).unwrap();
        let edge = DfdEdge {
            id: EdgeId::from("e1"),
            from_name: "Source".into(),
            from_kind: from,
            to_name: "Destination".into(),
            to_kind: to,
            data_label: "payload".into(),
            crosses_trust_boundary: rng.random(),
        };
        for c in LinddunCategory::ALL {
            let got = linddun_core::kb::applicable_locations(&table, &edge, c);
            ensure!(got == brute_locations(&bits, from, to, c), "case {case}: locations differ for {c}");
        }

        let mut categories = BTreeSet::new();
        while categories.is_empty() {
            categories = LinddunCategory::ALL.into_iter().filter(|_| rng.random_bool(0.5)).collect();
        }
        let expected: BTreeSet<_> = categories
            .iter()
            .flat_map(|&c| brute_locations(&bits, from, to, c).into_iter().map(move |l| (c, l)))
            .collect();

        let mut kb = base.clone();
        kb.mapping = table;
        let mock = Arc::new(MockProvider::synthesizing());
        let gateway = mock_gateway(&mock, 1);
        let report = pro_analyze_edge(&edge, "flow under test", &categories, &kb, &profile, &gateway)
            .map_err(|e| format!("case {case}: {e}"))?;
        let log = mock.calls_for(PURPOSE_PRO_EDGE);
        let issued: Vec<_> = log.iter().map(|c| pair_of_request(&c.call.body_text())).collect();
        ensure!(issued.iter().all(Option::is_some), "case {case}: unrecognizable PRO request");
        let issued_set: BTreeSet<_> = issued.iter().flatten().copied().collect();
        ensure!(issued.len() == issued_set.len(), "case {case}: a pair was requested twice");
        ensure!(issued_set == expected, "case {case}: requested {issued_set:?}, admitted {expected:?}");
        ensure!(mock.call_count() == expected.len(), "case {case}: stray calls");
        let found: BTreeSet<_> = report.findings.iter().map(|f| (f.category, f.location)).collect();
        ensure!(found == expected && report.failures.is_empty(), "case {case}: findings differ");
        requests += expected.len();
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}, limit 10 s");
    Ok(format!("10000 cases, {requests} requests matched the oracle in {elapsed:?}"))
}

// ------------------------------------------------------------- criterion 4

fn debate_protocol() -> Outcome {
    let kb = fixture_kb();
    let card = kb.deck[0].clone();
    let profile = profile();
    let mut combos = 0;
    for personas_n in 1..=5 {
        for rounds in 1..=4 {
            let personas: Vec<_> = (0..personas_n)
                .map(|i| AgentPersona::new(&format!("p{i}"), &format!("Agent {i}"), &format!("focus area {i}")))
                .collect();
            let counter = AtomicUsize::new(0);
            let mock = Arc::new(MockProvider::with_responder(move |_, call| {
                let k = counter.fetch_add(1, Ordering::SeqCst);
                MockReply::json(json!({
                    "threat_present": call.body_text().len() % 3 == 0,
                    "reason": format!("reason <{k}> {}", call.purpose_tag)
                }))
            }));
            let gateway = mock_gateway(&mock, 1);
            let settings = DebateSettings {
                personas: &personas,
                rounds,
                provider_mode: ProviderMode::Default,
                parallel: (personas_n + rounds) % 2 == 0,
                seed: Some(7),
            };
            let t = go_multi_agent(&card, &profile, None, &settings, &gateway, &mut ChaCha8Rng::seed_from_u64(7))
                .map_err(|e| e.to_string())?;
            let tag = format!("personas={personas_n} rounds={rounds}");
            ensure!(
                mock.call_count() == personas_n * rounds + 1,
                "{tag}: {} calls, expected {}",
                mock.call_count(),
                personas_n * rounds + 1
            );
            ensure!(
                t.rounds.len() == rounds && t.rounds.iter().all(|r| r.len() == personas_n),
                "{tag}: transcript shape is wrong"
            );
            let agent_calls = mock.calls_for(PURPOSE_GO_MULTI_AGENT);
            ensure!(agent_calls.len() == personas_n * rounds, "{tag}: agent call count");
            for (r, chunk) in agent_calls.chunks(personas_n).enumerate() {
                for call in chunk {
                    let body = call.call.body_text();
                    if r > 0 {
                        for v in &t.rounds[r - 1] {
                            ensure!(body.contains(&v.reason), "{tag}: round {} misses {:?}", r + 1, v.reason);
                        }
                    }
                    for v in &t.rounds[r] {
                        ensure!(!body.contains(&v.reason), "{tag}: round {} sees its own {:?}", r + 1, v.reason);
                    }
                }
            }
            let judge = mock.calls_for(PURPOSE_GO_JUDGE);
            ensure!(judge.len() == 1, "{tag}: {} judge calls", judge.len());
            let aggregate = format_previous_analysis(&personas, t.rounds.last().unwrap());
            ensure!(
                judge[0].call.text_parts().last() == Some(aggregate.as_str()),
                "{tag}: judge input is not the final round aggregate"
            );
            combos += 1;
        }
    }
    Ok(format!("{combos} persona/round combinations"))
}

// ------------------------------------------------------------- criterion 5

fn malformed_replies() -> Vec<MockReply> {
    vec![
        MockReply::text("this is not JSON"),
        MockReply::text("{\"threat_present\": true"),
        MockReply::json(json!({"threat_present": "yes", "reason": "r"})),
        MockReply::json(json!({"reason": "missing the flag"})),
        MockReply::json(json!({"threat_present": true, "reason": "r", "extra": 1})),
        MockReply::json(json!({"threat_present": true, "reason": ""})),
        MockReply::text("[]"),
    ]
}

fn attempt_counts() -> Result<usize, String> {
    let malformed = malformed_replies();
    let valid = MockReply::json(json!({"threat_present": true, "reason": "valid at last"}));
    let mut runs = 0;
    for max in 1..=5u32 {
        for native in [false, true] {
            for k in 0..=max + 1 {
                let mock = Arc::new(MockProvider::new());
                let mut script: Vec<_> = (0..k as usize).map(|i| malformed[i % malformed.len()].clone()).collect();
                script.push(valid.clone());
                mock.script("probe", script);
                let cfg = ProviderConfig::mock("mock").with_max_retries(max).with_capabilities(true, native);
                let gateway = Gateway::with_mock(cfg, mock.clone());
                let request = StructuredRequest::new("probe", "Judge the question.", verdict_schema()).text("question");
                let result = gateway.complete_structured(&request);
                let tag = format!("max_retries={max} native={native} malformed={k}");
                if k < max {
                    let r = result.map_err(|e| format!("{tag}: {e}"))?;
                    ensure!(r.attempts == k + 1, "{tag}: {} attempts", r.attempts);
                    ensure!(r.document["reason"] == "valid at last", "{tag}: wrong document");
                    ensure!(mock.call_count() == (k + 1) as usize, "{tag}: {} calls", mock.call_count());
                } else {
                    match result {
                        Err(e @ linddun_core::gateway::GatewayError::SchemaViolation { attempts, .. }) => {
                            ensure!(attempts == max, "{tag}: {e}");
                        }
                        other => return Err(format!("{tag}: expected SCHEMA_VIOLATION, got {other:?}")),
                    }
                    ensure!(mock.call_count() == max as usize, "{tag}: {} calls", mock.call_count());
                }
                for (i, c) in mock.calls().iter().enumerate() {
                    ensure!(c.call.attempt == i as u32 + 1, "{tag}: attempt numbering");
                    ensure!(c.call.user_parts.len() == 1 + i, "{tag}: retry {i} lacks the corrective message");
                    ensure!(c.call.schema_in_prompt != native, "{tag}: schema channel");
                }
                runs += 1;
            }
        }
    }
    // a provider that never complies
    for max in 1..=5u32 {
        let mock = Arc::new(MockProvider::with_responder(|_, _| MockReply::text("```json\n{\"nope\": 1}\n```")));
        let gateway = mock_gateway(&mock, max);
        let request = StructuredRequest::new("probe", "Judge.", verdict_schema()).text("q");
        let err = gateway.complete_structured(&request).err().ok_or("always-malformed reply accepted")?;
        ensure!(err.code() == "SCHEMA_VIOLATION", "always-malformed: {err}");
        ensure!(mock.call_count() == max as usize, "always-malformed: {} calls for budget {max}", mock.call_count());
        runs += 1;
    }
    Ok(runs)
}

fn patterns(n: usize) -> Vec<PrivacyPattern> {
    (0..n)
        .map(|i| PrivacyPattern {
            name: format!("Pattern-{i:03}"),
            brief: format!("brief<{i:03}> summary"),
            full_text: format!("FULL<{i:03}> detailed guidance"),
            related_categories: vec![],
        })
        .collect()
}

fn catalog_and_tree_rejection() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5C4);
    let threat = Threat::zero_shot(ThreatId::from("zs-1"), LinddunCategory::Linking, "t", "d");
    let profile = profile();
    let mut checks = 0;
    for round in 0..200 {
        let catalog = patterns(rng.random_range(5..=50));
        let real = catalog.choose(&mut rng).unwrap().name.clone();
        let bogus = [
            "Not A Pattern".to_string(),
            real.to_lowercase(),
            format!("{real} "),
            format!("Pattern-{:03}", catalog.len() + rng.random_range(0..10)),
        ]
        .choose(&mut rng)
        .unwrap()
        .clone();
        let bad = MockReply::json(json!({"patterns": [real.clone(), bogus.clone()]}));
        let good = MockReply::json(json!({"patterns": [real.clone()]}));

        let mock = Arc::new(MockProvider::new());
        mock.script(PURPOSE_SHORTLIST, vec![bad.clone(); 3]);
        let err = shortlist_patterns(&threat, &profile, &catalog, &mock_gateway(&mock, 3))
            .err()
            .ok_or_else(|| format!("run {round}: {bogus:?} accepted into the shortlist"))?;
        ensure!(err.code() == "SCHEMA_VIOLATION", "run {round}: {err}");

        let mock = Arc::new(MockProvider::new());
        mock.script(PURPOSE_SHORTLIST, [bad, good]);
        let shortlist = shortlist_patterns(&threat, &profile, &catalog, &mock_gateway(&mock, 3))
            .map_err(|e| format!("run {round}: {e}"))?;
        ensure!(shortlist == [real.clone()], "run {round}: shortlist {shortlist:?}");

        // stage two may only name shortlisted patterns, even real ones
        let outside = catalog.iter().find(|p| p.name != real).unwrap().name.clone();
        let mock = Arc::new(MockProvider::new());
        mock.script(
            PURPOSE_SELECT,
            vec![
                MockReply::json(json!({"controls": [{"pattern_name": outside, "relevance": "r", "implementation_guidance": "g"}]}));
                3
            ],
        );
        let err = select_controls(&threat, &shortlist, &catalog, &mock_gateway(&mock, 3))
            .err()
            .ok_or_else(|| format!("run {round}: non-shortlisted {outside:?} selected"))?;
        ensure!(err.code() == "SCHEMA_VIOLATION", "run {round}: {err}");
        checks += 3;
    }

    // tree nodes: only (category, Flow) is admitted so each run issues one request
    let base = fixture_kb();
    for c in LinddunCategory::ALL {
        let own = base.trees.tree(c).node_ids();
        let foreign: Vec<String> = LinddunCategory::ALL
            .into_iter()
            .filter(|o| *o != c)
            .flat_map(|o| base.trees.tree(o).node_ids())
            .collect();
        let mut bogus = foreign.clone();
        bogus.extend(["X.9.9".to_string(), String::new(), own[0].to_lowercase(), format!("{}.99", own[0])]);
        bogus.retain(|b| !own.contains(b));
        let mut kb = base.clone();
        kb.mapping = MappingTable::from_fn(|k, cat| k == ElementKind::DataFlow && cat == c);
        let edge = DfdEdge {
            id: EdgeId::from("e1"),
            from_name: "A".into(),
            from_kind: DfdNodeKind::Entity,
            to_name: "B".into(),
            to_kind: DfdNodeKind::Process,
            data_label: "d".into(),
            crosses_trust_boundary: false,
        };
        let categories = BTreeSet::from([c]);
        for node in &bogus {
            let reply = |n: &str| MockReply::json(json!({"tree_node": n, "title": "t", "description": "d"}));
            let mock = Arc::new(MockProvider::new());
            mock.script(PURPOSE_PRO_EDGE, vec![reply(node); 3]);
            let report = pro_analyze_edge(&edge, "flow", &categories, &kb, &profile, &mock_gateway(&mock, 3))
                .map_err(|e| e.to_string())?;
            ensure!(report.findings.is_empty(), "{c}: out-of-tree node {node:?} accepted");
            ensure!(
                report.failures.len() == 1 && report.failures[0].code == "SCHEMA_VIOLATION",
                "{c}: {node:?} not reported as a schema violation"
            );

            let mock = Arc::new(MockProvider::new());
            let valid = own.choose(&mut rng).unwrap();
            mock.script(PURPOSE_PRO_EDGE, [reply(node), reply(valid)]);
            let report = pro_analyze_edge(&edge, "flow", &categories, &kb, &profile, &mock_gateway(&mock, 3))
                .map_err(|e| e.to_string())?;
            ensure!(
                report.findings.len() == 1 && &report.findings[0].tree_node == valid,
                "{c}: retry after {node:?} did not recover"
            );
            checks += 2;
        }
    }
    Ok(checks)
}

fn structured_output() -> Outcome {
    let runs = attempt_counts()?;
    let rejections = catalog_and_tree_rejection()?;
    Ok(format!("{runs} scripted sequences, {rejections} out-of-catalog/out-of-tree checks"))
}

// ------------------------------------------------------------- criterion 6

fn two_stage_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2575);
    let threat = Threat::zero_shot(ThreatId::from("zs-1"), LinddunCategory::Detecting, "Threat", "Description");
    let profile = profile();
    let mut violations = Vec::new();
    let mut selected = 0;
    for run in 0..1000 {
        let n = rng.random_range(5..=50);
        let catalog = patterns(n);
        let names: Vec<String> = catalog.iter().map(|p| p.name.clone()).collect();
        let picks: Vec<String> = (0..rng.random_range(0..=12)).map(|_| names.choose(&mut rng).unwrap().clone()).collect();
        let mock = Arc::new(MockProvider::new());
        mock.script(PURPOSE_SHORTLIST, [MockReply::json(json!({ "patterns": picks }))]);
        let gateway = mock_gateway(&mock, 1);
        let shortlist = match shortlist_patterns(&threat, &profile, &catalog, &gateway) {
            Ok(s) => s,
            Err(e) => {
                violations.push(format!("run {run}: stage one failed: {e}"));
                continue;
            }
        };
        let stage1 = mock.calls_for(PURPOSE_SHORTLIST)[0].call.body_text();
        if stage1.contains("FULL<") {
            violations.push(format!("run {run}: stage one saw full texts"));
        }
        if !catalog.iter().all(|p| stage1.contains(&p.brief)) {
            violations.push(format!("run {run}: stage one missed a brief"));
        }
        let unique: BTreeSet<_> = shortlist.iter().collect();
        if unique.len() != shortlist.len() || shortlist.len() > SHORTLIST_CAP {
            violations.push(format!("run {run}: malformed shortlist {shortlist:?}"));
        }
        if !shortlist.iter().all(|s| names.contains(s)) {
            violations.push(format!("run {run}: shortlist outside the catalog"));
        }
        if shortlist.is_empty() {
            continue;
        }

        let chosen: Vec<Value> = (0..rng.random_range(0..=shortlist.len() + 1))
            .map(|_| {
                json!({"pattern_name": shortlist.choose(&mut rng).unwrap(), "relevance": "fits",
                       "implementation_guidance": "apply it"})
            })
            .collect();
        mock.script(PURPOSE_SELECT, [MockReply::json(json!({ "controls": chosen }))]);
        let controls: Vec<ControlMeasure> = match select_controls(&threat, &shortlist, &catalog, &gateway) {
            Ok(c) => c,
            Err(e) => {
                violations.push(format!("run {run}: stage two failed: {e}"));
                continue;
            }
        };
        let stage2 = mock.calls_for(PURPOSE_SELECT)[0].call.body_text();
        for p in &catalog {
            if stage2.contains(&p.full_text) != shortlist.contains(&p.name) {
                violations.push(format!("run {run}: full text of {} wrongly {}", p.name,
                    if shortlist.contains(&p.name) { "missing" } else { "present" }));
            }
        }
        if !controls.iter().all(|c| shortlist.contains(&c.pattern_name)) {
            violations.push(format!("run {run}: selection outside the shortlist"));
        }
        selected += controls.len();
    }
    ensure!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
    Ok(format!("1000 runs, {selected} controls selected, zero violations"))
}

// ------------------------------------------------------------- criterion 7

fn two_provider_gateway(mock: &Arc<MockProvider>) -> Gateway {
    let p: Arc<dyn Provider> = mock.clone();
    Gateway::new(vec![
        (ProviderConfig::mock("alpha"), p.clone()),
        (ProviderConfig::mock("beta"), p),
    ])
    .unwrap()
}

fn go_fingerprint(seed: u64, parallel: bool) -> Result<Vec<String>, String> {
    let kb = fixture_kb();
    let mock = Arc::new(MockProvider::synthesizing());
    let gateway = two_provider_gateway(&mock).with_selection_seed(seed);
    let mut session = Session::new();
    session.profile = profile();
    let options = GoRunOptions {
        n_cards: 2,
        multi_agent: true,
        rounds: 2,
        seed: Some(seed),
        personas: linddun_core::elicitation::default_roster(),
        provider_mode: ProviderMode::RandomEnabled,
        parallel,
    };
    let report = run_linddun_go(&mut session, &kb.deck, &options, &gateway).map_err(|e| e.to_string())?;
    let mut out = report.drawn.clone();
    for r in &report.results {
        if let GoOutcome::MultiAgent { transcript } = &r.outcome {
            for v in transcript.rounds.iter().flatten().chain([&transcript.judge]) {
                out.push(v.provider_id.clone());
            }
        }
    }
    Ok(out)
}

fn seeded_determinism() -> Outcome {
    let deck = fixture_kb().deck;
    let mut distinct = BTreeSet::new();
    for seed in 0..500u64 {
        let n = 1 + (seed as usize % deck.len());
        let a = draw_cards(&deck, n, Some(seed)).map_err(|e| e.to_string())?;
        let b = draw_cards(&deck, n, Some(seed)).map_err(|e| e.to_string())?;
        ensure!(a == b, "seed {seed}: card draws differ");
        distinct.insert(a.iter().map(|c| c.id.clone()).collect::<Vec<_>>());
    }
    ensure!(distinct.len() > 10, "seeds barely change the draw");

    for seed in [1u64, 42, 4242] {
        for parallel in [false, true] {
            let a = go_fingerprint(seed, parallel)?;
            ensure!(a == go_fingerprint(seed, parallel)?, "seed {seed}: GO run not reproducible");
            ensure!(a.iter().any(|p| p == "alpha") && a.iter().any(|p| p == "beta"), "seed {seed}: one provider only");
        }
    }

    let configs = [ProviderConfig::mock("alpha"), ProviderConfig::mock("beta")];
    let mut alpha = 0;
    for seed in 0..10_000u64 {
        let a = select_provider(&ProviderSelector::RandomEnabled, &configs, seed).map_err(|e| e.to_string())?;
        let b = select_provider(&ProviderSelector::RandomEnabled, &configs, seed).map_err(|e| e.to_string())?;
        ensure!(a == b, "seed {seed}: provider selection differs");
        alpha += usize::from(a == "alpha");
    }
    let share = alpha as f64 / 10_000.0;
    ensure!((0.45..=0.55).contains(&share), "seeded selection share {share:.4} outside 45-55%");

    // the gateway's own seeded stream
    let sequence = |seed: u64| -> Result<Vec<String>, String> {
        let mock = Arc::new(MockProvider::with_responder(|_, _| {
            MockReply::json(json!({"threat_present": false, "reason": "r"}))
        }));
        let gateway = two_provider_gateway(&mock).with_selection_seed(seed);
        let request = StructuredRequest::new("probe", "s", verdict_schema())
            .text("q")
            .provider(ProviderSelector::RandomEnabled);
        (0..10_000)
            .map(|_| gateway.complete_structured(&request).map(|r| r.provider_id).map_err(|e| e.to_string()))
            .collect()
    };
    let first = sequence(99)?;
    ensure!(first == sequence(99)?, "gateway selection stream not reproducible");
    let gw_share = first.iter().filter(|p| *p == "alpha").count() as f64 / first.len() as f64;
    ensure!((0.45..=0.55).contains(&gw_share), "gateway selection share {gw_share:.4} outside 45-55%");
    Ok(format!(
        "draws and GO runs reproducible; alpha share {:.2}% over seeds, {:.2}% over one gateway stream",
        share * 100.0,
        gw_share * 100.0
    ))
}

// ------------------------------------------------------------- criterion 8

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| (0..rng.random_range(1..8)).map(|_| rng.random_range(b'a'..=b'z') as char).collect::<String>())
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_session(rng: &mut ChaCha8Rng, index: usize) -> (Session, Vec<(String, bool)>) {
    let at = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let mut s = Session::with_id(SessionId(format!("s{index}")), at);
    s.profile = profile();
    s.report_meta.app_name = words(rng, 2);
    s.report_meta.author = words(rng, 2);
    s.report_meta.scope_notes = words(rng, 6);
    let mut k = 0;
    for m in Methodology::ALL {
        for _ in 0..rng.random_range(0..8) {
            k += 1;
            let cat = *LinddunCategory::ALL.choose(rng).unwrap();
            let title = format!("Title[{index:03}-{k:03}] {}", words(rng, 2));
            let desc = words(rng, 10);
            let id = ThreatId(format!("t-{k}"));
            let mut t = match m {
                Methodology::ZeroShot => Threat::zero_shot(id, cat, title, desc),
                Methodology::LinddunGo => Threat::linddun_go(id, "F1", cat, title, desc),
                Methodology::LinddunPro => Threat::linddun_pro(
                    id,
                    EdgeId::from("e1"),
                    *ThreatLocation::ALL.choose(rng).unwrap(),
                    cat,
                    format!("{}.1", cat.code()),
                    title,
                    desc,
                ),
            };
            t.included = rng.random_bool(0.5);
            if rng.random_bool(0.5) {
                t.impact = Some(words(rng, 8));
            }
            for _ in 0..rng.random_range(0..3) {
                t.controls.push(ControlMeasure {
                    pattern_name: words(rng, 2),
                    relevance: words(rng, 5),
                    implementation_guidance: words(rng, 5),
                });
            }
            s.elicitation_results.list_mut(m).push(t);
        }
    }
    let nonempty: Vec<_> = Methodology::ALL
        .into_iter()
        .filter(|m| !s.elicitation_results.list(*m).is_empty())
        .collect();
    s.assessment_source = nonempty.choose(rng).copied().or(Some(Methodology::ZeroShot));
    if rng.random_bool(0.5) {
        s.dfd = Some(random_dfd(rng, 6));
        s.report_meta.include_dfd = rng.random();
    }
    let source = s.assessment_source.unwrap();
    let expect = Methodology::ALL
        .into_iter()
        .flat_map(|m| s.elicitation_results.list(m).iter().map(move |t| (m, t)))
        .map(|(m, t)| (t.title().split(' ').next().unwrap().to_string(), m == source && t.included))
        .collect();
    (s, expect)
}

fn report_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x8E9);
    let at = Utc.with_ymd_and_hms(2025, 1, 15, 10, 0, 0).unwrap();
    let mut included = 0;
    for i in 0..500 {
        let (session, expect) = random_session(&mut rng, i);
        let model = build_report_model(&session, at).map_err(|e| format!("session {i}: {e}"))?;
        let md = render_markdown(&model);
        for (marker, wanted) in &expect {
            let n = md.matches(marker.as_str()).count();
            ensure!(n == usize::from(*wanted), "session {i}: {marker} appears {n} times");
            included += usize::from(*wanted);
        }
        ensure!(md == render_markdown(&model), "session {i}: re-render differs");
        let reloaded = Session::from_document(&session.to_document()).map_err(|e| e.to_string())?;
        let again = render_markdown(&build_report_model(&reloaded, at).map_err(|e| e.to_string())?);
        ensure!(md == again, "session {i}: render after reload differs");
    }
    Ok(format!("500 sessions, {included} included titles each rendered once, renders byte-identical"))
}

// ------------------------------------------------------------- criterion 9

struct Cli {
    sessions: PathBuf,
    script: PathBuf,
}

impl Cli {
    fn run(&self, args: &[&str]) -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_linddun"))
            .arg("--sessions-dir")
            .arg(&self.sessions)
            .arg("--kb-dir")
            .arg(fixture_kb_dir())
            .args(["--provider", "mock", "--seed", "42", "--mock-script"])
            .arg(&self.script)
            .args(args)
            .env_remove("PILLAR_KB_DIR")
            .env_remove("PILLAR_SESSIONS_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("`linddun {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    fn json(&self, args: &[&str]) -> Result<Value, String> {
        let text = self.run(args)?;
        serde_json::from_str(&text).map_err(|e| format!("`{}` printed non-JSON ({e}): {text}", args.join(" ")))
    }
}

fn id_with_title(threats: &Value, title: &str) -> Result<String, String> {
    threats
        .as_array()
        .and_then(|a| a.iter().find(|t| t["title"] == title))
        .and_then(|t| t["id"].as_str())
        .map(str::to_string)
        .ok_or_else(|| format!("no imported threat titled {title:?}"))
}

/// Drive the CLI through the whole workflow and return the report text.
fn demo_report(work: &Path) -> Result<String, String> {
    let sessions = work.join("sessions");
    std::fs::create_dir_all(&sessions).map_err(|e| e.to_string())?;
    let cli = Cli {
        sessions,
        script: demo_dir().join("mock_script.json"),
    };
    let demo = demo_dir();
    let path = |p: PathBuf| p.to_string_lossy().into_owned();

    let id = cli.run(&["session", "new", "--name", "Clinic Booking Portal"])?.trim().to_string();
    cli.run(&["profile", "set", &id, &path(demo.join("profile.json"))])?;
    cli.run(&["dfd", "import", &id, &path(demo.join("dfd.csv"))])?;
    let go = cli.json(&["elicit", "go", &id, "--cards", "3", "--multi-agent", "--rounds", "2"])?;
    ensure!(go["drawn"].as_array().is_some_and(|d| d.len() == 3), "GO did not draw 3 cards: {go}");
    cli.run(&[
        "elicit", "pro", &id, "--edge", "e1", "--flow", "The patient submits the booking form",
        "--category", "Linking", "--category", "DataDisclosure",
    ])?;
    let threats = cli.json(&["assess", "import", &id, "--from", "pro"])?;
    let linkable = id_with_title(&threats, "Linkable patient sessions")?;
    let transit = id_with_title(&threats, "Symptoms disclosed in transit")?;
    let excessive = id_with_title(&threats, "Excessive symptom collection")?;
    cli.run(&["assess", "impact", &id, &linkable])?;
    cli.run(&[
        "assess", "impact", &id, &transit, "--text",
        "Symptom text can reveal health conditions to anyone who intercepts or logs the request.",
    ])?;
    cli.run(&["assess", "controls", &id, &linkable])?;
    for t in [&linkable, &transit, &excessive] {
        cli.run(&["assess", "include", &id, t])?;
    }
    cli.run(&[
        "report", "meta", &id, "--app-name", "Clinic Booking Portal", "--author", "Privacy Team",
        "--organization", "Example Clinic", "--date", "2025-01-15", "--scope",
        "Online booking and SMS reminders.", "--include-dfd",
    ])?;
    let out = work.join("out");
    let built = cli.json(&["report", "build", &id, "--out", &path(out.clone()), "--generated-at", "2025-01-15T10:00:00Z"])?;
    ensure!(built["threat_count"] == 3, "report has {} threats", built["threat_count"]);
    std::fs::read_to_string(out.join("report.md")).map_err(|e| e.to_string())
}

fn offline_demo() -> Outcome {
    let started = Instant::now();
    let first = demo_report(tempfile::tempdir().map_err(|e| e.to_string())?.path())?;
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "demo took {elapsed:?}, limit 10 s");
    let second = demo_report(tempfile::tempdir().map_err(|e| e.to_string())?.path())?;
    ensure!(first == second, "two demo runs produced different reports");

    let golden = manifest_dir().join("tests/golden/report.md");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &first).map_err(|e| e.to_string())?;
        return Ok(format!("golden report rewritten ({} bytes) in {elapsed:?}", first.len()));
    }
    let expected = std::fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    if first != expected {
        let line = first
            .lines()
            .zip(expected.lines())
            .position(|(a, b)| a != b)
            .map_or_else(|| "length".to_string(), |i| format!("line {}", i + 1));
        return Err(format!("report.md differs from the golden file at {line}"));
    }
    Ok(format!("report.md matches the golden file ({} bytes) in {elapsed:?}", first.len()))
}
