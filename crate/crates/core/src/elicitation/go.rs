use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::personas::{check_roster, default_roster};
use super::{
    require_valid_profile, system_description, AgentPersona, DebateTranscript, ElicitError,
    GoOutcome, GoRecord, GoVerdict,
};
use crate::dfd::Dfd;
use crate::gateway::{
    choose_provider, Gateway, GatewayError, ProviderSelector, StructuredRequest,
    TEMPERATURE_DEBATE, TEMPERATURE_DETERMINISTIC,
};
use crate::kb::{draw_cards_with, GoCard};
use crate::model::{ApplicationProfile, Methodology, Session, Threat};

pub const PURPOSE_GO_SINGLE_AGENT: &str = "go_single_agent";
pub const PURPOSE_GO_MULTI_AGENT: &str = "go_multi_agent";
pub const PURPOSE_GO_JUDGE: &str = "go_judge";

pub const DEFAULT_ROUNDS: usize = 2;

const GO_TASK: &str = "You take part in a LINDDUN GO privacy threat analysis. You receive the \
description of a system and one LINDDUN GO card describing a common privacy threat. Decide \
whether the threat on the card is present in this system and explain the reason, referring to \
concrete parts of the system.";

const JUDGE_PROMPT: &str = "You are the judge of a LINDDUN GO privacy threat analysis. Several \
experts have debated whether the threat on a LINDDUN GO card is present in a system. Your only \
task is to read their final analysis and determine the final verdict: is the threat present, \
and why.";

/// How debate agents pick their provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    /// Every call goes to the gateway's default provider.
    #[default]
    Default,
    /// Every agent call draws a provider uniformly among the enabled ones.
    RandomEnabled,
}

pub fn verdict_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "threat_present": {"type": "boolean"},
            "reason": {"type": "string", "minLength": 1}
        },
        "required": ["threat_present", "reason"],
        "additionalProperties": false
    })
}

fn card_part(card: &GoCard) -> String {
    format!("LINDDUN GO card under evaluation:\n{}", card.to_prompt_text())
}

#[derive(Deserialize)]
struct VerdictDoc {
    threat_present: bool,
    reason: String,
}

fn ask(
    gateway: &Gateway,
    request: StructuredRequest,
    persona_id: Option<&str>,
) -> Result<GoVerdict, GatewayError> {
    let response = gateway.complete_structured(&request)?;
    let doc: VerdictDoc =
        serde_json::from_value(response.document).expect("document was validated against the verdict schema");
    Ok(GoVerdict {
        threat_present: doc.threat_present,
        reason: doc.reason,
        persona_id: persona_id.map(str::to_string),
        provider_id: response.provider_id,
    })
}

fn pick<R: Rng + ?Sized>(
    gateway: &Gateway,
    mode: ProviderMode,
    rng: &mut R,
) -> Result<Option<ProviderSelector>, GatewayError> {
    match mode {
        ProviderMode::Default => Ok(None),
        ProviderMode::RandomEnabled => {
            let id = choose_provider(&ProviderSelector::RandomEnabled, &gateway.enabled_configs(), rng)?;
            Ok(Some(ProviderSelector::Fixed(id)))
        }
    }
}

fn with_selector(request: StructuredRequest, selector: Option<ProviderSelector>) -> StructuredRequest {
    match selector {
        Some(s) => request.provider(s),
        None => request,
    }
}

/// A single agent judges one card.
pub fn go_single_agent(
    card: &GoCard,
    profile: &ApplicationProfile,
    dfd: Option<&Dfd>,
    gateway: &Gateway,
) -> Result<GoVerdict, ElicitError> {
    require_valid_profile(profile)?;
    Ok(single(card, profile, dfd, gateway, None, None)?)
}

fn single(
    card: &GoCard,
    profile: &ApplicationProfile,
    dfd: Option<&Dfd>,
    gateway: &Gateway,
    selector: Option<ProviderSelector>,
    seed: Option<u64>,
) -> Result<GoVerdict, GatewayError> {
    let request = StructuredRequest::new(PURPOSE_GO_SINGLE_AGENT, GO_TASK, verdict_schema())
        .text(system_description(profile, dfd))
        .text(card_part(card))
        .temperature(TEMPERATURE_DETERMINISTIC)
        .seed(seed);
    ask(gateway, with_selector(request, selector), None)
}

/// The "previous analysis" handed to the next round: one line per persona in
/// roster order.
pub fn format_previous_analysis(personas: &[AgentPersona], verdicts: &[GoVerdict]) -> String {
    let mut out = String::from("Previous analysis:\n");
    for (p, v) in personas.iter().zip(verdicts) {
        let verdict = if v.threat_present { "present" } else { "not present" };
        out.push_str(&format!("- {}: {}, {}\n", p.display_name, verdict, v.reason));
    }
    out
}

#[derive(Debug, Error)]
pub enum DebateError {
    #[error("a debate needs at least one persona")]
    NoPersonas,
    #[error("a debate needs at least one round")]
    NoRounds,
    #[error("invalid persona roster: {0}")]
    Roster(String),
    #[error("debate on card {card_id} aborted in {stage} after {} completed round(s): {source}", completed_rounds.len())]
    Aborted {
        card_id: String,
        /// "round N" or "judge".
        stage: String,
        completed_rounds: Vec<Vec<GoVerdict>>,
        source: GatewayError,
    },
}

impl DebateError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Aborted { source, .. } => source.code(),
            _ => "INVALID_ARGUMENT",
        }
    }
}

/// Debate settings shared by every card of a run.
#[derive(Debug, Clone, Copy)]
pub struct DebateSettings<'a> {
    pub personas: &'a [AgentPersona],
    pub rounds: usize,
    pub provider_mode: ProviderMode,
    /// Run the persona calls of a round concurrently.
    pub parallel: bool,
    pub seed: Option<u64>,
}

fn check_settings(settings: &DebateSettings<'_>) -> Result<(), DebateError> {
    if settings.personas.is_empty() {
        return Err(DebateError::NoPersonas);
    }
    if settings.rounds == 0 {
        return Err(DebateError::NoRounds);
    }
    check_roster(settings.personas).map_err(|e| DebateError::Roster(e.to_string()))
}

/// Multi-agent debate on one card followed by a judge call.
///
/// Providers for every call are drawn from `rng` up front for each round, so
/// a seeded rng fixes the assignment regardless of `parallel`.
pub fn go_multi_agent<R: Rng + ?Sized>(
    card: &GoCard,
    profile: &ApplicationProfile,
    dfd: Option<&Dfd>,
    settings: &DebateSettings<'_>,
    gateway: &Gateway,
    rng: &mut R,
) -> Result<DebateTranscript, DebateError> {
    check_settings(settings)?;
    let context = system_description(profile, dfd);
    let card_text = card_part(card);
    let mut rounds: Vec<Vec<GoVerdict>> = Vec::with_capacity(settings.rounds);

    let abort = |stage: String, rounds: &Vec<Vec<GoVerdict>>, source| DebateError::Aborted {
        card_id: card.id.clone(),
        stage,
        completed_rounds: rounds.clone(),
        source,
    };

    for r in 1..=settings.rounds {
        let previous = rounds
            .last()
            .map(|prev| format_previous_analysis(settings.personas, prev));
        let mut requests = Vec::with_capacity(settings.personas.len());
        for persona in settings.personas {
            let selector =
                pick(gateway, settings.provider_mode, rng).map_err(|e| abort(format!("round {r}"), &rounds, e))?;
            let mut request = StructuredRequest::new(
                PURPOSE_GO_MULTI_AGENT,
                format!("{}\n\n{}", persona.system_prompt, GO_TASK),
                verdict_schema(),
            )
            .text(context.clone())
            .text(card_text.clone())
            .temperature(TEMPERATURE_DEBATE)
            .seed(settings.seed);
            if let Some(prev) = &previous {
                request = request.text(prev.clone());
            }
            requests.push((persona.persona_id.as_str(), with_selector(request, selector)));
        }

        let results: Vec<Result<GoVerdict, GatewayError>> = if settings.parallel {
            std::thread::scope(|scope| {
                let handles: Vec<_> = requests
                    .into_iter()
                    .map(|(pid, req)| scope.spawn(move || ask(gateway, req, Some(pid))))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("debate agent thread panicked"))
                    .collect()
            })
        } else {
            let mut out = Vec::with_capacity(requests.len());
            for (pid, req) in requests {
                let res = ask(gateway, req, Some(pid));
                let failed = res.is_err();
                out.push(res);
                if failed {
                    break;
                }
            }
            out
        };

        let mut verdicts = Vec::with_capacity(settings.personas.len());
        for res in results {
            match res {
                Ok(v) => verdicts.push(v),
                Err(e) => return Err(abort(format!("round {r}"), &rounds, e)),
            }
        }
        rounds.push(verdicts);
    }

    let aggregate = format_previous_analysis(settings.personas, rounds.last().expect("rounds >= 1"));
    let selector = pick(gateway, settings.provider_mode, rng).map_err(|e| abort("judge".into(), &rounds, e))?;
    let request = StructuredRequest::new(PURPOSE_GO_JUDGE, JUDGE_PROMPT, verdict_schema())
        .text(context)
        .text(card_text)
        .text(aggregate)
        .temperature(TEMPERATURE_DETERMINISTIC)
        .seed(settings.seed);
    let judge = ask(gateway, with_selector(request, selector), None)
        .map_err(|e| abort("judge".into(), &rounds, e))?;
    Ok(DebateTranscript {
        card_id: card.id.clone(),
        rounds,
        judge,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoRunOptions {
    pub n_cards: usize,
    #[serde(default)]
    pub multi_agent: bool,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_roster")]
    pub personas: Vec<AgentPersona>,
    #[serde(default)]
    pub provider_mode: ProviderMode,
    #[serde(default)]
    pub parallel: bool,
}

fn default_rounds() -> usize {
    DEFAULT_ROUNDS
}

impl Default for GoRunOptions {
    fn default() -> Self {
        Self {
            n_cards: 0,
            multi_agent: false,
            rounds: DEFAULT_ROUNDS,
            seed: None,
            personas: default_roster(),
            provider_mode: ProviderMode::Default,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoCardResult {
    pub card: GoCard,
    pub outcome: GoOutcome,
    /// Present when the final verdict found the threat.
    pub threat: Option<Threat>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CardFailure {
    pub card_id: String,
    pub code: String,
    pub message: String,
    /// Debate rounds finished before the failure.
    pub completed_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoRunReport {
    pub drawn: Vec<String>,
    pub results: Vec<GoCardResult>,
    pub failures: Vec<CardFailure>,
}

impl GoRunReport {
    pub fn threats(&self) -> impl Iterator<Item = &Threat> {
        self.results.iter().filter_map(|r| r.threat.as_ref())
    }
}

/// Draw `n_cards` from `deck` and evaluate each one, recording present
/// threats and the raw outcomes in the session. One card failing does not
/// stop the others.
pub fn run_linddun_go(
    session: &mut Session,
    deck: &[GoCard],
    options: &GoRunOptions,
    gateway: &Gateway,
) -> Result<GoRunReport, ElicitError> {
    require_valid_profile(&session.profile)?;
    let settings = DebateSettings {
        personas: &options.personas,
        rounds: options.rounds,
        provider_mode: options.provider_mode,
        parallel: options.parallel,
        seed: options.seed,
    };
    if options.multi_agent {
        check_settings(&settings)?;
    }
    let mut rng = match options.seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_os_rng(),
    };
    let cards = draw_cards_with(deck, options.n_cards, &mut rng)?;

    let mut report = GoRunReport {
        drawn: cards.iter().map(|c| c.id.clone()).collect(),
        results: Vec::new(),
        failures: Vec::new(),
    };
    for card in cards {
        let profile = &session.profile;
        let dfd = session.dfd.as_ref();
        let outcome = if options.multi_agent {
            go_multi_agent(&card, profile, dfd, &settings, gateway, &mut rng)
                .map(|transcript| GoOutcome::MultiAgent { transcript })
                .map_err(|e| {
                    let completed = match &e {
                        DebateError::Aborted { completed_rounds, .. } => completed_rounds.len(),
                        _ => 0,
                    };
                    (e.code(), e.to_string(), completed)
                })
        } else {
            pick(gateway, options.provider_mode, &mut rng)
                .and_then(|sel| single(&card, profile, dfd, gateway, sel, options.seed))
                .map(|verdict| GoOutcome::SingleAgent { verdict })
                .map_err(|e| (e.code(), e.to_string(), 0))
        };
        match outcome {
            Ok(outcome) => {
                let threat = outcome.final_verdict().threat_present.then(|| {
                    Threat::linddun_go(
                        session.next_threat_id(Methodology::LinddunGo),
                        card.id.clone(),
                        card.category,
                        card.title.clone(),
                        outcome.final_verdict().reason.clone(),
                    )
                });
                if let Some(t) = &threat {
                    session.elicitation_results.linddun_go.push(t.clone());
                }
                session.elicitation_results.go_records.push(GoRecord {
                    card_id: card.id.clone(),
                    outcome: outcome.clone(),
                    threat_id: threat.as_ref().map(|t| t.id().clone()),
                });
                report.results.push(GoCardResult { card, outcome, threat });
            }
            Err((code, message, completed_rounds)) => {
                tracing::warn!(card = %card.id, %code, "GO card evaluation failed");
                report.failures.push(CardFailure {
                    card_id: card.id.clone(),
                    code: code.to_string(),
                    message,
                    completed_rounds,
                });
            }
        }
    }
    session.touch();
    Ok(report)
}
