use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use serde_json::Value;

use super::{Provider, ProviderCall, ProviderConfig, ProviderError};

/// One scripted reply.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    /// Raw reply text, returned verbatim (may be malformed on purpose).
    Text(String),
    Timeout,
    AuthFailure,
    TransportFailure(String),
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        Self::Text(s.into())
    }

    pub fn json(v: Value) -> Self {
        Self::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub provider_id: String,
    pub call: ProviderCall,
}

/// Answers any call of its purpose whose body text contains every needle.
#[derive(Debug, Clone, PartialEq)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub reply: MockReply,
}

type Responder = Box<dyn Fn(&str, &ProviderCall) -> MockReply + Send + Sync>;

/// Deterministic test provider.
///
/// Replies come from a per-`purpose_tag` queue first, then from the first
/// matching content rule, then from an optional responder closure, then
/// (when enabled) from schema-driven synthesis. Rules are not consumed, so
/// they stay deterministic under concurrent calls.
/// Every call is recorded verbatim.
#[derive(Default)]
pub struct MockProvider {
    scripts: Mutex<HashMap<String, VecDeque<MockReply>>>,
    rules: Mutex<HashMap<String, Vec<MockRule>>>,
    responder: Option<Responder>,
    synthesize: bool,
    log: Mutex<Vec<RecordedCall>>,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider")
            .field("calls", &self.call_count())
            .field("synthesize", &self.synthesize)
            .finish()
    }
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Falls back to synthesizing a schema-conforming document.
    pub fn synthesizing() -> Self {
        Self {
            synthesize: true,
            ..Self::default()
        }
    }

    /// Responder receives the provider id and the call.
    pub fn with_responder(
        f: impl Fn(&str, &ProviderCall) -> MockReply + Send + Sync + 'static,
    ) -> Self {
        Self {
            responder: Some(Box::new(f)),
            ..Self::default()
        }
    }

    /// Load scripts from `{ "purpose_tag": entry }`. An entry is either a
    /// reply queue `[reply, ...]` or an object
    /// `{ "queue": [reply, ...], "rules": [{ "contains": "text" | ["text", ...], "reply": reply }] }`.
    /// String replies are raw reply text; any other JSON value is sent serialized.
    pub fn from_script_json(script: &Value, synthesize_fallback: bool) -> Result<Self, String> {
        let obj = script
            .as_object()
            .ok_or("mock script must be a JSON object keyed by purpose_tag")?;
        let mock = Self {
            synthesize: synthesize_fallback,
            ..Self::default()
        };
        let reply = |v: &Value| match v {
            Value::String(s) => MockReply::Text(s.clone()),
            other => MockReply::json(other.clone()),
        };
        for (tag, entry) in obj {
            let (queue, rules) = match entry {
                Value::Array(queue) => (queue.as_slice(), &[][..]),
                Value::Object(o) => (
                    o.get("queue").and_then(Value::as_array).map_or(&[][..], |a| a.as_slice()),
                    o.get("rules").and_then(Value::as_array).map_or(&[][..], |a| a.as_slice()),
                ),
                _ => return Err(format!("mock script entry `{tag}` must be an array or an object")),
            };
            mock.script(tag, queue.iter().map(reply));
            for (i, rule) in rules.iter().enumerate() {
                let bad = || format!("mock script entry `{tag}`, rule {i}: needs `contains` and `reply`");
                let contains = match rule.get("contains").ok_or_else(bad)? {
                    Value::String(s) => vec![s.clone()],
                    Value::Array(a) => a
                        .iter()
                        .map(|v| v.as_str().map(str::to_string).ok_or_else(bad))
                        .collect::<Result<_, _>>()?,
                    _ => return Err(bad()),
                };
                let reply = reply(rule.get("reply").ok_or_else(bad)?);
                mock.add_rule(tag, MockRule { contains, reply });
            }
        }
        Ok(mock)
    }

    pub fn add_rule(&self, purpose_tag: &str, rule: MockRule) {
        self.rules
            .lock()
            .unwrap()
            .entry(purpose_tag.to_string())
            .or_default()
            .push(rule);
    }

    /// Append replies to the queue for `purpose_tag`.
    pub fn script(&self, purpose_tag: &str, replies: impl IntoIterator<Item = MockReply>) {
        self.scripts
            .lock()
            .unwrap()
            .entry(purpose_tag.to_string())
            .or_default()
            .extend(replies);
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.log.lock().unwrap().clone()
    }

    pub fn calls_for(&self, purpose_tag: &str) -> Vec<RecordedCall> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.call.purpose_tag == purpose_tag)
            .cloned()
            .collect()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }

    fn next_reply(&self, provider_id: &str, call: &ProviderCall) -> Option<MockReply> {
        let scripted = self
            .scripts
            .lock()
            .unwrap()
            .get_mut(&call.purpose_tag)
            .and_then(VecDeque::pop_front);
        let body = std::cell::OnceCell::new();
        let body = || body.get_or_init(|| call.body_text()).as_str();
        scripted
            .or_else(|| {
                let rules = self.rules.lock().unwrap();
                let body = body();
                rules
                    .get(&call.purpose_tag)?
                    .iter()
                    .find(|r| r.contains.iter().all(|n| body.contains(n.as_str())))
                    .map(|r| r.reply.clone())
            })
            .or_else(|| self.responder.as_ref().map(|f| f(provider_id, call)))
            .or_else(|| {
                self.synthesize.then(|| {
                    MockReply::json(super::synthesize(&call.response_schema, body()))
                })
            })
    }
}

impl Provider for MockProvider {
    fn complete(&self, config: &ProviderConfig, call: &ProviderCall) -> Result<String, ProviderError> {
        self.log.lock().unwrap().push(RecordedCall {
            provider_id: config.provider_id.clone(),
            call: call.clone(),
        });
        match self.next_reply(&config.provider_id, call) {
            Some(MockReply::Text(t)) => Ok(t),
            Some(MockReply::Timeout) => Err(ProviderError::Timeout),
            Some(MockReply::AuthFailure) => Err(ProviderError::Auth("mock credentials rejected".into())),
            Some(MockReply::TransportFailure(m)) => Err(ProviderError::Transport(m)),
            None => Err(ProviderError::Transport(format!(
                "mock script exhausted for purpose `{}`",
                call.purpose_tag
            ))),
        }
    }
}
