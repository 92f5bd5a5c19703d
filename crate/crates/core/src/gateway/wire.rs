//! Request and response shapes for each provider kind.
//!
//! * `openai-like`: `POST {base}/chat/completions`, bearer auth, schema in
//!   `response_format.json_schema` when native, `json_object` mode otherwise.
//! * `gemini-like`: `POST {base}/models/{model}:generateContent`,
//!   `x-goog-api-key` header, schema in `generationConfig.responseSchema`
//!   when native.
//! * `mistral-like`: `POST {base}/chat/completions`, bearer auth, same
//!   `response_format` convention as openai-like, `random_seed` for seeds.

use std::fmt;

use base64::Engine;
use serde_json::{json, Map, Value};

use super::{ProviderCall, ProviderConfig, ProviderKind, UserPart};

pub const OPENAI_BASE: &str = "https://api.openai.com/v1";
pub const GEMINI_BASE: &str = "https://generativelanguage.googleapis.com/v1beta";
pub const MISTRAL_BASE: &str = "https://api.mistral.ai/v1";

pub struct WireRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

impl fmt::Debug for WireRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // header values carry credentials
        f.debug_struct("WireRequest")
            .field("url", &self.url)
            .field(
                "headers",
                &self.headers.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>(),
            )
            .field("body", &self.body)
            .finish()
    }
}

/// Drop schema keywords the provider's enforcement channel rejects.
pub fn strip_keywords(schema: &Value, drop: &[&str]) -> Value {
    match schema {
        Value::Object(map) => Value::Object(
            map.iter()
                .filter(|(k, _)| !drop.contains(&k.as_str()))
                .map(|(k, v)| {
                    let v = if k == "properties" {
                        // property names are not keywords
                        Value::Object(
                            v.as_object()
                                .map(|props| {
                                    props
                                        .iter()
                                        .map(|(pk, pv)| (pk.clone(), strip_keywords(pv, drop)))
                                        .collect::<Map<_, _>>()
                                })
                                .unwrap_or_default(),
                        )
                    } else {
                        strip_keywords(v, drop)
                    };
                    (k.clone(), v)
                })
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.iter().map(|v| strip_keywords(v, drop)).collect()),
        other => other.clone(),
    }
}

fn schema_name(tag: &str) -> String {
    let s: String = tag
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .take(64)
        .collect();
    if s.is_empty() {
        "response".into()
    } else {
        s
    }
}

fn data_url(data: &[u8], mime: &str) -> String {
    format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(data)
    )
}

fn base(cfg: &ProviderConfig, default: &str) -> String {
    cfg.base_url
        .as_deref()
        .unwrap_or(default)
        .trim_end_matches('/')
        .to_string()
}

fn chat_response_format(cfg: &ProviderConfig, call: &ProviderCall, drop: &[&str]) -> Value {
    if cfg.capabilities.native_structured_output {
        json!({
            "type": "json_schema",
            "json_schema": {
                "name": schema_name(&call.purpose_tag),
                "strict": true,
                "schema": strip_keywords(&call.response_schema, drop),
            }
        })
    } else {
        json!({"type": "json_object"})
    }
}

/// Build the HTTP request for one attempt. `api_key` is placed in a header
/// only, never in the URL or body.
pub fn build_request(cfg: &ProviderConfig, call: &ProviderCall, api_key: Option<&str>) -> WireRequest {
    let key = api_key.unwrap_or_default();
    match cfg.kind {
        ProviderKind::OpenaiLike | ProviderKind::Mock => {
            let content: Vec<Value> = call
                .user_parts
                .iter()
                .map(|p| match p {
                    UserPart::Text(t) => json!({"type": "text", "text": t}),
                    UserPart::Image { data, media_type } => json!({
                        "type": "image_url",
                        "image_url": {"url": data_url(data, media_type.mime())}
                    }),
                })
                .collect();
            let mut body = json!({
                "model": cfg.model_name,
                "messages": [
                    {"role": "system", "content": call.system_prompt},
                    {"role": "user", "content": content},
                ],
                "temperature": call.temperature,
                "response_format": chat_response_format(
                    cfg,
                    call,
                    &["minLength", "maxLength", "minItems", "maxItems"],
                ),
            });
            if let Some(seed) = call.seed {
                body["seed"] = json!(seed);
            }
            WireRequest {
                url: format!("{}/chat/completions", base(cfg, OPENAI_BASE)),
                headers: vec![("Authorization".into(), format!("Bearer {key}"))],
                body,
            }
        }
        ProviderKind::MistralLike => {
            let content: Vec<Value> = call
                .user_parts
                .iter()
                .map(|p| match p {
                    UserPart::Text(t) => json!({"type": "text", "text": t}),
                    UserPart::Image { data, media_type } => json!({
                        "type": "image_url",
                        "image_url": data_url(data, media_type.mime())
                    }),
                })
                .collect();
            let mut body = json!({
                "model": cfg.model_name,
                "messages": [
                    {"role": "system", "content": call.system_prompt},
                    {"role": "user", "content": content},
                ],
                "temperature": call.temperature,
                "response_format": chat_response_format(cfg, call, &[]),
            });
            if let Some(seed) = call.seed {
                body["random_seed"] = json!(seed);
            }
            WireRequest {
                url: format!("{}/chat/completions", base(cfg, MISTRAL_BASE)),
                headers: vec![("Authorization".into(), format!("Bearer {key}"))],
                body,
            }
        }
        ProviderKind::GeminiLike => {
            let parts: Vec<Value> = call
                .user_parts
                .iter()
                .map(|p| match p {
                    UserPart::Text(t) => json!({"text": t}),
                    UserPart::Image { data, media_type } => json!({
                        "inline_data": {
                            "mime_type": media_type.mime(),
                            "data": base64::engine::general_purpose::STANDARD.encode(data),
                        }
                    }),
                })
                .collect();
            let mut generation = json!({
                "temperature": call.temperature,
                "responseMimeType": "application/json",
            });
            if cfg.capabilities.native_structured_output {
                generation["responseSchema"] = strip_keywords(
                    &call.response_schema,
                    &["additionalProperties", "minLength", "maxLength"],
                );
            }
            if let Some(seed) = call.seed {
                generation["seed"] = json!(seed);
            }
            WireRequest {
                url: format!(
                    "{}/models/{}:generateContent",
                    base(cfg, GEMINI_BASE),
                    cfg.model_name
                ),
                headers: vec![("x-goog-api-key".into(), key.to_string())],
                body: json!({
                    "systemInstruction": {"parts": [{"text": call.system_prompt}]},
                    "contents": [{"role": "user", "parts": parts}],
                    "generationConfig": generation,
                }),
            }
        }
    }
}

/// Pull the reply text out of a provider response body.
pub fn extract_text(kind: ProviderKind, body: &Value) -> Result<String, String> {
    match kind {
        ProviderKind::OpenaiLike | ProviderKind::MistralLike | ProviderKind::Mock => {
            let message = body
                .pointer("/choices/0/message")
                .ok_or("response has no choices[0].message")?;
            if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
                return Err(format!("model refused: {refusal}"));
            }
            match message.get("content") {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(Value::Array(chunks)) => Ok(chunks
                    .iter()
                    .filter_map(|c| c.get("text").and_then(Value::as_str))
                    .collect()),
                _ => Err("response message has no content".into()),
            }
        }
        ProviderKind::GeminiLike => {
            let parts = body
                .pointer("/candidates/0/content/parts")
                .and_then(Value::as_array)
                .ok_or("response has no candidates[0].content.parts")?;
            Ok(parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect())
        }
    }
}
