//! Chat-completion endpoint client plus robust parsing/repair of model
//! outputs into coefficient vectors.
//!
//! The wire protocol is an OpenAI-compatible `POST <base_url>/chat/completions`
//! JSON exchange, which also lets the tests run against a local mock server.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    from_semantic_map, registry, validate_coeffs, CoeffVector, ValidatePolicy, CHANNEL_COUNT,
};
use crate::prompt::{FullPrompt, PromptMode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint rejected credentials (HTTP {0})")]
    AuthRejected(u16),
    #[error("rate limited after retries")]
    RateLimited,
    #[error("endpoint returned an empty response")]
    EmptyResponse,
    #[error("no JSON object/array found in model output")]
    Unparseable,
    #[error("expected {CHANNEL_COUNT} values, model produced {0}")]
    WrongDimension(usize),
}

/// Connection settings for one chat-completion endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub api_key: String,
    pub model_name: String,
    /// Request timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    pub temperature: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".to_string(),
            api_key: String::new(),
            model_name: "default".to_string(),
            timeout: 60.0,
            max_retries: 3,
            temperature: 0.0,
        }
    }
}

impl EndpointConfig {
    /// Applies the `KEYFACE_API_BASE`, `KEYFACE_API_KEY`, and `KEYFACE_MODEL`
    /// environment variables on top of the current values.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var("KEYFACE_API_BASE") {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var("KEYFACE_API_KEY") {
            self.api_key = v;
        }
        if let Ok(v) = std::env::var("KEYFACE_MODEL") {
            self.model_name = v;
        }
        self
    }
}

/// One chat message on the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".to_string(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".to_string(),
            content: content.into(),
        }
    }
}

/// Shareable blocking client; independent requests may run concurrently.
#[derive(Debug, Clone)]
pub struct LlmClient {
    http: reqwest::blocking::Client,
    /// Base delay for exponential backoff between retries.
    backoff: Duration,
}

impl Default for LlmClient {
    fn default() -> Self {
        LlmClient::new()
    }
}

impl LlmClient {
    pub fn new() -> Self {
        LlmClient {
            http: reqwest::blocking::Client::new(),
            backoff: Duration::from_millis(100),
        }
    }

    /// Shortens the retry backoff; intended for tests against local mocks.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// Sends one chat-completion request, retrying transport failures and
    /// 5xx/429 responses with exponential backoff up to `max_retries`.
    pub fn chat(
        &self,
        messages: &[ChatMessage],
        cfg: &EndpointConfig,
    ) -> Result<String, GatewayError> {
        self.chat_with_retries(messages, cfg, cfg.max_retries)
    }

    pub(crate) fn chat_with_retries(
        &self,
        messages: &[ChatMessage],
        cfg: &EndpointConfig,
        max_retries: u32,
    ) -> Result<String, GatewayError> {
        let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": cfg.model_name,
            "messages": messages,
            "temperature": cfg.temperature,
        });

        let mut last_err = GatewayError::Transport("no attempt made".to_string());
        for attempt in 0..=max_retries {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self
                .http
                .post(&url)
                .timeout(Duration::from_secs_f64(cfg.timeout))
                .json(&body);
            if !cfg.api_key.is_empty() {
                req = req.bearer_auth(&cfg.api_key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return extract_content(resp);
                    }
                    if status.as_u16() == 401 || status.as_u16() == 403 {
                        return Err(GatewayError::AuthRejected(status.as_u16()));
                    }
                    if status.as_u16() == 429 {
                        last_err = GatewayError::RateLimited;
                    } else if status.is_server_error() {
                        last_err =
                            GatewayError::Transport(format!("server returned HTTP {status}"));
                    } else {
                        // 4xx other than auth/rate-limit will not improve on retry.
                        return Err(GatewayError::Transport(format!(
                            "server returned HTTP {status}"
                        )));
                    }
                }
                Err(e) => last_err = GatewayError::Transport(e.to_string()),
            }
        }
        Err(last_err)
    }
}

fn extract_content(resp: reqwest::blocking::Response) -> Result<String, GatewayError> {
    let value: Value = resp
        .json()
        .map_err(|e| GatewayError::Transport(format!("invalid response body: {e}")))?;
    let content = value["choices"][0]["message"]["content"]
        .as_str()
        .unwrap_or("");
    if content.is_empty() {
        return Err(GatewayError::EmptyResponse);
    }
    Ok(content.to_string())
}

/// A chat-completion backend with an explicit retry budget. Implemented by
/// `LlmClient` for the real endpoint; test doubles can count or script calls.
pub trait ChatEndpoint: Sync {
    fn chat_with_budget(
        &self,
        messages: &[ChatMessage],
        cfg: &EndpointConfig,
        max_retries: u32,
    ) -> Result<String, GatewayError>;

    /// One request using the config's own retry budget.
    fn chat_cfg(
        &self,
        messages: &[ChatMessage],
        cfg: &EndpointConfig,
    ) -> Result<String, GatewayError> {
        self.chat_with_budget(messages, cfg, cfg.max_retries)
    }
}

impl ChatEndpoint for LlmClient {
    fn chat_with_budget(
        &self,
        messages: &[ChatMessage],
        cfg: &EndpointConfig,
        max_retries: u32,
    ) -> Result<String, GatewayError> {
        self.chat_with_retries(messages, cfg, max_retries)
    }
}

/// Splits a composed prompt into wire messages: the system turn carries the
/// system prompt when semantic, the user turn carries script + instruction.
pub fn prompt_to_messages(prompt: &FullPrompt) -> Vec<ChatMessage> {
    let mut messages = Vec::new();
    if let Some(sys) = &prompt.system {
        messages.push(ChatMessage::system(sys.render()));
    }
    messages.push(ChatMessage::user(prompt.user_text()));
    messages
}

/// Sends a composed prompt and returns the first choice's message content.
pub fn complete<E: ChatEndpoint + ?Sized>(
    client: &E,
    prompt: &FullPrompt,
    cfg: &EndpointConfig,
) -> Result<String, GatewayError> {
    client.chat_cfg(&prompt_to_messages(prompt), cfg)
}

/// Repairs applied while parsing a model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairTag {
    CodeFenceStrip,
    JsonExtract,
    Clamp,
    FillMissing,
}

/// Record of what it took to turn raw model output into a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub repairs_applied: Vec<RepairTag>,
    pub ok: bool,
}

fn strip_code_fences(input: &str) -> (String, bool) {
    let Some(open) = input.find("```") else {
        return (input.to_string(), false);
    };
    let after = &input[open + 3..];
    // Skip an optional language tag up to the first newline.
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let inner = match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    };
    (inner.to_string(), true)
}

/// Scans a balanced `{...}` or `[...]` block starting at byte `start`,
/// honoring JSON string literals and escapes.
fn balanced_block(input: &str, start: usize, open: char, close: char) -> Option<&str> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, ch) in input[start..].char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_str = false;
            }
            continue;
        }
        if ch == '"' {
            in_str = true;
        } else if ch == open {
            depth += 1;
        } else if ch == close {
            depth -= 1;
            if depth == 0 {
                return Some(&input[start..start + i + ch.len_utf8()]);
            }
        }
    }
    None
}

/// Finds the first substring that is a balanced block *and* parses as JSON.
/// Candidate start positions are tried in order so prose quoting a stray
/// brace does not shadow the real payload.
fn extract_first_json(input: &str, open: char, close: char) -> Option<Value> {
    for (i, ch) in input.char_indices() {
        if ch != open {
            continue;
        }
        if let Some(block) = balanced_block(input, i, open, close) {
            if let Ok(value) = serde_json::from_str::<Value>(block) {
                return Some(value);
            }
        }
    }
    None
}

/// Parses raw model output into a validated vector plus a repair report.
///
/// Semantic mode looks for the first JSON object and maps it through the
/// semantic-map path; non-semantic mode looks for the first JSON array of
/// 61 numbers. All repairs are logged in ladder order.
pub fn parse_generation(
    raw: &str,
    mode: PromptMode,
) -> Result<(CoeffVector, ParseReport), GatewayError> {
    let mut repairs = Vec::new();
    let (text, fenced) = strip_code_fences(raw.trim());
    if fenced {
        repairs.push(RepairTag::CodeFenceStrip);
    }
    let text = text.trim();

    match mode {
        PromptMode::Semantic => {
            let object = match serde_json::from_str::<Value>(text) {
                Ok(Value::Object(map)) => Value::Object(map),
                _ => {
                    let parsed =
                        extract_first_json(text, '{', '}').ok_or(GatewayError::Unparseable)?;
                    repairs.push(RepairTag::JsonExtract);
                    parsed
                }
            };
            let obj = object.as_object().ok_or(GatewayError::Unparseable)?;
            let reg = registry();
            let mut map = BTreeMap::new();
            let mut clamped = false;
            for (key, value) in obj {
                let Some(number) = value.as_f64() else {
                    continue; // non-numeric entries are dropped
                };
                if reg.index_of(key).is_none() {
                    continue; // unknown channel names are dropped
                }
                if !(-1.0..=1.0).contains(&number) {
                    clamped = true;
                }
                map.insert(key.clone(), number);
            }
            if clamped {
                repairs.push(RepairTag::Clamp);
            }
            if map.len() < CHANNEL_COUNT {
                repairs.push(RepairTag::FillMissing);
            }
            let vector = from_semantic_map(&map, ValidatePolicy::Clamp)
                .map_err(|_| GatewayError::Unparseable)?;
            Ok((
                vector,
                ParseReport {
                    repairs_applied: repairs,
                    ok: true,
                },
            ))
        }
        PromptMode::NonSemantic => {
            let array = match serde_json::from_str::<Value>(text) {
                Ok(Value::Array(items)) => Value::Array(items),
                _ => {
                    let parsed =
                        extract_first_json(text, '[', ']').ok_or(GatewayError::Unparseable)?;
                    repairs.push(RepairTag::JsonExtract);
                    parsed
                }
            };
            let items = array.as_array().ok_or(GatewayError::Unparseable)?;
            let numbers: Vec<f64> = items
                .iter()
                .map(|v| v.as_f64().ok_or(GatewayError::Unparseable))
                .collect::<Result<_, _>>()?;
            if numbers.len() != CHANNEL_COUNT {
                return Err(GatewayError::WrongDimension(numbers.len()));
            }
            if numbers.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                repairs.push(RepairTag::Clamp);
            }
            let vector = validate_coeffs(&numbers, ValidatePolicy::Clamp)
                .map_err(|_| GatewayError::Unparseable)?;
            Ok((
                vector,
                ParseReport {
                    repairs_applied: repairs,
                    ok: true,
                },
            ))
        }
    }
}

/// Format reminder appended to the re-ask after an unparseable first answer.
const FORMAT_REMINDER: &str =
    "Your previous answer could not be parsed. Respond again with only the \
     requested JSON, with no prose or markdown around it.";

/// Completes one keyframe: send, parse, and on an unparseable answer re-ask
/// once with a format reminder (the re-ask is a single attempt, keeping the
/// total network calls at max_retries + 2).
pub fn generate_keyframe<E: ChatEndpoint + ?Sized>(
    client: &E,
    prompt: &FullPrompt,
    cfg: &EndpointConfig,
) -> Result<(CoeffVector, ParseReport), GatewayError> {
    let raw = complete(client, prompt, cfg)?;
    match parse_generation(&raw, prompt.mode) {
        Ok(result) => Ok(result),
        Err(GatewayError::Unparseable) | Err(GatewayError::WrongDimension(_)) => {
            let mut messages = prompt_to_messages(prompt);
            let user = messages.last_mut().unwrap();
            user.content = format!("{}\n\n{}", user.content, FORMAT_REMINDER);
            let raw = client.chat_with_budget(&messages, cfg, 0)?;
            parse_generation(&raw, prompt.mode)
        }
        Err(e) => Err(e),
    }
}

/// Extracts the first JSON object from raw model output, tolerating code
/// fences and surrounding prose. Returns the object's canonical JSON text.
pub fn extract_json_object(raw: &str) -> Option<String> {
    let (text, _) = strip_code_fences(raw.trim());
    let text = text.trim();
    if let Ok(value @ Value::Object(_)) = serde_json::from_str::<Value>(text) {
        return Some(value.to_string());
    }
    extract_first_json(text, '{', '}')
        .filter(Value::is_object)
        .map(|v| v.to_string())
}
