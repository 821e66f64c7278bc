//! Chat-completion backends.
//!
//! Every model the harness talks to sits behind the [`Backend`] trait:
//! a list of chat messages goes in, one completion comes out. Three
//! implementations: [`HttpBackend`] speaks the ubiquitous JSON
//! chat-completions protocol over HTTP, [`ScriptedBackend`] replays a fixed
//! list of outputs for deterministic tests, and [`RecordingBackend`] wraps
//! any backend while capturing its outputs so a live run can later be
//! replayed as a script.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Default number of retries after a transient transport failure.
pub const DEFAULT_MAX_RETRIES: u32 = 2;
/// Default per-request timeout in seconds.
pub const DEFAULT_TIMEOUT_S: f64 = 60.0;
/// Base delay for exponential backoff between retries.
const BACKOFF_BASE_MS: u64 = 200;

// ============================================================================
// Protocol types
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

/// One message in a chat conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, content: content.into(), tool_call_id: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into(), tool_call_id: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::Assistant, content: content.into(), tool_call_id: None }
    }
}

/// Token accounting as reported by the provider, when available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One completion: the text the model produced (trailing whitespace trimmed,
/// nothing else touched) plus optional usage numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

/// Configuration for a live chat-completions backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Name of the environment variable holding the API key. No variable
    /// means requests go out unauthenticated (fine for local endpoints).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

fn default_timeout_s() -> f64 {
    DEFAULT_TIMEOUT_S
}

fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("environment variable {var} is not set (expected the API key)")]
    MissingApiKey { var: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("script exhausted after {len} completion(s)")]
    ScriptExhausted { len: usize },
}

/// Anything that can complete a chat conversation. Implementations must be
/// safe to call concurrently from several episode workers.
pub trait Backend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ModelOutput, BackendError>;

    /// Model identifier recorded in transcripts and reports.
    fn label(&self) -> &str;
}

fn check_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    match messages.first() {
        None => Err(BackendError::InvalidRequest("messages must be non-empty".into())),
        Some(first) if matches!(first.role, ChatRole::System | ChatRole::User) => Ok(()),
        Some(_) => Err(BackendError::InvalidRequest(
            "conversation must start with a system or user message".into(),
        )),
    }
}

// ============================================================================
// Live HTTP backend
// ============================================================================

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Blocking client for the JSON chat-completions protocol. Transient
/// transport failures and 429/5xx responses are retried with exponential
/// backoff up to the configured budget; other HTTP errors surface at once
/// with the provider's error body.
pub struct HttpBackend {
    config: BackendConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        if !(0.0..=2.0).contains(&config.temperature) {
            return Err(BackendError::InvalidConfig(format!(
                "temperature must be in [0, 2], got {}",
                config.temperature
            )));
        }
        if config.timeout_s <= 0.0 {
            return Err(BackendError::InvalidConfig("timeout_s must be positive".into()));
        }
        let api_key = match &config.api_key_env {
            None => None,
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::MissingApiKey { var: var.clone() })?,
            ),
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        Ok(HttpBackend { config, api_key, http })
    }

    fn send_once(&self, messages: &[ChatMessage]) -> Result<reqwest::blocking::Response, reqwest::Error> {
        let request = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut builder = self.http.post(&self.config.endpoint).json(&request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        builder.send()
    }
}

impl Backend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ModelOutput, BackendError> {
        check_messages(messages)?;
        let budget = self.config.max_retries;
        let mut last_failure = String::new();
        for attempt in 0..=budget {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1).min(4)));
            }
            let resp = match self.send_once(messages) {
                Ok(resp) => resp,
                Err(e) => {
                    last_failure = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.as_u16() == 429 || status.is_server_error() {
                last_failure =
                    format!("HTTP {status}: {}", resp.text().unwrap_or_default());
                continue;
            }
            if !status.is_success() {
                return Err(BackendError::Http {
                    status: status.as_u16(),
                    body: resp.text().unwrap_or_default(),
                });
            }
            let parsed: ChatResponse =
                resp.json().map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
            let choice = parsed
                .choices
                .into_iter()
                .next()
                .ok_or_else(|| BackendError::MalformedResponse("response has no choices".into()))?;
            let text = choice
                .message
                .content
                .ok_or_else(|| BackendError::MalformedResponse("choice has no content".into()))?;
            return Ok(ModelOutput {
                text: text.trim_end().to_string(),
                usage: parsed.usage.map(|u| TokenUsage {
                    prompt_tokens: u.prompt_tokens,
                    completion_tokens: u.completion_tokens,
                }),
            });
        }
        Err(BackendError::Transport { attempts: budget + 1, message: last_failure })
    }

    fn label(&self) -> &str {
        &self.config.model
    }
}

// ============================================================================
// Scripted backend
// ============================================================================

/// Replays a fixed list of completions in order, ignoring the messages.
/// Asking for more completions than the script holds is an error — a script
/// that runs dry mid-episode is a bug in the script, not in the agent.
pub struct ScriptedBackend {
    label: String,
    script: Vec<String>,
    cursor: Mutex<usize>,
}

/// Build a scripted backend with the default label `"scripted"`.
pub fn make_scripted(script: Vec<String>) -> ScriptedBackend {
    ScriptedBackend::with_label(script, "scripted")
}

impl ScriptedBackend {
    pub fn with_label(script: Vec<String>, label: impl Into<String>) -> Self {
        ScriptedBackend { label: label.into(), script, cursor: Mutex::new(0) }
    }

    /// How many completions have been handed out so far.
    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ModelOutput, BackendError> {
        check_messages(messages)?;
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let Some(entry) = self.script.get(*cursor) else {
            return Err(BackendError::ScriptExhausted { len: self.script.len() });
        };
        *cursor += 1;
        Ok(ModelOutput { text: entry.trim_end().to_string(), usage: None })
    }

    fn label(&self) -> &str {
        &self.label
    }
}

// ============================================================================
// Recording backend
// ============================================================================

/// Wraps another backend and records every completion it returns, so a live
/// episode can be replayed later through [`make_scripted`].
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    log: Mutex<Vec<String>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        RecordingBackend { inner, log: Mutex::new(Vec::new()) }
    }

    /// The completions recorded so far, in order.
    pub fn recorded(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ModelOutput, BackendError> {
        let output = self.inner.complete(messages)?;
        self.log.lock().expect("log lock").push(output.text.clone());
        Ok(output)
    }

    fn label(&self) -> &str {
        self.inner.label()
    }
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs() -> Vec<ChatMessage> {
        vec![ChatMessage::system("s"), ChatMessage::user("u")]
    }

    #[test]
    fn scripted_backend_replays_in_order_then_errors() {
        let backend = make_scripted(vec!["one".into(), "two\n".into()]);
        assert_eq!(backend.complete(&msgs()).unwrap().text, "one");
        assert_eq!(backend.complete(&msgs()).unwrap().text, "two");
        assert_eq!(backend.consumed(), 2);
        assert!(matches!(
            backend.complete(&msgs()),
            Err(BackendError::ScriptExhausted { len: 2 })
        ));
    }

    #[test]
    fn empty_conversations_are_rejected() {
        let backend = make_scripted(vec!["x".into()]);
        assert!(matches!(backend.complete(&[]), Err(BackendError::InvalidRequest(_))));
        let assistant_first = vec![ChatMessage::assistant("hello")];
        assert!(matches!(
            backend.complete(&assistant_first),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn recording_backend_captures_outputs() {
        let inner = Arc::new(make_scripted(vec!["a".into(), "b".into()]));
        let recorder = RecordingBackend::new(inner);
        recorder.complete(&msgs()).unwrap();
        recorder.complete(&msgs()).unwrap();
        assert_eq!(recorder.recorded(), vec!["a".to_string(), "b".to_string()]);
        assert_eq!(recorder.label(), "scripted");
    }

    #[test]
    fn config_bounds_are_validated() {
        let config = BackendConfig {
            endpoint: "http://localhost:1/v1/chat/completions".into(),
            model: "m".into(),
            temperature: 3.0,
            max_tokens: None,
            timeout_s: 5.0,
            max_retries: 0,
            api_key_env: None,
        };
        assert!(matches!(HttpBackend::new(config), Err(BackendError::InvalidConfig(_))));
    }

    #[test]
    fn missing_api_key_env_is_an_error() {
        let config = BackendConfig {
            endpoint: "http://localhost:1/v1/chat/completions".into(),
            model: "m".into(),
            temperature: 0.0,
            max_tokens: None,
            timeout_s: 5.0,
            max_retries: 0,
            api_key_env: Some("ASKBENCH_TEST_KEY_THAT_DOES_NOT_EXIST".into()),
        };
        assert!(matches!(HttpBackend::new(config), Err(BackendError::MissingApiKey { .. })));
    }

    #[test]
    fn chat_message_serialization_omits_empty_tool_call_id() {
        let m = ChatMessage::user("hi");
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"role":"user","content":"hi"}"#);
    }
}
