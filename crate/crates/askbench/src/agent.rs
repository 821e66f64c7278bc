//! The agent side of an episode: the action wire grammar, transcripts, and
//! the strategy loops (linear chain-of-thought and depth-first search).
//!
//! The model must reply with exactly one JSON object per turn:
//!
//! ```json
//! {"type": "think", "thought": "..."}
//! {"type": "ask_user", "question": "..."}
//! {"type": "call_api", "api": "...", "arguments": {"name": "value"}}
//! {"type": "finish", "answer": "..."}
//! {"type": "refuse", "statement": "..."}
//! ```

pub mod cot;
pub mod dfsdt;
pub mod prompts;

use std::collections::BTreeMap;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::toolbox::ToolResponse;

/// A think action whose text contains this marker (case-insensitively) tells
/// the depth-first strategy to abandon the current branch.
pub const GIVE_UP_MARKER: &str = "give up";

// ============================================================================
// Action grammar
// ============================================================================

/// One agent action, as carried on the wire (serde form is the wire format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Think { thought: String },
    AskUser { question: String },
    CallApi { api: String, arguments: BTreeMap<String, String> },
    Finish { answer: String },
    Refuse { statement: String },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Think { .. } => "think",
            Action::AskUser { .. } => "ask_user",
            Action::CallApi { .. } => "call_api",
            Action::Finish { .. } => "finish",
            Action::Refuse { .. } => "refuse",
        }
    }

    /// Canonical single-line JSON form.
    pub fn wire(&self) -> String {
        serde_json::to_string(self).expect("actions serialize")
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Action::Finish { .. } | Action::Refuse { .. })
    }
}

/// Why a model reply failed to parse as an action.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseReason {
    NotJson(String),
    NotObject,
    MissingType,
    UnknownKind(String),
    MissingField { kind: &'static str, field: &'static str },
    FieldNotString { kind: &'static str, field: &'static str },
    EmptyField { kind: &'static str, field: &'static str },
    BadArgument(String),
}

impl fmt::Display for ParseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseReason::NotJson(err) => write!(f, "reply is not a JSON object: {err}"),
            ParseReason::NotObject => write!(f, "reply must be a JSON object"),
            ParseReason::MissingType => write!(f, "object has no \"type\" field"),
            ParseReason::UnknownKind(kind) => write!(f, "unknown action type {kind:?}"),
            ParseReason::MissingField { kind, field } => {
                write!(f, "{kind} action needs a {field:?} field")
            }
            ParseReason::FieldNotString { kind, field } => {
                write!(f, "{kind} action field {field:?} must be a string")
            }
            ParseReason::EmptyField { kind, field } => {
                write!(f, "{kind} action field {field:?} must be non-empty")
            }
            ParseReason::BadArgument(msg) => write!(f, "bad call_api arguments: {msg}"),
        }
    }
}

/// Parse failure with the offending span of model output attached.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{reason} (in: {span:?})")]
pub struct ParseError {
    pub reason: ParseReason,
    pub span: String,
}

impl ParseError {
    fn new(reason: ParseReason, text: &str) -> Self {
        const SPAN_LIMIT: usize = 120;
        let mut span: String = text.trim().chars().take(SPAN_LIMIT).collect();
        if text.trim().chars().count() > SPAN_LIMIT {
            span.push('…');
        }
        ParseError { reason, span }
    }
}

/// Strip a surrounding markdown code fence, if present.
fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let Some(stripped) = rest.strip_suffix("```") else { return t };
    // Drop a language tag on the opening fence line ("json", etc).
    match stripped.split_once('\n') {
        Some((first, body)) if !first.trim().is_empty() && !first.trim_start().starts_with('{') => {
            body.trim()
        }
        _ => stripped.trim(),
    }
}

fn require_string(
    map: &serde_json::Map<String, serde_json::Value>,
    kind: &'static str,
    field: &'static str,
    text: &str,
) -> Result<String, ParseError> {
    match map.get(field) {
        None => Err(ParseError::new(ParseReason::MissingField { kind, field }, text)),
        Some(serde_json::Value::String(s)) => {
            if s.trim().is_empty() {
                Err(ParseError::new(ParseReason::EmptyField { kind, field }, text))
            } else {
                Ok(s.clone())
            }
        }
        Some(_) => Err(ParseError::new(ParseReason::FieldNotString { kind, field }, text)),
    }
}

/// Parse one model reply into an [`Action`].
///
/// The reply must be a single JSON object in the documented grammar; a
/// surrounding markdown code fence is tolerated, and scalar argument values
/// (numbers, booleans) are canonicalized to their literal text. Everything
/// else is a [`ParseError`] carrying the offending span.
pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    let body = strip_fence(text);
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| ParseError::new(ParseReason::NotJson(e.to_string()), text))?;
    let Some(map) = value.as_object() else {
        return Err(ParseError::new(ParseReason::NotObject, text));
    };
    let Some(kind) = map.get("type").and_then(|v| v.as_str()) else {
        return Err(ParseError::new(ParseReason::MissingType, text));
    };
    match kind {
        "think" => Ok(Action::Think { thought: require_string(map, "think", "thought", text)? }),
        "ask_user" => {
            Ok(Action::AskUser { question: require_string(map, "ask_user", "question", text)? })
        }
        "finish" => Ok(Action::Finish { answer: require_string(map, "finish", "answer", text)? }),
        "refuse" => {
            Ok(Action::Refuse { statement: require_string(map, "refuse", "statement", text)? })
        }
        "call_api" => {
            let api = require_string(map, "call_api", "api", text)?;
            let Some(args_value) = map.get("arguments") else {
                return Err(ParseError::new(
                    ParseReason::MissingField { kind: "call_api", field: "arguments" },
                    text,
                ));
            };
            let Some(args_map) = args_value.as_object() else {
                return Err(ParseError::new(
                    ParseReason::BadArgument("\"arguments\" must be an object".into()),
                    text,
                ));
            };
            let mut arguments = BTreeMap::new();
            for (name, value) in args_map {
                let rendered = match value {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    other => {
                        return Err(ParseError::new(
                            ParseReason::BadArgument(format!(
                                "argument {name:?} must be a scalar, got {other}"
                            )),
                            text,
                        ))
                    }
                };
                arguments.insert(name.clone(), rendered);
            }
            Ok(Action::CallApi { api, arguments })
        }
        other => Err(ParseError::new(ParseReason::UnknownKind(other.to_string()), text)),
    }
}

// ============================================================================
// Transcript
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Agent,
    Simulator,
    Tool,
}

/// Payload of one transcript event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    /// A parsed agent action.
    Action { action: Action },
    /// A model reply that failed to parse (kept raw for audit; it consumed
    /// budget and triggered a corrective re-prompt).
    ParseFailure { raw: String, error: String },
    /// The simulated user's reply to an ask_user action.
    Reply { reply: String },
    /// The toolbox's response to a call_api action.
    ToolResult { response: ToolResponse },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub actor: Actor,
    #[serde(flatten)]
    pub body: EventBody,
    pub ts_ms: u64,
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Finished,
    Refused,
    BudgetExhausted,
    ParseFailed,
    /// The backend (or another piece of infrastructure) failed mid-episode;
    /// the transcript holds everything up to the abort.
    BackendError,
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TerminalStatus::Finished => "finished",
            TerminalStatus::Refused => "refused",
            TerminalStatus::BudgetExhausted => "budget_exhausted",
            TerminalStatus::ParseFailed => "parse_failed",
            TerminalStatus::BackendError => "backend_error",
        };
        f.write_str(s)
    }
}

/// Full record of one episode: who did what, in order, and how it ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub case_id: String,
    /// Strategy label, e.g. "cot", "dfsdt+awn".
    pub strategy: String,
    /// Model identifier from the backend.
    pub model: String,
    pub status: TerminalStatus,
    /// Agent actions generated on branches that were later abandoned by the
    /// depth-first strategy (they consumed budget but are not events here).
    pub abandoned_actions: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub events: Vec<TranscriptEvent>,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Transcript {
    pub fn new(case_id: &str, strategy: String, model: &str) -> Self {
        Transcript {
            case_id: case_id.to_string(),
            strategy,
            model: model.to_string(),
            status: TerminalStatus::BudgetExhausted,
            abandoned_actions: 0,
            abort_reason: None,
            events: Vec::new(),
        }
    }

    /// Agent-actor events: parsed actions plus parse failures.
    pub fn agent_events(&self) -> impl Iterator<Item = &TranscriptEvent> {
        self.events.iter().filter(|e| e.actor == Actor::Agent)
    }

    /// Parsed agent actions, in order.
    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.events.iter().filter_map(|e| match &e.body {
            EventBody::Action { action } => Some(action),
            _ => None,
        })
    }

    /// Questions the agent asked, in order.
    pub fn questions(&self) -> Vec<&str> {
        self.actions()
            .filter_map(|a| match a {
                Action::AskUser { question } => Some(question.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Zero out wall-clock fields for byte-stable comparison of runs.
    pub fn canonicalize(&mut self) {
        for event in &mut self.events {
            event.ts_ms = 0;
        }
    }

    /// Check the structural invariants: every ask_user is immediately
    /// followed by a simulator reply, every call_api by a tool result (and
    /// replies/results appear only there), and at most one finish/refuse
    /// exists, as the final event.
    pub fn validate(&self) -> Result<(), String> {
        let events = &self.events;
        for (i, event) in events.iter().enumerate() {
            match (&event.actor, &event.body) {
                (Actor::Agent, EventBody::Action { action }) => {
                    let expects = match action {
                        Action::AskUser { .. } => Some("reply"),
                        Action::CallApi { .. } => Some("tool_result"),
                        _ => None,
                    };
                    if let Some(expected) = expects {
                        let ok = match events.get(i + 1).map(|n| (&n.actor, &n.body)) {
                            Some((Actor::Simulator, EventBody::Reply { .. })) => {
                                expected == "reply"
                            }
                            Some((Actor::Tool, EventBody::ToolResult { .. })) => {
                                expected == "tool_result"
                            }
                            _ => false,
                        };
                        if !ok {
                            return Err(format!(
                                "event {i}: {} must be immediately followed by a {expected}",
                                action.kind()
                            ));
                        }
                    }
                    if action.is_terminal() && i + 1 != events.len() {
                        return Err(format!("event {i}: {} must be the final event", action.kind()));
                    }
                }
                (Actor::Agent, EventBody::ParseFailure { .. }) => {}
                (Actor::Simulator, EventBody::Reply { .. }) => {
                    let preceded = i > 0
                        && matches!(
                            &events[i - 1].body,
                            EventBody::Action { action: Action::AskUser { .. } }
                        );
                    if !preceded {
                        return Err(format!("event {i}: reply without a preceding ask_user"));
                    }
                }
                (Actor::Tool, EventBody::ToolResult { .. }) => {
                    let preceded = i > 0
                        && matches!(
                            &events[i - 1].body,
                            EventBody::Action { action: Action::CallApi { .. } }
                        );
                    if !preceded {
                        return Err(format!("event {i}: tool result without a preceding call_api"));
                    }
                }
                (actor, body) => {
                    return Err(format!("event {i}: actor {actor:?} cannot carry {body:?}"));
                }
            }
        }
        let terminals = self.actions().filter(|a| a.is_terminal()).count();
        if terminals > 1 {
            return Err("transcript has more than one finish/refuse".into());
        }
        Ok(())
    }

    pub(crate) fn push_action(&mut self, action: Action) {
        self.events.push(TranscriptEvent {
            actor: Actor::Agent,
            body: EventBody::Action { action },
            ts_ms: now_ms(),
        });
    }

    pub(crate) fn push_parse_failure(&mut self, raw: String, error: String) {
        self.events.push(TranscriptEvent {
            actor: Actor::Agent,
            body: EventBody::ParseFailure { raw, error },
            ts_ms: now_ms(),
        });
    }

    pub(crate) fn push_reply(&mut self, reply: String) {
        self.events.push(TranscriptEvent {
            actor: Actor::Simulator,
            body: EventBody::Reply { reply },
            ts_ms: now_ms(),
        });
    }

    pub(crate) fn push_tool(&mut self, response: ToolResponse) {
        self.events.push(TranscriptEvent {
            actor: Actor::Tool,
            body: EventBody::ToolResult { response },
            ts_ms: now_ms(),
        });
    }
}

// ============================================================================
// Strategy configuration
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Cot,
    Dfsdt,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Cot => "cot",
            StrategyKind::Dfsdt => "dfsdt",
        })
    }
}

/// Knobs shared by both strategies plus the depth-first extras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    /// Wrap the system prompt with the ask-when-needed instructions.
    #[serde(default)]
    pub awn: bool,
    /// Global budget of generated agent actions per episode (both strategies;
    /// for the depth-first strategy this counts every branch).
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    /// Corrective re-prompts allowed per action slot before giving up.
    #[serde(default = "default_parse_retry_limit")]
    pub parse_retry_limit: u32,
    /// Candidate actions per node for the depth-first strategy.
    #[serde(default = "default_dfsdt_k")]
    pub dfsdt_k: u32,
    /// Maximum actions on any root-to-leaf path for the depth-first strategy.
    #[serde(default = "default_dfsdt_max_depth")]
    pub dfsdt_max_depth: u32,
}

fn default_strategy() -> StrategyKind {
    StrategyKind::Cot
}

fn default_max_steps() -> u32 {
    20
}

fn default_parse_retry_limit() -> u32 {
    2
}

fn default_dfsdt_k() -> u32 {
    2
}

fn default_dfsdt_max_depth() -> u32 {
    12
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            strategy: StrategyKind::Cot,
            awn: false,
            max_steps: default_max_steps(),
            parse_retry_limit: default_parse_retry_limit(),
            dfsdt_k: default_dfsdt_k(),
            dfsdt_max_depth: default_dfsdt_max_depth(),
        }
    }
}

impl StrategyConfig {
    /// Strategy label recorded in transcripts, e.g. "dfsdt+awn".
    pub fn label(&self) -> String {
        if self.awn {
            format!("{}+awn", self.strategy)
        } else {
            self.strategy.to_string()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        if self.dfsdt_k == 0 {
            return Err("dfsdt_k must be at least 1".into());
        }
        if self.dfsdt_max_depth == 0 {
            return Err("dfsdt_max_depth must be at least 1".into());
        }
        Ok(())
    }
}

/// True when a think text asks to abandon the branch.
pub fn is_give_up(thought: &str) -> bool {
    thought.to_lowercase().contains(GIVE_UP_MARKER)
}

/// Run one episode with whichever strategy the config selects.
pub fn run_episode(
    case: &crate::corpus::TestCase,
    backend: &dyn crate::backend::Backend,
    provider: &crate::user_sim::SimilarityProvider,
    assets: &prompts::PromptAssets,
    config: &StrategyConfig,
) -> Transcript {
    match config.strategy {
        StrategyKind::Cot => cot::run_cot(case, backend, provider, assets, config),
        StrategyKind::Dfsdt => dfsdt::run_dfsdt(case, backend, provider, assets, config),
    }
}

// ============================================================================
// Tests
// ============================================================================
