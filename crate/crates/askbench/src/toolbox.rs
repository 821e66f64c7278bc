//! API schemas, argument validation, and fixture-backed call execution.
//!
//! The toolbox never raises for a bad call: every failure mode (unknown API,
//! invalid arguments, no matching fixture) comes back as an in-band
//! [`ToolResponse`] with `status = error`, which is what the agent sees and
//! must react to.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::TestCase;

/// Wildcard fixture matcher value: matches any argument value.
pub const WILDCARD: &str = "*";

// ============================================================================
// Types
// ============================================================================

/// Type tag for an API parameter value (values travel as strings on the wire).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

/// One declared parameter of an API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiParam {
    pub name: String,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

/// A callable API as presented to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<ApiParam>,
}

impl ApiSpec {
    /// Look up a declared parameter by name.
    pub fn param(&self, name: &str) -> Option<&ApiParam> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// A concrete call the agent wants to make. Argument values are strings at
/// the wire level; numeric/boolean interpretation follows the parameter's
/// declared type tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCall {
    pub api: String,
    pub arguments: BTreeMap<String, String>,
}

/// Execution status of a tool call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Ok,
    Error,
}

/// What the toolbox hands back to the agent for one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub status: ToolStatus,
    pub payload: String,
}

impl ToolResponse {
    pub fn ok(payload: impl Into<String>) -> Self {
        ToolResponse { status: ToolStatus::Ok, payload: payload.into() }
    }

    pub fn error(payload: impl Into<String>) -> Self {
        ToolResponse { status: ToolStatus::Error, payload: payload.into() }
    }

    pub fn is_error(&self) -> bool {
        self.status == ToolStatus::Error
    }
}

/// A canned response for calls whose arguments match `match` (value `"*"`
/// matches anything). When several fixtures match, the first declared wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub api: String,
    #[serde(rename = "match")]
    pub match_args: BTreeMap<String, String>,
    pub response: ToolResponse,
}

impl Fixture {
    /// A fixture matches when every matcher key is present in the call's
    /// arguments and either equals the matcher value or the matcher is `"*"`.
    /// Arguments without a matcher entry are unconstrained.
    pub fn matches(&self, call: &ApiCall) -> bool {
        self.api == call.api
            && self.match_args.iter().all(|(k, v)| {
                call.arguments.get(k).map_or(false, |got| v == WILDCARD || got == v)
            })
    }
}

// ============================================================================
// Argument validation
// ============================================================================

/// One problem found while validating a call against the API specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArgIssue {
    UnknownApi { api: String },
    MissingRequired { param: String },
    UnknownParam { param: String },
    TypeMismatch { param: String, expected: ParamType, value: String },
}

impl fmt::Display for ArgIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgIssue::UnknownApi { api } => write!(f, "unknown API: {api}"),
            ArgIssue::MissingRequired { param } => {
                write!(f, "missing required parameter: {param}")
            }
            ArgIssue::UnknownParam { param } => write!(f, "unknown parameter: {param}"),
            ArgIssue::TypeMismatch { param, expected, value } => {
                write!(f, "parameter {param} expects {expected}, got {value:?}")
            }
        }
    }
}

/// Check whether a string value is acceptable for a declared parameter type.
pub fn value_fits_type(param_type: ParamType, value: &str) -> bool {
    let v = value.trim();
    match param_type {
        ParamType::String => true,
        ParamType::Integer => v.parse::<i128>().is_ok(),
        ParamType::Number => v.parse::<f64>().is_ok(),
        ParamType::Boolean => v.eq_ignore_ascii_case("true") || v.eq_ignore_ascii_case("false"),
    }
}

/// Validate a call against the declared API specs. An empty result means the
/// call is well-formed; otherwise every problem found is listed.
pub fn validate_args(call: &ApiCall, api_specs: &[ApiSpec]) -> Vec<ArgIssue> {
    let Some(spec) = api_specs.iter().find(|s| s.name == call.api) else {
        return vec![ArgIssue::UnknownApi { api: call.api.clone() }];
    };

    let mut issues = Vec::new();
    for param in &spec.parameters {
        match call.arguments.get(&param.name) {
            None if param.required => {
                issues.push(ArgIssue::MissingRequired { param: param.name.clone() });
            }
            Some(value) if !value_fits_type(param.param_type, value) => {
                issues.push(ArgIssue::TypeMismatch {
                    param: param.name.clone(),
                    expected: param.param_type,
                    value: value.clone(),
                });
            }
            _ => {}
        }
    }
    for name in call.arguments.keys() {
        if spec.param(name).is_none() {
            issues.push(ArgIssue::UnknownParam { param: name.clone() });
        }
    }
    issues
}

// ============================================================================
// Execution
// ============================================================================

/// Execute a call against a case's declared APIs and fixtures.
///
/// Resolution order: unknown API -> error; argument issues -> error listing
/// them; first declared fixture whose matcher accepts the arguments -> its
/// canned response; otherwise -> a "no fixture" error. Never panics or raises.
pub fn execute_call(call: &ApiCall, case: &TestCase) -> ToolResponse {
    let issues = validate_args(call, &case.apis);
    if issues.iter().any(|i| matches!(i, ArgIssue::UnknownApi { .. })) {
        return ToolResponse::error(format!("unknown API: {}", call.api));
    }
    if !issues.is_empty() {
        let list: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
        return ToolResponse::error(format!("invalid arguments: {}", list.join("; ")));
    }
    for fixture in &case.fixtures {
        if fixture.matches(call) {
            return fixture.response.clone();
        }
    }
    ToolResponse::error(format!("no fixture matched this call to {}", call.api))
}

// ============================================================================
// Tests
// ============================================================================
