//! Scoring: classify the questions an agent asked, compute the per-episode
//! metrics (A1 asking accuracy, A2 call accuracy, A3 answer accuracy, Re
//! redundancy, Steps), and aggregate episodes into grouped means.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agent::prompts::{render_api_guidelines, PromptAssets};
use crate::agent::{Action, TerminalStatus, Transcript};
use crate::backend::{Backend, BackendError, ChatMessage};
use crate::corpus::{IssueCategory, TestCase, REFUSAL_SENTINEL};
use crate::toolbox::{ApiCall, ParamType};
use crate::user_sim::{best_match, SimError, SimilarityProvider};

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("similarity scoring failed: {0}")]
    Sim(#[from] SimError),
    #[error("transcript for case {transcript:?} scored against case {case:?}")]
    CaseMismatch { transcript: String, case: String },
    #[error(
        "case {case_id}: argument {argument:?} of {api} is marked for semantic matching, \
         which needs a judge backend"
    )]
    NeedsJudge { case_id: String, api: String, argument: String },
    #[error("judge backend failed: {0}")]
    JudgeBackend(#[from] BackendError),
    #[error("judge verdict unreadable: {0}")]
    JudgeVerdict(String),
}

// ============================================================================
// Question classification
// ============================================================================

/// What one asked question did for the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionClass {
    /// First question to match an anticipated exchange.
    MatchedFirst,
    /// Matched an exchange that an earlier question already matched.
    RedundantRepeat,
    /// Matched no exchange but restates an earlier asked question.
    RedundantDuplicate,
    /// Matched nothing at all.
    Irrelevant,
}

impl QuestionClass {
    /// Repeats, duplicates, and irrelevant questions all waste a turn.
    pub fn is_redundant(&self) -> bool {
        !matches!(self, QuestionClass::MatchedFirst)
    }
}

/// Classification of one asked question, with the evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question: String,
    pub class: QuestionClass,
    /// Anticipated exchange this question matched (for matched/repeat).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange_index: Option<usize>,
    /// Earlier question (by index) this one duplicates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<usize>,
    /// The similarity score behind the classification.
    pub score: f64,
}

/// Classify every asked question against the case's anticipated exchanges.
///
/// In order of precedence: a question scoring at or above the threshold
/// against its best exchange is `matched_first` (new index) or
/// `redundant_repeat` (index already matched); below threshold it is
/// `redundant_duplicate` when it scores at or above the threshold against an
/// earlier asked question, and `irrelevant` otherwise. Exchange ties break
/// to the lowest index.
pub fn match_questions(
    questions: &[&str],
    exchanges: &[crate::corpus::ExpectedExchange],
    provider: &SimilarityProvider,
) -> Result<Vec<QuestionOutcome>, EvalError> {
    let mut outcomes: Vec<QuestionOutcome> = Vec::with_capacity(questions.len());
    let mut matched: BTreeSet<usize> = BTreeSet::new();

    for (qi, question) in questions.iter().enumerate() {
        let best = best_match(question, exchanges, provider)?;
        if let Some((index, score)) = best {
            if score >= provider.threshold {
                let class = if matched.insert(index) {
                    QuestionClass::MatchedFirst
                } else {
                    QuestionClass::RedundantRepeat
                };
                outcomes.push(QuestionOutcome {
                    question: question.to_string(),
                    class,
                    exchange_index: Some(index),
                    duplicate_of: None,
                    score,
                });
                continue;
            }
        }
        // Below threshold everywhere: is it a rewording of an earlier ask?
        let mut duplicate: Option<(usize, f64)> = None;
        for (earlier_index, earlier) in questions[..qi].iter().enumerate() {
            let score = provider.score(question, earlier)?;
            if score >= provider.threshold {
                duplicate = Some((earlier_index, score));
                break;
            }
        }
        match duplicate {
            Some((earlier_index, score)) => outcomes.push(QuestionOutcome {
                question: question.to_string(),
                class: QuestionClass::RedundantDuplicate,
                exchange_index: None,
                duplicate_of: Some(earlier_index),
                score,
            }),
            None => outcomes.push(QuestionOutcome {
                question: question.to_string(),
                class: QuestionClass::Irrelevant,
                exchange_index: None,
                duplicate_of: None,
                score: best.map_or(0.0, |(_, s)| s),
            }),
        }
    }
    Ok(outcomes)
}

/// Count of redundant questions (repeats + duplicates + irrelevant).
pub fn redundancy(outcomes: &[QuestionOutcome]) -> u32 {
    outcomes.iter().filter(|o| o.class.is_redundant()).count() as u32
}

// ============================================================================
// Per-episode scoring
// ============================================================================

/// All `call_api` actions on the final path, in order.
pub fn executed_calls(transcript: &Transcript) -> Vec<ApiCall> {
    transcript
        .actions()
        .filter_map(|a| match a {
            Action::CallApi { api, arguments } => {
                Some(ApiCall { api: api.clone(), arguments: arguments.clone() })
            }
            _ => None,
        })
        .collect()
}

/// The finish action's answer, when the episode produced one.
pub fn final_answer(transcript: &Transcript) -> Option<&str> {
    transcript.actions().find_map(|a| match a {
        Action::Finish { answer } => Some(answer.as_str()),
        _ => None,
    })
}

/// Generated agent actions for the episode: everything on the final path
/// that the agent emitted (parse failures included) plus actions generated
/// on abandoned branches.
pub fn count_steps(transcript: &Transcript) -> u32 {
    transcript.agent_events().count() as u32 + transcript.abandoned_actions
}

/// A1 asking accuracy: `(headline, any_matched)`, each 0.0 or 1.0.
///
/// For most categories the headline requires every anticipated exchange to
/// have been matched by some question, and the variant requires at least
/// one. For beyond-capability cases both are the refusal check: a refuse
/// action, or a think/finish whose text scores at or above the threshold
/// against the case's refusal statement, before any API call.
pub fn score_a1(
    case: &TestCase,
    transcript: &Transcript,
    outcomes: &[QuestionOutcome],
    provider: &SimilarityProvider,
) -> Result<(f64, f64), EvalError> {
    if case.category == IssueCategory::Ibtc {
        let refused = refused_before_calling(case, transcript, provider)?;
        let value = if refused { 1.0 } else { 0.0 };
        return Ok((value, value));
    }
    let matched: BTreeSet<usize> = outcomes
        .iter()
        .filter(|o| o.class == QuestionClass::MatchedFirst)
        .filter_map(|o| o.exchange_index)
        .collect();
    let headline = matched.len() == case.expected_exchanges.len();
    let any = !matched.is_empty();
    Ok((headline as u8 as f64, any as u8 as f64))
}

fn refused_before_calling(
    case: &TestCase,
    transcript: &Transcript,
    provider: &SimilarityProvider,
) -> Result<bool, EvalError> {
    let statement = case.refusal_statement.as_deref().unwrap_or(REFUSAL_SENTINEL);
    for action in transcript.actions() {
        match action {
            Action::CallApi { .. } => return Ok(false),
            Action::Refuse { .. } => return Ok(true),
            Action::Think { thought: text } | Action::Finish { answer: text } => {
                if provider.score(text, statement)? >= provider.threshold {
                    return Ok(true);
                }
            }
            Action::AskUser { .. } => {}
        }
    }
    Ok(false)
}

/// Compare one argument value against the anticipated one under the
/// parameter's declared type: integers and numbers compare by value,
/// booleans case-insensitively, everything else as trimmed strings.
pub fn canonical_value_eq(param_type: Option<ParamType>, expected: &str, actual: &str) -> bool {
    let (e, a) = (expected.trim(), actual.trim());
    match param_type {
        Some(ParamType::Integer) => match (e.parse::<i128>(), a.parse::<i128>()) {
            (Ok(x), Ok(y)) => x == y,
            _ => e == a,
        },
        Some(ParamType::Number) => match (e.parse::<f64>(), a.parse::<f64>()) {
            (Ok(x), Ok(y)) => x == y,
            _ => e == a,
        },
        Some(ParamType::Boolean) => {
            let (el, al) = (e.to_ascii_lowercase(), a.to_ascii_lowercase());
            if matches!(el.as_str(), "true" | "false") && matches!(al.as_str(), "true" | "false") {
                el == al
            } else {
                e == a
            }
        }
        _ => e == a,
    }
}

fn param_type_of(case: &TestCase, api: &str, param: &str) -> Option<ParamType> {
    case.apis.iter().find(|a| a.name == api)?.param(param).map(|p| p.param_type)
}

/// Does an executed call satisfy one anticipated call? Same API, exactly the
/// same argument names, every value canonically equal.
fn call_satisfies(
    case: &TestCase,
    expected: &crate::corpus::ExpectedCall,
    executed: &ApiCall,
) -> bool {
    if expected.api != executed.api {
        return false;
    }
    let expected_keys: Vec<&String> = expected.arguments.keys().collect();
    let executed_keys: Vec<&String> = executed.arguments.keys().collect();
    if expected_keys != executed_keys {
        return false;
    }
    expected.arguments.iter().all(|(name, want)| {
        let got = &executed.arguments[name];
        canonical_value_eq(param_type_of(case, &expected.api, name), want, got)
    })
}

/// A2 call accuracy without a judge: every anticipated call must be
/// satisfied by some executed call. Anticipated arguments marked for
/// semantic matching cannot be scored this way and are an error.
pub fn score_a2_oracle(case: &TestCase, executed: &[ApiCall]) -> Result<bool, EvalError> {
    for expected in &case.expected_calls {
        if let Some(argument) = expected
            .arg_match
            .iter()
            .find(|(_, m)| **m == crate::corpus::ArgMatch::Semantic)
            .map(|(name, _)| name.clone())
        {
            return Err(EvalError::NeedsJudge {
                case_id: case.id.clone(),
                api: expected.api.clone(),
                argument,
            });
        }
    }
    Ok(case
        .expected_calls
        .iter()
        .all(|expected| executed.iter().any(|call| call_satisfies(case, expected, call))))
}

/// A3 answer accuracy without a judge: every required fact must appear in
/// the answer, compared after text normalization.
pub fn score_a3_oracle(facts: &[String], answer: &str) -> bool {
    let haystack = crate::user_sim::normalize(answer);
    facts.iter().all(|fact| haystack.contains(&crate::user_sim::normalize(fact)))
}

// ============================================================================
// LLM judge
// ============================================================================

/// A judge backend plus the prompt templates it grades with.
pub struct Judge<'a> {
    pub backend: &'a dyn Backend,
    pub assets: &'a PromptAssets,
}

/// Fill `{{name}}` placeholders in a judge template.
pub fn render_template(template: &str, fills: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in fills {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    out
}

/// Extract the verdict from a judge reply: the last non-empty line must be
/// exactly `VERDICT: PASS` or `VERDICT: FAIL`.
pub fn parse_verdict(reply: &str) -> Result<bool, EvalError> {
    match reply.lines().rev().find(|l| !l.trim().is_empty()).map(str::trim) {
        Some("VERDICT: PASS") => Ok(true),
        Some("VERDICT: FAIL") => Ok(false),
        other => Err(EvalError::JudgeVerdict(format!(
            "expected a final VERDICT line, got {:?}",
            other.unwrap_or("")
        ))),
    }
}

fn ask_judge(judge: &Judge, prompt: String) -> Result<bool, EvalError> {
    let output = judge.backend.complete(&[ChatMessage::user(prompt)])?;
    parse_verdict(&output.text)
}

fn render_calls(calls: &[ApiCall]) -> String {
    if calls.is_empty() {
        return "(none)".to_string();
    }
    calls
        .iter()
        .map(|c| serde_json::to_string(c).expect("calls serialize"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A2 via the judge: meaning-level grading of the executed calls.
pub fn score_a2_judge(
    case: &TestCase,
    executed: &[ApiCall],
    judge: &Judge,
) -> Result<bool, EvalError> {
    let expected: Vec<ApiCall> = case
        .expected_calls
        .iter()
        .map(|e| ApiCall { api: e.api.clone(), arguments: e.arguments.clone() })
        .collect();
    let prompt = render_template(
        &judge.assets.judge_a2,
        &[
            ("query", case.query.as_str()),
            ("apis", &render_api_guidelines(&case.apis)),
            ("expected_calls", &render_calls(&expected)),
            ("executed_calls", &render_calls(executed)),
        ],
    );
    ask_judge(judge, prompt)
}

/// A3 via the judge: meaning-level grading of the final answer.
pub fn score_a3_judge(case: &TestCase, answer: &str, judge: &Judge) -> Result<bool, EvalError> {
    let facts =
        case.expected_answer_facts.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n");
    let prompt = render_template(
        &judge.assets.judge_a3,
        &[("query", case.query.as_str()), ("facts", &facts), ("answer", answer)],
    );
    ask_judge(judge, prompt)
}

// ============================================================================
// Episode result
// ============================================================================

/// Metrics for one scored episode. `None` means not measured for the
/// case's category (call/answer accuracy and redundancy for
/// beyond-capability cases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub category: IssueCategory,
    pub strategy: String,
    pub model: String,
    pub status: TerminalStatus,
    pub a1: f64,
    pub a1_any: f64,
    pub a2: Option<f64>,
    pub a3: Option<f64>,
    pub redundancy: Option<u32>,
    pub steps: u32,
    pub question_outcomes: Vec<QuestionOutcome>,
}

/// Score one transcript against its case.
pub fn evaluate_case(
    case: &TestCase,
    transcript: &Transcript,
    provider: &SimilarityProvider,
    judge: Option<&Judge>,
) -> Result<CaseResult, EvalError> {
    if case.id != transcript.case_id {
        return Err(EvalError::CaseMismatch {
            transcript: transcript.case_id.clone(),
            case: case.id.clone(),
        });
    }
    let questions = transcript.questions();
    let outcomes = match_questions(&questions, &case.expected_exchanges, provider)?;
    let (a1, a1_any) = score_a1(case, transcript, &outcomes, provider)?;

    let ibtc = case.category == IssueCategory::Ibtc;
    let (a2, a3, re) = if ibtc {
        (None, None, None)
    } else {
        let executed = executed_calls(transcript);
        let a2 = match judge {
            None => score_a2_oracle(case, &executed)?,
            Some(j) => score_a2_judge(case, &executed, j)?,
        };
        let a3 = match final_answer(transcript) {
            None => false,
            Some(answer) => match judge {
                None => score_a3_oracle(&case.expected_answer_facts, answer),
                Some(j) => score_a3_judge(case, answer, j)?,
            },
        };
        (Some(a2 as u8 as f64), Some(a3 as u8 as f64), Some(redundancy(&outcomes)))
    };

    Ok(CaseResult {
        case_id: case.id.clone(),
        category: case.category,
        strategy: transcript.strategy.clone(),
        model: transcript.model.clone(),
        status: transcript.status,
        a1,
        a1_any,
        a2,
        a3,
        redundancy: re,
        steps: count_steps(transcript),
        question_outcomes: outcomes,
    })
}

// ============================================================================
// Aggregation
// ============================================================================

/// Mean metrics for one (model, strategy, category) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub model: String,
    pub strategy: String,
    pub category: IssueCategory,
    pub episodes: u32,
    pub a1: f64,
    pub a1_any: f64,
    pub a2: Option<f64>,
    pub a3: Option<f64>,
    pub redundancy: Option<f64>,
    pub steps: f64,
}

/// All groups, sorted by model, then strategy, then category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<GroupRow>,
}

impl MetricsReport {
    pub fn row(&self, model: &str, strategy: &str, category: IssueCategory) -> Option<&GroupRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.strategy == strategy && r.category == category)
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Group episode results and average each metric. `None` metrics are
/// averaged over the episodes that measured them; a group where no episode
/// measured a metric reports `None` for it.
pub fn aggregate(results: &[CaseResult]) -> MetricsReport {
    let mut groups: BTreeMap<(String, String, IssueCategory), Vec<&CaseResult>> = BTreeMap::new();
    for result in results {
        groups
            .entry((result.model.clone(), result.strategy.clone(), result.category))
            .or_default()
            .push(result);
    }
    let rows = groups
        .into_iter()
        .map(|((model, strategy, category), members)| GroupRow {
            model,
            strategy,
            category,
            episodes: members.len() as u32,
            a1: mean_of(members.iter().map(|r| r.a1)).unwrap_or(0.0),
            a1_any: mean_of(members.iter().map(|r| r.a1_any)).unwrap_or(0.0),
            a2: mean_of(members.iter().filter_map(|r| r.a2)),
            a3: mean_of(members.iter().filter_map(|r| r.a3)),
            redundancy: mean_of(members.iter().filter_map(|r| r.redundancy.map(f64::from))),
            steps: mean_of(members.iter().map(|r| f64::from(r.steps))).unwrap_or(0.0),
        })
        .collect();
    MetricsReport { rows }
}

// ============================================================================
// Tests
// ============================================================================
