//! Text similarity and the simulated user.
//!
//! The simulator answers an agent's clarifying question with the predefined
//! answer of the closest anticipated exchange when the similarity clears the
//! threshold, and with a fixed fallback sentence otherwise. Similarity is
//! lexical by default (cosine over token-count vectors of normalized text)
//! and can delegate to an embedding endpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{ExpectedExchange, TestCase};

/// Fixed reply for questions that match no anticipated exchange.
pub const FALLBACK_REPLY: &str = "Sorry, I cannot provide additional information about this.";

/// Default similarity threshold for question matching.
pub const DEFAULT_THRESHOLD: f64 = 0.7;

// ============================================================================
// Normalization and lexical similarity
// ============================================================================

/// Normalize text for lexical comparison: Unicode lowercase, punctuation
/// replaced by spaces, whitespace collapsed to single spaces.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let spaced: String =
        lowered.chars().map(|c| if c.is_alphanumeric() { c } else { ' ' }).collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_counts(normalized: &str) -> BTreeMap<&str, u64> {
    let mut counts = BTreeMap::new();
    for token in normalized.split_whitespace() {
        *counts.entry(token).or_insert(0) += 1;
    }
    counts
}

/// Cosine similarity between token-count vectors of the normalized texts.
///
/// Equal normalized texts score exactly 1.0; pairs with no token overlap
/// score 0.0; a pair where one side normalizes to nothing scores 0.0. The
/// result is symmetric bit-for-bit (both orders sum the same terms in the
/// same sorted-key order) and clamped to [0, 1].
///
/// Worked examples (tokens → dot / (‖a‖·‖b‖)):
///
/// 1. `("Set an alarm for 7 am.", "set an alarm for 7 AM")` — both
///    normalize to `set an alarm for 7 am`, so the score is exactly `1.0`.
/// 2. `("the cat sat", "the cat sat on the mat")` — counts {the:1,cat:1,
///    sat:1} vs {the:2,cat:1,sat:1,on:1,mat:1}: dot = 4, norms √3·√8,
///    score 4/√24 = `0.8164965809`.
/// 3. `("do you want celsius or fahrenheit", "do you want the weather in
///    celsius")` — four shared single-count tokens: dot = 4, norms √6·√7,
///    score 4/√42 = `0.6172133998`.
pub fn lexical_similarity(a: &str, b: &str) -> f64 {
    let na = normalize(a);
    let nb = normalize(b);
    if na == nb {
        return 1.0;
    }
    if na.is_empty() || nb.is_empty() {
        return 0.0;
    }
    let ca = token_counts(&na);
    let cb = token_counts(&nb);
    let dot: f64 = ca
        .iter()
        .filter_map(|(tok, &n)| cb.get(tok).map(|&m| n as f64 * m as f64))
        .sum();
    let norm = |c: &BTreeMap<&str, u64>| {
        c.values().map(|&n| (n * n) as f64).sum::<f64>().sqrt()
    };
    (dot / (norm(&ca) * norm(&cb))).clamp(0.0, 1.0)
}

// ============================================================================
// Similarity provider (lexical or embedding-backed)
// ============================================================================

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("similarity config: {0}")]
    Config(String),
    #[error("embedding endpoint failure: {0}")]
    Endpoint(String),
    #[error("embedding endpoint returned a malformed response: {0}")]
    MalformedResponse(String),
}

/// Which scoring backend the provider uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    Lexical,
    Embedding,
}

/// Similarity section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityConfig {
    #[serde(default = "default_mode")]
    pub mode: SimilarityMode,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_model: Option<String>,
    /// Use the lexical score when the endpoint fails, instead of erroring.
    #[serde(default)]
    pub fallback_to_lexical: bool,
}

fn default_mode() -> SimilarityMode {
    SimilarityMode::Lexical
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            mode: SimilarityMode::Lexical,
            threshold: DEFAULT_THRESHOLD,
            embedding_endpoint: None,
            embedding_model: None,
            fallback_to_lexical: false,
        }
    }
}

/// Scores question/text pairs and carries the match threshold used across
/// the simulator and the evaluator.
pub struct SimilarityProvider {
    pub threshold: f64,
    scorer: Scorer,
}

enum Scorer {
    Lexical,
    Embedding { endpoint: String, model: String, fallback: bool, http: reqwest::blocking::Client },
}

impl SimilarityProvider {
    /// Lexical scorer with the given threshold.
    pub fn lexical(threshold: f64) -> Self {
        SimilarityProvider { threshold, scorer: Scorer::Lexical }
    }

    /// Build from configuration; embedding mode requires endpoint and model.
    pub fn from_config(cfg: &SimilarityConfig) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&cfg.threshold) {
            return Err(SimError::Config(format!(
                "threshold must be in [0, 1], got {}",
                cfg.threshold
            )));
        }
        match cfg.mode {
            SimilarityMode::Lexical => Ok(Self::lexical(cfg.threshold)),
            SimilarityMode::Embedding => {
                let endpoint = cfg.embedding_endpoint.clone().ok_or_else(|| {
                    SimError::Config("embedding mode needs embedding_endpoint".into())
                })?;
                let model = cfg.embedding_model.clone().ok_or_else(|| {
                    SimError::Config("embedding mode needs embedding_model".into())
                })?;
                let http = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(30))
                    .build()
                    .map_err(|e| SimError::Config(e.to_string()))?;
                Ok(SimilarityProvider {
                    threshold: cfg.threshold,
                    scorer: Scorer::Embedding {
                        endpoint,
                        model,
                        fallback: cfg.fallback_to_lexical,
                        http,
                    },
                })
            }
        }
    }

    /// Score a pair of texts in [0, 1]. Identical inputs always score 1.0.
    pub fn score(&self, a: &str, b: &str) -> Result<f64, SimError> {
        match &self.scorer {
            Scorer::Lexical => Ok(lexical_similarity(a, b)),
            Scorer::Embedding { endpoint, model, fallback, http } => {
                if a == b {
                    return Ok(1.0);
                }
                match embedding_score(http, endpoint, model, a, b) {
                    Ok(s) => Ok(s),
                    Err(_) if *fallback => Ok(lexical_similarity(a, b)),
                    Err(e) => Err(e),
                }
            }
        }
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: [&'a str; 2],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

/// POST both texts to the embeddings endpoint and map the vectors' cosine
/// from [-1, 1] into [0, 1] via (1 + cos) / 2.
fn embedding_score(
    http: &reqwest::blocking::Client,
    endpoint: &str,
    model: &str,
    a: &str,
    b: &str,
) -> Result<f64, SimError> {
    let resp = http
        .post(endpoint)
        .json(&EmbeddingRequest { model, input: [a, b] })
        .send()
        .map_err(|e| SimError::Endpoint(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        let body = resp.text().unwrap_or_default();
        return Err(SimError::Endpoint(format!("status {status}: {body}")));
    }
    let parsed: EmbeddingResponse =
        resp.json().map_err(|e| SimError::MalformedResponse(e.to_string()))?;
    if parsed.data.len() != 2 {
        return Err(SimError::MalformedResponse(format!(
            "expected 2 embeddings, got {}",
            parsed.data.len()
        )));
    }
    let u = &parsed.data[0].embedding;
    let v = &parsed.data[1].embedding;
    if u.len() != v.len() || u.is_empty() {
        return Err(SimError::MalformedResponse("embedding dimensions disagree".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(SimError::MalformedResponse("zero-magnitude embedding".into()));
    }
    let cos = (dot / (nu * nv)).clamp(-1.0, 1.0);
    Ok(((1.0 + cos) / 2.0).clamp(0.0, 1.0))
}

/// Best-scoring anticipated exchange for a question, ties going to the lowest
/// index. `None` when the case anticipates no exchanges.
pub fn best_match(
    question: &str,
    exchanges: &[ExpectedExchange],
    provider: &SimilarityProvider,
) -> Result<Option<(usize, f64)>, SimError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, ex) in exchanges.iter().enumerate() {
        let score = provider.score(question, &ex.question)?;
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    Ok(best)
}

// ============================================================================
// Simulated user session
// ============================================================================

/// Saved [`SimSession`] state; see [`SimSession::snapshot`].
#[derive(Debug, Clone)]
pub struct SimSnapshot {
    matched: BTreeSet<usize>,
    log_len: usize,
}

/// One question the simulator handled, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimExchangeLog {
    pub question: String,
    pub best_index: Option<usize>,
    pub best_score: f64,
    pub matched: bool,
    pub reply: String,
}

/// Per-episode simulator state: which anticipated exchanges have been matched
/// so far (the set only grows), plus a log of every question handled.
pub struct SimSession<'a> {
    case: &'a TestCase,
    provider: &'a SimilarityProvider,
    matched: BTreeSet<usize>,
    log: Vec<SimExchangeLog>,
}

impl<'a> SimSession<'a> {
    pub fn new(case: &'a TestCase, provider: &'a SimilarityProvider) -> Self {
        SimSession { case, provider, matched: BTreeSet::new(), log: Vec::new() }
    }

    /// Answer a clarifying question: the predefined answer of the closest
    /// anticipated exchange when its score clears the threshold (re-asking a
    /// matched question returns the same answer again), the fixed fallback
    /// sentence otherwise.
    pub fn respond(&mut self, question: &str) -> Result<String, SimError> {
        let best = best_match(question, &self.case.expected_exchanges, self.provider)?;
        let (reply, matched) = match best {
            Some((i, score)) if score >= self.provider.threshold => {
                self.matched.insert(i);
                (self.case.expected_exchanges[i].answer.clone(), true)
            }
            _ => (FALLBACK_REPLY.to_string(), false),
        };
        self.log.push(SimExchangeLog {
            question: question.to_string(),
            best_index: best.map(|(i, _)| i),
            best_score: best.map_or(0.0, |(_, s)| s),
            matched,
            reply: reply.clone(),
        });
        Ok(reply)
    }

    /// Indices of anticipated exchanges matched so far this episode.
    pub fn matched_indices(&self) -> &BTreeSet<usize> {
        &self.matched
    }

    /// Capture the mutable state, so a search strategy can roll back the
    /// session when it abandons a branch.
    pub fn snapshot(&self) -> SimSnapshot {
        SimSnapshot { matched: self.matched.clone(), log_len: self.log.len() }
    }

    /// Roll back to a previously captured snapshot.
    pub fn restore(&mut self, snapshot: SimSnapshot) {
        self.matched = snapshot.matched;
        self.log.truncate(snapshot.log_len);
    }

    /// Every question handled this episode, in order.
    pub fn log(&self) -> &[SimExchangeLog] {
        &self.log
    }
}

// ============================================================================
// Tests
// ============================================================================
