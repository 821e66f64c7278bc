//! Dataset schema: test cases with noisy queries, anticipated clarifying
//! exchanges, anticipated API calls, answer facts, and toolbox fixtures —
//! plus loading, validation, round-trip writing, and category statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::toolbox::{ApiSpec, Fixture};

/// Refusal sentence an agent is expected to state when no available API can
/// serve the request. Also the default `refusal_statement` for IBTC cases.
pub const REFUSAL_SENTINEL: &str =
    "Due to the limitation of the toolset, I cannot solve the question";

/// Dataset file format version this build reads and writes.
pub const DATASET_VERSION: u32 = 1;

/// Reference distribution of issue categories reported for a large annotated
/// sample of real assistant queries. Sums to 0.999 because the source rounds
/// to one decimal; useful only as a yardstick when authoring new datasets.
pub const REFERENCE_CATEGORY_DISTRIBUTION: [(IssueCategory, f64); 4] = [
    (IssueCategory::Imki, 0.560),
    (IssueCategory::Imr, 0.113),
    (IssueCategory::Iwe, 0.173),
    (IssueCategory::Ibtc, 0.153),
];

// ============================================================================
// Schema
// ============================================================================

/// What kind of noise the query carries.
///
/// - IMKI: instructions missing key information
/// - IMR: instructions with multiple references (ambiguity)
/// - IwE: instructions with errors
/// - IBTC: instructions beyond the toolset's capabilities
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IssueCategory {
    #[serde(rename = "IMKI")]
    Imki,
    #[serde(rename = "IMR")]
    Imr,
    #[serde(rename = "IwE")]
    Iwe,
    #[serde(rename = "IBTC")]
    Ibtc,
}

impl IssueCategory {
    pub const ALL: [IssueCategory; 4] =
        [IssueCategory::Imki, IssueCategory::Imr, IssueCategory::Iwe, IssueCategory::Ibtc];

    pub fn as_str(&self) -> &'static str {
        match self {
            IssueCategory::Imki => "IMKI",
            IssueCategory::Imr => "IMR",
            IssueCategory::Iwe => "IwE",
            IssueCategory::Ibtc => "IBTC",
        }
    }
}

impl fmt::Display for IssueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A clarifying question the agent is expected to ask, with the answer the
/// simulated user will give when the agent asks something close enough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedExchange {
    pub question: String,
    pub answer: String,
}

/// How one expected argument is compared when scoring A2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgMatch {
    /// Canonical equality (trim; numeric/boolean type tags compare by value).
    Exact,
    /// Meaning-level equality; requires the LLM judge.
    Semantic,
}

/// An API call the agent is expected to make, with per-argument match modes
/// (anything not listed in `arg_match` defaults to exact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCall {
    pub api: String,
    pub arguments: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub arg_match: BTreeMap<String, ArgMatch>,
}

/// One benchmark case: a noisy query plus everything needed to simulate the
/// user, execute calls, and score the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCase {
    pub id: String,
    pub category: IssueCategory,
    pub query: String,
    pub apis: Vec<ApiSpec>,
    #[serde(default)]
    pub expected_exchanges: Vec<ExpectedExchange>,
    #[serde(default)]
    pub expected_calls: Vec<ExpectedCall>,
    #[serde(default)]
    pub expected_answer_facts: Vec<String>,
    /// Required for IBTC cases; [`REFUSAL_SENTINEL`] is filled in at load
    /// time when the file omits it. Must be absent for other categories.
    #[serde(default)]
    pub refusal_statement: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixtures: Vec<Fixture>,
}

/// A whole dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub version: u32,
    pub cases: Vec<TestCase>,
}

impl Dataset {
    pub fn case(&self, id: &str) -> Option<&TestCase> {
        self.cases.iter().find(|c| c.id == id)
    }
}

// ============================================================================
// Errors and validation issues
// ============================================================================

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported dataset version {found} (this build reads version {DATASET_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("duplicate case id: {id}")]
    DuplicateId { id: String },
    #[error("dataset has no cases")]
    Empty,
    #[error("dataset failed validation:\n{}", issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid { issues: Vec<ValidationIssue> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Fatal,
}

/// One problem found while validating a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub case_id: String,
    pub field: String,
    pub message: String,
}

impl ValidationIssue {
    fn fatal(case_id: &str, field: &str, message: impl Into<String>) -> Self {
        ValidationIssue {
            severity: Severity::Fatal,
            case_id: case_id.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn warning(case_id: &str, field: &str, message: impl Into<String>) -> Self {
        ValidationIssue {
            severity: Severity::Warning,
            case_id: case_id.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Fatal => "error",
        };
        write!(f, "[{sev}] case {}: {}: {}", self.case_id, self.field, self.message)
    }
}

// ============================================================================
// Operations
// ============================================================================

/// Load a dataset file, fill in defaults (IBTC refusal sentinel), and reject
/// files with fatal validation issues or duplicate case ids.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: display.clone(), source })?;
    let mut dataset: Dataset = serde_json::from_str(&text)
        .map_err(|source| CorpusError::Json { path: display, source })?;
    if dataset.version != DATASET_VERSION {
        return Err(CorpusError::UnsupportedVersion { found: dataset.version });
    }
    apply_defaults(&mut dataset);

    let mut seen = std::collections::BTreeSet::new();
    for case in &dataset.cases {
        if !seen.insert(case.id.clone()) {
            return Err(CorpusError::DuplicateId { id: case.id.clone() });
        }
    }

    let fatals: Vec<ValidationIssue> = dataset
        .cases
        .iter()
        .flat_map(validate_case)
        .filter(|i| i.severity == Severity::Fatal)
        .collect();
    if !fatals.is_empty() {
        return Err(CorpusError::Invalid { issues: fatals });
    }
    Ok(dataset)
}

/// Fill in schema defaults: IBTC cases without a refusal statement get the
/// standard sentinel.
pub fn apply_defaults(dataset: &mut Dataset) {
    for case in &mut dataset.cases {
        if case.category == IssueCategory::Ibtc && case.refusal_statement.is_none() {
            case.refusal_statement = Some(REFUSAL_SENTINEL.to_string());
        }
    }
}

/// Write a dataset as pretty-printed JSON. `load_dataset` of the result gives
/// back an equal value (defaults are already materialized in memory).
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(dataset).expect("dataset serializes");
    text.push('\n');
    fs::write(path, text)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

/// Validate one case. Fatal issues make the dataset unloadable; warnings are
/// surfaced by `validate-dataset` but do not block a run.
pub fn validate_case(case: &TestCase) -> Vec<ValidationIssue> {
    let id = case.id.as_str();
    let mut issues = Vec::new();

    if case.id.trim().is_empty() {
        issues.push(ValidationIssue::fatal("<unnamed>", "id", "case id must be non-empty"));
    }
    if case.query.trim().is_empty() {
        issues.push(ValidationIssue::fatal(id, "query", "query must be non-empty"));
    }
    if case.apis.is_empty() {
        issues.push(ValidationIssue::warning(id, "apis", "case declares no APIs"));
    }

    // API and parameter name uniqueness.
    let mut api_names = std::collections::BTreeSet::new();
    for api in &case.apis {
        if !api_names.insert(api.name.as_str()) {
            issues.push(ValidationIssue::fatal(id, "apis", format!("duplicate API name: {}", api.name)));
        }
        let mut params = std::collections::BTreeSet::new();
        for p in &api.parameters {
            if !params.insert(p.name.as_str()) {
                issues.push(ValidationIssue::fatal(
                    id,
                    "apis",
                    format!("API {} declares parameter {} twice", api.name, p.name),
                ));
            }
        }
    }

    // Category-specific shape.
    let ibtc = case.category == IssueCategory::Ibtc;
    if ibtc {
        if !case.expected_exchanges.is_empty() {
            issues.push(ValidationIssue::fatal(
                id,
                "expected_exchanges",
                "IBTC cases must not anticipate clarifying exchanges",
            ));
        }
        if !case.expected_calls.is_empty() {
            issues.push(ValidationIssue::fatal(
                id,
                "expected_calls",
                "IBTC cases must not anticipate API calls",
            ));
        }
        if !case.expected_answer_facts.is_empty() {
            issues.push(ValidationIssue::fatal(
                id,
                "expected_answer_facts",
                "IBTC cases must not anticipate answer facts",
            ));
        }
        if case.refusal_statement.as_deref().map_or(true, |s| s.trim().is_empty()) {
            issues.push(ValidationIssue::fatal(
                id,
                "refusal_statement",
                "IBTC cases need a refusal statement (the default sentinel applies when omitted at load)",
            ));
        }
    } else {
        if case.expected_exchanges.is_empty() {
            issues.push(ValidationIssue::fatal(
                id,
                "expected_exchanges",
                "non-IBTC cases must anticipate at least one clarifying exchange",
            ));
        }
        if case.expected_answer_facts.is_empty() {
            issues.push(ValidationIssue::fatal(
                id,
                "expected_answer_facts",
                "non-IBTC cases must anticipate at least one answer fact",
            ));
        }
        if case.refusal_statement.is_some() {
            issues.push(ValidationIssue::fatal(
                id,
                "refusal_statement",
                "refusal_statement is only meaningful for IBTC cases",
            ));
        }
    }

    for (i, ex) in case.expected_exchanges.iter().enumerate() {
        if ex.question.trim().is_empty() || ex.answer.trim().is_empty() {
            issues.push(ValidationIssue::fatal(
                id,
                &format!("expected_exchanges[{i}]"),
                "question and answer must be non-empty",
            ));
        }
    }
    for (i, fact) in case.expected_answer_facts.iter().enumerate() {
        if fact.trim().is_empty() {
            issues.push(ValidationIssue::fatal(
                id,
                &format!("expected_answer_facts[{i}]"),
                "facts must be non-empty",
            ));
        }
    }

    // Expected calls must target declared APIs; argument names should exist.
    for (i, call) in case.expected_calls.iter().enumerate() {
        let field = format!("expected_calls[{i}]");
        match case.apis.iter().find(|a| a.name == call.api) {
            None => issues.push(ValidationIssue::fatal(
                id,
                &field,
                format!("references undeclared API: {}", call.api),
            )),
            Some(spec) => {
                for name in call.arguments.keys() {
                    if spec.param(name).is_none() {
                        issues.push(ValidationIssue::warning(
                            id,
                            &field,
                            format!("argument {name} is not declared by {}", call.api),
                        ));
                    }
                }
                for p in spec.parameters.iter().filter(|p| p.required) {
                    if !call.arguments.contains_key(&p.name) {
                        issues.push(ValidationIssue::warning(
                            id,
                            &field,
                            format!("required parameter {} is not exercised", p.name),
                        ));
                    }
                }
            }
        }
        for key in call.arg_match.keys() {
            if !call.arguments.contains_key(key) {
                issues.push(ValidationIssue::warning(
                    id,
                    &field,
                    format!("arg_match key {key} has no matching argument"),
                ));
            }
        }
    }

    for (i, fixture) in case.fixtures.iter().enumerate() {
        if !case.apis.iter().any(|a| a.name == fixture.api) {
            issues.push(ValidationIssue::fatal(
                id,
                &format!("fixtures[{i}]"),
                format!("fixture targets undeclared API: {}", fixture.api),
            ));
        }
    }

    issues
}

/// Validate a whole dataset, returning every issue (fatal and warning).
pub fn validate_dataset(dataset: &Dataset) -> Vec<ValidationIssue> {
    let mut issues: Vec<ValidationIssue> = dataset.cases.iter().flat_map(validate_case).collect();
    let mut seen = std::collections::BTreeSet::new();
    for case in &dataset.cases {
        if !seen.insert(case.id.as_str()) {
            issues.push(ValidationIssue::fatal(&case.id, "id", "duplicate case id"));
        }
    }
    issues
}

// ============================================================================
// Statistics
// ============================================================================

/// Per-category composition of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub counts: BTreeMap<IssueCategory, usize>,
    pub ratios: BTreeMap<IssueCategory, f64>,
}

/// Count cases per category. Errors on an empty dataset; ratios sum to 1.
pub fn category_stats(dataset: &Dataset) -> Result<DatasetStats, CorpusError> {
    if dataset.cases.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut counts: BTreeMap<IssueCategory, usize> =
        IssueCategory::ALL.iter().map(|c| (*c, 0)).collect();
    for case in &dataset.cases {
        *counts.get_mut(&case.category).expect("all categories present") += 1;
    }
    let total = dataset.cases.len();
    let ratios = counts.iter().map(|(c, n)| (*c, *n as f64 / total as f64)).collect();
    Ok(DatasetStats { total, counts, ratios })
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn pack_path() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/pack.json")
    }

    #[test]
    fn bundled_pack_loads_with_two_cases_per_category() {
        let dataset = load_dataset(pack_path()).unwrap();
        assert_eq!(dataset.version, DATASET_VERSION);
        assert_eq!(dataset.cases.len(), 8);
        let stats = category_stats(&dataset).unwrap();
        assert_eq!(stats.total, 8);
        for cat in IssueCategory::ALL {
            assert_eq!(stats.counts[&cat], 2, "{cat}");
            assert!((stats.ratios[&cat] - 0.25).abs() < 1e-12, "{cat}");
        }
        let sum: f64 = stats.ratios.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ratio_sum_is_one_even_when_total_is_not_a_power_of_two() {
        let pack = load_dataset(pack_path()).unwrap();
        let dataset = Dataset { version: 1, cases: pack.cases[..3].to_vec() };
        let stats = category_stats(&dataset).unwrap();
        let sum: f64 = stats.ratios.values().sum();
        assert!((sum - 1.0).abs() < 1e-9, "sum = {sum}");
    }

    #[test]
    fn empty_dataset_has_no_stats() {
        let dataset = Dataset { version: 1, cases: vec![] };
        assert!(matches!(category_stats(&dataset), Err(CorpusError::Empty)));
    }

    #[test]
    fn ibtc_refusal_defaults_to_the_sentinel() {
        let dataset = load_dataset(pack_path()).unwrap();
        let stock = dataset.case("ibtc-stock").unwrap();
        assert_eq!(stock.refusal_statement.as_deref(), Some(REFUSAL_SENTINEL));
        // The explicit one is preserved as written.
        let pizza = dataset.case("ibtc-pizza").unwrap();
        assert_eq!(pizza.refusal_statement.as_deref(), Some(REFUSAL_SENTINEL));
    }

    #[test]
    fn category_serde_uses_the_documented_names() {
        for (cat, name) in
            [(IssueCategory::Imki, "IMKI"), (IssueCategory::Imr, "IMR"), (IssueCategory::Iwe, "IwE"), (IssueCategory::Ibtc, "IBTC")]
        {
            assert_eq!(serde_json::to_string(&cat).unwrap(), format!("\"{name}\""));
            assert_eq!(cat.to_string(), name);
        }
        assert!(serde_json::from_str::<IssueCategory>("\"IMKX\"").is_err());
    }

    #[test]
    fn reference_distribution_matches_published_values() {
        let by_cat: BTreeMap<_, _> = REFERENCE_CATEGORY_DISTRIBUTION.into_iter().collect();
        assert_eq!(by_cat[&IssueCategory::Imki], 0.560);
        assert_eq!(by_cat[&IssueCategory::Imr], 0.113);
        assert_eq!(by_cat[&IssueCategory::Iwe], 0.173);
        assert_eq!(by_cat[&IssueCategory::Ibtc], 0.153);
        let sum: f64 = by_cat.values().sum();
        assert!((sum - 0.999).abs() < 1e-9, "rounded source sums to 0.999, got {sum}");
    }

    #[test]
    fn write_then_load_is_identity() {
        let dataset = load_dataset(pack_path()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.json");
        write_dataset(&dataset, &path).unwrap();
        let reloaded = load_dataset(&path).unwrap();
        assert_eq!(dataset, reloaded);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut dataset = load_dataset(pack_path()).unwrap();
        let dup = dataset.cases[0].clone();
        dataset.cases.push(dup);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.json");
        write_dataset(&dataset, &path).unwrap();
        assert!(matches!(load_dataset(&path), Err(CorpusError::DuplicateId { .. })));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut dataset = load_dataset(pack_path()).unwrap();
        dataset.version = 2;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.json");
        write_dataset(&dataset, &path).unwrap();
        assert!(matches!(load_dataset(&path), Err(CorpusError::UnsupportedVersion { found: 2 })));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_dataset(&path), Err(CorpusError::Json { .. })));
    }

    #[test]
    fn validation_catches_category_shape_violations() {
        let dataset = load_dataset(pack_path()).unwrap();

        // IBTC case with an anticipated exchange is fatal.
        let mut bad = dataset.case("ibtc-stock").unwrap().clone();
        bad.expected_exchanges
            .push(ExpectedExchange { question: "Really?".into(), answer: "Yes.".into() });
        assert!(validate_case(&bad)
            .iter()
            .any(|i| i.severity == Severity::Fatal && i.field == "expected_exchanges"));

        // Non-IBTC case without facts is fatal.
        let mut bad = dataset.case("imki-alarm").unwrap().clone();
        bad.expected_answer_facts.clear();
        assert!(validate_case(&bad)
            .iter()
            .any(|i| i.severity == Severity::Fatal && i.field == "expected_answer_facts"));

        // Non-IBTC case with a refusal statement is fatal.
        let mut bad = dataset.case("imki-alarm").unwrap().clone();
        bad.refusal_statement = Some("no".into());
        assert!(validate_case(&bad)
            .iter()
            .any(|i| i.severity == Severity::Fatal && i.field == "refusal_statement"));

        // Expected call against an undeclared API is fatal.
        let mut bad = dataset.case("imki-alarm").unwrap().clone();
        bad.expected_calls[0].api = "set_timer".into();
        assert!(validate_case(&bad)
            .iter()
            .any(|i| i.severity == Severity::Fatal && i.message.contains("undeclared API")));

        // Unknown argument name is only a warning.
        let mut odd = dataset.case("imki-alarm").unwrap().clone();
        odd.expected_calls[0].arguments.insert("volume".into(), "11".into());
        let issues = validate_case(&odd);
        assert!(issues
            .iter()
            .any(|i| i.severity == Severity::Warning && i.message.contains("volume")));
        assert!(issues.iter().all(|i| i.severity != Severity::Fatal));

        // The bundled pack itself is warning-free.
        for case in &dataset.cases {
            assert!(validate_case(case).is_empty(), "{}: {:?}", case.id, validate_case(case));
        }
    }
}
