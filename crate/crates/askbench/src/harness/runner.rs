//! Full-run orchestration: load a run config, execute every (backend,
//! strategy) × case episode on a worker pool, persist each episode as it
//! completes, and write the aggregated report plus a manifest.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::prompts::PromptAssets;
use crate::agent::{now_ms, run_episode, StrategyConfig, StrategyKind};
use crate::backend::{Backend, BackendConfig, HttpBackend, ScriptedBackend};
use crate::corpus::{load_dataset, Dataset};
use crate::eval::{aggregate, evaluate_case, CaseResult, Judge, MetricsReport};
use crate::harness::persist::{
    load_transcript, read_json, result_file_name, transcript_file_name, write_json,
    write_transcript,
};
use crate::harness::report::{render_csv, render_markdown};
use crate::harness::HarnessError;
use crate::user_sim::{SimilarityConfig, SimilarityProvider};

/// Default label recorded for scripted backends.
pub const SCRIPTED_LABEL: &str = "scripted";

// ============================================================================
// Configuration
// ============================================================================

/// Where one lane's model outputs come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Replay canned outputs from a JSON file mapping case id to a list of
    /// model replies, in generation order.
    Scripted {
        scripts: PathBuf,
        #[serde(default)]
        label: Option<String>,
    },
    /// Live chat-completions endpoint.
    Http { config: BackendConfig },
}

/// One lane of the run: a backend plus the strategy driving it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub backend: BackendSpec,
    #[serde(default)]
    pub strategy: StrategyConfig,
}

/// How episodes are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    /// Deterministic scoring only.
    #[default]
    Oracle,
    /// Grade call and answer accuracy with an LLM judge.
    Llm,
}

/// Scoring settings for a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default)]
    pub similarity: SimilarityConfig,
    #[serde(default)]
    pub judge_mode: JudgeMode,
    /// Backend used when `judge_mode = "llm"`.
    #[serde(default)]
    pub judge: Option<BackendConfig>,
}

fn default_parallel() -> usize {
    1
}

fn default_run_id() -> String {
    "default".to_string()
}

/// A full run configuration, loadable from TOML or JSON. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    /// Artifacts land in `out_dir/run_id`; resuming targets this id.
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    /// Reserved for future stochastic components; current scoring ignores it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalSettings,
    /// Directory of prompt-text overrides; compiled-in assets otherwise.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    pub pairs: Vec<PairConfig>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.parallel == 0 {
            return Err(HarnessError::Config("parallel must be at least 1".into()));
        }
        if self.run_id.is_empty() {
            return Err(HarnessError::Config("run_id must be non-empty".into()));
        }
        if self.pairs.is_empty() {
            return Err(HarnessError::Config("at least one backend/strategy pair".into()));
        }
        for (i, pair) in self.pairs.iter().enumerate() {
            pair.strategy
                .validate()
                .map_err(|e| HarnessError::Config(format!("pairs[{i}].strategy: {e}")))?;
        }
        if self.eval.judge_mode == JudgeMode::Llm && self.eval.judge.is_none() {
            return Err(HarnessError::Config(
                "judge_mode \"llm\" needs an [eval.judge] backend".into(),
            ));
        }
        Ok(())
    }

    /// The directory this run's artifacts live in.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

/// Load and validate a run config, resolving relative paths against the
/// config file's directory. `.json` files parse as JSON, everything else
/// as TOML.
pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig, HarnessError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    resolve(&base, &mut config.dataset);
    resolve(&base, &mut config.out_dir);
    if let Some(prompts) = config.prompts_dir.as_mut() {
        resolve(&base, prompts);
    }
    for pair in &mut config.pairs {
        if let BackendSpec::Scripted { scripts, .. } = &mut pair.backend {
            resolve(&base, scripts);
        }
    }
    config.validate()?;
    Ok(config)
}

/// Canned model replies per case id, in generation order.
pub type ScriptMap = BTreeMap<String, Vec<String>>;

/// Load a scripts file (JSON object of case id → list of replies).
pub fn load_scripts(path: impl AsRef<Path>) -> Result<ScriptMap, HarnessError> {
    let text = fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

// ============================================================================
// Run artifacts
// ============================================================================

/// Everything a completed run leaves behind, plus the in-memory results.
#[derive(Debug)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub results: Vec<CaseResult>,
    pub report: MetricsReport,
    pub episodes_executed: usize,
    pub episodes_skipped: usize,
}

/// Completion record written last; its presence marks a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub crate_version: String,
    pub dataset_sha256: String,
    pub dataset_cases: usize,
    pub episodes_executed: usize,
    pub episodes_skipped: usize,
    /// Snapshot sufficient to re-run the identical configuration.
    pub config: RunConfig,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ============================================================================
// Episode execution
// ============================================================================

enum PairBackend {
    Scripted { scripts: ScriptMap, label: String },
    Http(Arc<HttpBackend>),
}

struct ResolvedPair {
    backend: PairBackend,
    strategy: StrategyConfig,
    strategy_label: String,
}

impl ResolvedPair {
    fn model_label(&self) -> &str {
        match &self.backend {
            PairBackend::Scripted { label, .. } => label,
            PairBackend::Http(backend) => backend.label(),
        }
    }
}

fn resolve_pairs(config: &RunConfig) -> Result<Vec<ResolvedPair>, HarnessError> {
    config
        .pairs
        .iter()
        .map(|pair| {
            let backend = match &pair.backend {
                BackendSpec::Scripted { scripts, label } => PairBackend::Scripted {
                    scripts: load_scripts(scripts)?,
                    label: label.clone().unwrap_or_else(|| SCRIPTED_LABEL.to_string()),
                },
                BackendSpec::Http { config } => {
                    PairBackend::Http(Arc::new(HttpBackend::new(config.clone())?))
                }
            };
            Ok(ResolvedPair {
                backend,
                strategy: pair.strategy.clone(),
                strategy_label: pair.strategy.label(),
            })
        })
        .collect()
}

struct JobCtx<'a> {
    dataset: &'a Dataset,
    pairs: &'a [ResolvedPair],
    provider: &'a SimilarityProvider,
    assets: &'a PromptAssets,
    judge_backend: Option<&'a HttpBackend>,
    episodes_dir: &'a Path,
    resume: bool,
}

/// Run (or resume) one episode and persist its transcript and result.
/// Returns the result and whether it was loaded rather than executed.
fn run_job(
    ctx: &JobCtx,
    pair_index: usize,
    case_index: usize,
) -> Result<(CaseResult, bool), HarnessError> {
    let pair = &ctx.pairs[pair_index];
    let case = &ctx.dataset.cases[case_index];
    let model = ctx.pairs[pair_index].model_label();
    let t_path = ctx
        .episodes_dir
        .join(transcript_file_name(model, &pair.strategy_label, &case.id));
    let r_path = ctx
        .episodes_dir
        .join(result_file_name(model, &pair.strategy_label, &case.id));

    if ctx.resume && t_path.exists() && r_path.exists() {
        if let (Ok(transcript), Ok(result)) =
            (load_transcript(&t_path), read_json::<CaseResult>(&r_path))
        {
            if transcript.case_id == case.id && result.case_id == case.id {
                return Ok((result, true));
            }
        }
        // Unreadable or mismatched leftovers: fall through and re-execute.
    }

    let scripted_holder;
    let backend: &dyn Backend = match &pair.backend {
        PairBackend::Scripted { scripts, label } => {
            let script = scripts.get(&case.id).ok_or_else(|| HarnessError::MissingScript {
                case_id: case.id.clone(),
                model: label.clone(),
            })?;
            scripted_holder = ScriptedBackend::with_label(script.clone(), label.clone());
            &scripted_holder
        }
        PairBackend::Http(backend) => backend.as_ref(),
    };

    let transcript = run_episode(case, backend, ctx.provider, ctx.assets, &pair.strategy);
    let judge = ctx
        .judge_backend
        .map(|backend| Judge { backend: backend as &dyn Backend, assets: ctx.assets });
    let result = evaluate_case(case, &transcript, ctx.provider, judge.as_ref())?;

    write_transcript(&transcript, ctx.episodes_dir)?;
    write_json(&r_path, &result)?;
    Ok((result, false))
}

/// Execute a full run. With `resume`, episodes whose transcript and result
/// files already exist and load cleanly are not re-executed. Episodes
/// persist incrementally, so an interrupted run loses at most the episodes
/// that were in flight; the manifest is written last and marks completion.
pub fn run_suite(config: &RunConfig, resume: bool) -> Result<RunArtifacts, HarnessError> {
    config.validate()?;
    let started_at_ms = now_ms();

    let dataset_bytes = fs::read(&config.dataset)?;
    let dataset = load_dataset(&config.dataset)?;
    let provider = SimilarityProvider::from_config(&config.eval.similarity)?;
    let assets = match &config.prompts_dir {
        Some(dir) => PromptAssets::from_dir(dir)?,
        None => PromptAssets::default(),
    };
    let judge_backend = match config.eval.judge_mode {
        JudgeMode::Oracle => None,
        JudgeMode::Llm => {
            let judge_config = config.eval.judge.clone().ok_or_else(|| {
                HarnessError::Config("judge_mode \"llm\" needs an [eval.judge] backend".into())
            })?;
            Some(HttpBackend::new(judge_config)?)
        }
    };
    let pairs = resolve_pairs(config)?;

    let run_dir = config.run_dir();
    let manifest_path = run_dir.join("manifest.json");
    if manifest_path.exists() && !resume {
        return Err(HarnessError::Config(format!(
            "run {:?} already completed in {}; resume it or pick a new run_id",
            config.run_id,
            run_dir.display()
        )));
    }
    let episodes_dir = run_dir.join("episodes");
    fs::create_dir_all(&episodes_dir)?;

    // One job per (pair, case); index keeps the final ordering stable.
    let jobs: Vec<(usize, usize, usize)> = (0..pairs.len())
        .flat_map(|p| (0..dataset.cases.len()).map(move |c| (p, c)))
        .enumerate()
        .map(|(index, (p, c))| (index, p, c))
        .collect();

    let ctx = JobCtx {
        dataset: &dataset,
        pairs: &pairs,
        provider: &provider,
        assets: &assets,
        judge_backend: judge_backend.as_ref(),
        episodes_dir: &episodes_dir,
        resume,
    };

    let queue = Mutex::new(VecDeque::from(jobs));
    let collected: Mutex<Vec<(usize, CaseResult, bool)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<HarnessError>> = Mutex::new(None);
    let abort = AtomicBool::new(false);

    thread::scope(|scope| {
        for _ in 0..config.parallel {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    return;
                }
                let job = queue.lock().expect("queue lock").pop_front();
                let Some((index, pair_index, case_index)) = job else { return };
                match run_job(&ctx, pair_index, case_index) {
                    Ok((result, skipped)) => {
                        collected.lock().expect("results lock").push((index, result, skipped));
                    }
                    Err(error) => {
                        *failure.lock().expect("failure lock") = Some(error);
                        abort.store(true, Ordering::Relaxed);
                        return;
                    }
                }
            });
        }
    });

    if let Some(error) = failure.into_inner().expect("failure lock") {
        return Err(error);
    }
    let mut collected = collected.into_inner().expect("results lock");
    collected.sort_by_key(|(index, _, _)| *index);
    let episodes_skipped = collected.iter().filter(|(_, _, skipped)| *skipped).count();
    let episodes_executed = collected.len() - episodes_skipped;
    let results: Vec<CaseResult> = collected.into_iter().map(|(_, result, _)| result).collect();

    let report = aggregate(&results);
    write_json(&run_dir.join("results.json"), &results)?;
    write_json(&run_dir.join("report.json"), &report)?;
    fs::write(run_dir.join("report.md"), render_markdown(&report))?;
    fs::write(run_dir.join("report.csv"), render_csv(&report))?;

    let manifest = Manifest {
        run_id: config.run_id.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset_sha256: sha256_hex(&dataset_bytes),
        dataset_cases: dataset.cases.len(),
        episodes_executed,
        episodes_skipped,
        config: config.clone(),
        started_at_ms,
        finished_at_ms: now_ms(),
    };
    write_json(&manifest_path, &manifest)?;

    Ok(RunArtifacts { run_dir, results, report, episodes_executed, episodes_skipped })
}

// ============================================================================
// Re-scoring stored transcripts
// ============================================================================

/// Re-score every transcript in a directory against the dataset, without
/// any model access (oracle scoring) unless a judge is supplied. Files are
/// processed in name order.
pub fn rescore_dir(
    dataset: &Dataset,
    episodes_dir: &Path,
    provider: &SimilarityProvider,
    judge: Option<&Judge>,
) -> Result<Vec<CaseResult>, HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(episodes_dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();

    let mut results = Vec::with_capacity(paths.len());
    for path in &paths {
        let transcript = load_transcript(path)?;
        let case = dataset.case(&transcript.case_id).ok_or_else(|| {
            HarnessError::Config(format!(
                "{}: transcript references unknown case {:?}",
                path.display(),
                transcript.case_id
            ))
        })?;
        results.push(evaluate_case(case, &transcript, provider, judge)?);
    }
    Ok(results)
}

// ============================================================================
// Canonical comparison
// ============================================================================

fn visit_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            visit_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Digest of a run directory with wall-clock and location details factored
/// out: transcript events have their timestamps zeroed, and the manifest
/// drops its config snapshot (which embeds machine-local paths) and its
/// start/finish times. Two runs of the same configuration produce equal
/// snapshots.
pub fn canonical_snapshot(run_dir: &Path) -> Result<String, HarnessError> {
    let mut files = Vec::new();
    visit_files(run_dir, &mut files)?;
    files.sort();

    let mut combined = String::new();
    for path in &files {
        let rel = path.strip_prefix(run_dir).unwrap_or(path);
        combined.push_str(&format!("== {} ==\n", rel.display()));
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name == "manifest.json" {
            let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
            if let Some(map) = value.as_object_mut() {
                map.remove("config");
                map.insert("started_at_ms".into(), 0.into());
                map.insert("finished_at_ms".into(), 0.into());
            }
            combined.push_str(&serde_json::to_string_pretty(&value)?);
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            let mut transcript = load_transcript(path)?;
            transcript.canonicalize();
            combined.push_str(&crate::harness::persist::transcript_to_jsonl(&transcript));
        } else {
            combined.push_str(&fs::read_to_string(path)?);
        }
        combined.push('\n');
    }
    Ok(sha256_hex(combined.as_bytes()))
}

// ============================================================================
// Convenience for ad-hoc runs
// ============================================================================

/// Keep only pairs matching the requested strategy kind and/or prompting
/// mode; errors if the filter leaves nothing to run.
pub fn filter_pairs(
    config: &mut RunConfig,
    strategy: Option<StrategyKind>,
    awn_only: bool,
) -> Result<(), HarnessError> {
    config.pairs.retain(|pair| {
        strategy.is_none_or(|kind| pair.strategy.strategy == kind)
            && (!awn_only || pair.strategy.awn)
    });
    if config.pairs.is_empty() {
        return Err(HarnessError::Config(
            "no backend/strategy pairs match the requested filter".into(),
        ));
    }
    Ok(())
}
