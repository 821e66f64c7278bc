//! Command-line front end: execute runs, re-score stored transcripts,
//! render reports, and inspect datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use askbench::agent::prompts::PromptAssets;
use askbench::agent::StrategyKind;
use askbench::backend::HttpBackend;
use askbench::corpus::{
    apply_defaults, category_stats, load_dataset, validate_dataset, Dataset, Severity,
    REFERENCE_CATEGORY_DISTRIBUTION,
};
use askbench::eval::{aggregate, CaseResult, Judge, MetricsReport};
use askbench::harness::persist::{read_json, write_json};
use askbench::harness::report::{render_csv, render_markdown, render_report, ReportFormat};
use askbench::harness::runner::{
    filter_pairs, load_run_config, rescore_dir, run_suite, JudgeMode, RunConfig,
};
use askbench::user_sim::{SimilarityConfig, SimilarityProvider};

#[derive(Parser)]
#[command(name = "askbench", version, about = "Evaluate tool-calling agents on noisy queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a configured run and write its artifacts.
    Run {
        /// Run configuration file (TOML, or JSON with a .json extension).
        #[arg(long)]
        config: PathBuf,
        /// Override the dataset path from the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the worker count from the config.
        #[arg(long)]
        parallel: Option<usize>,
        /// Resume the run with this id, skipping episodes already on disk.
        #[arg(long, value_name = "RUN_ID")]
        resume: Option<String>,
        /// Keep only pairs using this strategy.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<StrategyKind>,
        /// Keep only pairs with the ask-when-needed prompt enabled.
        #[arg(long)]
        awn: bool,
        /// Override the question-matching similarity threshold.
        #[arg(long)]
        similarity_threshold: Option<f64>,
        /// Override how call and answer accuracy are graded.
        #[arg(long, value_parser = parse_judge_mode)]
        judge_mode: Option<JudgeMode>,
    },
    /// Re-score stored transcripts against a dataset, without model access.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory of .jsonl transcripts to score.
        #[arg(long)]
        transcripts: PathBuf,
        /// Write results.json and reports here instead of only printing.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        similarity_threshold: Option<f64>,
        /// Run config supplying scoring settings (similarity, judge backend).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_judge_mode)]
        judge_mode: Option<JudgeMode>,
    },
    /// Render a stored results.json as markdown, CSV, or JSON.
    Report {
        /// Path to a results.json produced by `run` or `evaluate`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "markdown", value_parser = ReportFormat::from_str)]
        format: ReportFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a dataset file and list every problem found.
    ValidateDataset {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Print the category composition of a dataset.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    match s {
        "cot" => Ok(StrategyKind::Cot),
        "dfsdt" => Ok(StrategyKind::Dfsdt),
        other => Err(format!("unknown strategy {other:?} (expected cot or dfsdt)")),
    }
}

fn parse_judge_mode(s: &str) -> Result<JudgeMode, String> {
    match s {
        "oracle" => Ok(JudgeMode::Oracle),
        "llm" => Ok(JudgeMode::Llm),
        other => Err(format!("unknown judge mode {other:?} (expected oracle or llm)")),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            dataset,
            out,
            parallel,
            resume,
            strategy,
            awn,
            similarity_threshold,
            judge_mode,
        } => cmd_run(
            &config,
            dataset,
            out,
            parallel,
            resume,
            strategy,
            awn,
            similarity_threshold,
            judge_mode,
        ),
        Command::Evaluate { dataset, transcripts, out, similarity_threshold, config, judge_mode } => {
            cmd_evaluate(&dataset, &transcripts, out, similarity_threshold, config, judge_mode)
        }
        Command::Report { results, format, out } => cmd_report(&results, format, out),
        Command::ValidateDataset { dataset } => cmd_validate(&dataset),
        Command::Stats { dataset } => cmd_stats(&dataset),
    }
}

// ============================================================================
// stdout
// ============================================================================

/// Write to stdout, exiting quietly when the consumer has closed the pipe
/// (e.g. `askbench report ... | head`).
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(err) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if err.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("failed printing to stdout: {err}");
    }
}

// ============================================================================
// run
// ============================================================================

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config_path: &Path,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    parallel: Option<usize>,
    resume: Option<String>,
    strategy: Option<StrategyKind>,
    awn: bool,
    similarity_threshold: Option<f64>,
    judge_mode: Option<JudgeMode>,
) -> Result<()> {
    let mut config: RunConfig = load_run_config(config_path)
        .with_context(|| format!("loading run config {}", config_path.display()))?;
    if let Some(path) = dataset {
        config.dataset = path;
    }
    if let Some(path) = out {
        config.out_dir = path;
    }
    if let Some(n) = parallel {
        config.parallel = n;
    }
    if let Some(threshold) = similarity_threshold {
        config.eval.similarity.threshold = threshold;
    }
    if let Some(mode) = judge_mode {
        config.eval.judge_mode = mode;
    }
    let resuming = resume.is_some();
    if let Some(run_id) = resume {
        config.run_id = run_id;
    }
    if strategy.is_some() || awn {
        filter_pairs(&mut config, strategy, awn)?;
    }

    let artifacts = run_suite(&config, resuming)?;
    eprintln!(
        "run {:?}: {} episodes executed, {} resumed -> {}",
        config.run_id,
        artifacts.episodes_executed,
        artifacts.episodes_skipped,
        artifacts.run_dir.display()
    );
    emit(&render_markdown(&artifacts.report));
    Ok(())
}

// ============================================================================
// evaluate
// ============================================================================

fn cmd_evaluate(
    dataset_path: &Path,
    transcripts: &Path,
    out: Option<PathBuf>,
    similarity_threshold: Option<f64>,
    config_path: Option<PathBuf>,
    judge_mode: Option<JudgeMode>,
) -> Result<()> {
    let dataset = load_dataset(dataset_path)
        .with_context(|| format!("loading dataset {}", dataset_path.display()))?;

    let config: Option<RunConfig> = match &config_path {
        Some(path) => Some(
            load_run_config(path)
                .with_context(|| format!("loading run config {}", path.display()))?,
        ),
        None => None,
    };

    let mut similarity = config
        .as_ref()
        .map(|c| c.eval.similarity.clone())
        .unwrap_or_else(SimilarityConfig::default);
    if let Some(threshold) = similarity_threshold {
        similarity.threshold = threshold;
    }
    let provider = SimilarityProvider::from_config(&similarity)?;

    let mode = judge_mode
        .or_else(|| config.as_ref().map(|c| c.eval.judge_mode))
        .unwrap_or_default();
    let assets = match config.as_ref().and_then(|c| c.prompts_dir.as_ref()) {
        Some(dir) => PromptAssets::from_dir(dir)
            .with_context(|| format!("loading prompts from {}", dir.display()))?,
        None => PromptAssets::default(),
    };
    let judge_backend = match mode {
        JudgeMode::Oracle => None,
        JudgeMode::Llm => {
            let backend_config = config
                .as_ref()
                .and_then(|c| c.eval.judge.clone())
                .context("judge mode \"llm\" needs --config with an [eval.judge] backend")?;
            Some(HttpBackend::new(backend_config)?)
        }
    };
    let judge = judge_backend
        .as_ref()
        .map(|backend| Judge { backend, assets: &assets });

    let results = rescore_dir(&dataset, transcripts, &provider, judge.as_ref())?;
    let report = aggregate(&results);

    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("results.json"), &results)?;
        write_json(&dir.join("report.json"), &report)?;
        fs::write(dir.join("report.md"), render_markdown(&report))?;
        fs::write(dir.join("report.csv"), render_csv(&report))?;
        eprintln!("scored {} transcripts -> {}", results.len(), dir.display());
    } else {
        eprintln!("scored {} transcripts", results.len());
    }
    emit(&render_markdown(&report));
    Ok(())
}

// ============================================================================
// report
// ============================================================================

fn cmd_report(results_path: &Path, format: ReportFormat, out: Option<PathBuf>) -> Result<()> {
    let results: Vec<CaseResult> = read_json(results_path)
        .with_context(|| format!("reading results {}", results_path.display()))?;
    let report: MetricsReport = aggregate(&results);
    let rendered = render_report(&report, format);
    match out {
        Some(path) => {
            fs::write(&path, rendered)?;
            eprintln!("wrote {}", path.display());
        }
        None => emit(&rendered),
    }
    Ok(())
}

// ============================================================================
// validate-dataset
// ============================================================================

fn cmd_validate(dataset_path: &Path) -> Result<()> {
    let text = fs::read_to_string(dataset_path)
        .with_context(|| format!("reading {}", dataset_path.display()))?;
    let mut dataset: Dataset = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", dataset_path.display()))?;
    apply_defaults(&mut dataset);

    let issues = validate_dataset(&dataset);
    for issue in &issues {
        emit(&format!("{issue}\n"));
    }
    let fatal = issues.iter().filter(|i| i.severity == Severity::Fatal).count();
    let warnings = issues.len() - fatal;
    if fatal > 0 {
        bail!("{} cases: {fatal} errors, {warnings} warnings", dataset.cases.len());
    }
    emit(&format!("{} cases: 0 errors, {warnings} warnings\n", dataset.cases.len()));
    Ok(())
}

// ============================================================================
// stats
// ============================================================================

fn cmd_stats(dataset_path: &Path) -> Result<()> {
    let dataset = load_dataset(dataset_path)
        .with_context(|| format!("loading dataset {}", dataset_path.display()))?;
    let stats = category_stats(&dataset)?;
    let reference: std::collections::BTreeMap<_, _> =
        REFERENCE_CATEGORY_DISTRIBUTION.into_iter().collect();

    let mut table = format!("cases: {}\n", stats.total);
    table.push_str(&format!(
        "{:<10} {:>5} {:>7} {:>10}\n",
        "category", "count", "share", "reference"
    ));
    for (category, count) in &stats.counts {
        table.push_str(&format!(
            "{:<10} {:>5} {:>7.3} {:>10.3}\n",
            category.as_str(),
            count,
            stats.ratios[category],
            reference[category],
        ));
    }
    emit(&table);
    Ok(())
}
