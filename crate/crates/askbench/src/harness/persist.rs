//! Crash-safe episode persistence. Transcripts are JSONL — a header record
//! on line one, then one event per line — so partial writes are detectable
//! and stored runs can be re-scored without model access. All writes go to
//! a temporary file first and are renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::{TerminalStatus, Transcript, TranscriptEvent};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: line {line}: {problem}")]
    Malformed { path: String, line: usize, problem: String },
}

fn malformed(path: &Path, line: usize, problem: impl Into<String>) -> PersistError {
    PersistError::Malformed {
        path: path.display().to_string(),
        line,
        problem: problem.into(),
    }
}

/// First line of a transcript file: everything but the events, plus how
/// many event lines must follow.
#[derive(Debug, Serialize, Deserialize)]
struct TranscriptHeader {
    case_id: String,
    strategy: String,
    model: String,
    status: TerminalStatus,
    abandoned_actions: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    abort_reason: Option<String>,
    event_count: usize,
}

/// Write `bytes` to `path` atomically (temp file + rename).
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// File name for an episode's transcript, unique per (model, strategy,
/// case) within a run.
pub fn transcript_file_name(model: &str, strategy: &str, case_id: &str) -> String {
    format!("{}__{}__{}.jsonl", sanitize(model), sanitize(strategy), sanitize(case_id))
}

/// File name for an episode's stored [`crate::eval::CaseResult`].
pub fn result_file_name(model: &str, strategy: &str, case_id: &str) -> String {
    format!("{}__{}__{}.result.json", sanitize(model), sanitize(strategy), sanitize(case_id))
}

/// Replace anything outside `[A-Za-z0-9._-]` so labels are safe file names.
pub fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '-' })
        .collect()
}

/// Serialize a transcript to its JSONL form.
pub fn transcript_to_jsonl(transcript: &Transcript) -> String {
    let header = TranscriptHeader {
        case_id: transcript.case_id.clone(),
        strategy: transcript.strategy.clone(),
        model: transcript.model.clone(),
        status: transcript.status,
        abandoned_actions: transcript.abandoned_actions,
        abort_reason: transcript.abort_reason.clone(),
        event_count: transcript.events.len(),
    };
    let mut out = serde_json::to_string(&header).expect("headers serialize");
    out.push('\n');
    for event in &transcript.events {
        out.push_str(&serde_json::to_string(event).expect("events serialize"));
        out.push('\n');
    }
    out
}

/// Persist one transcript into `dir`; returns the file path.
pub fn write_transcript(transcript: &Transcript, dir: &Path) -> Result<PathBuf, PersistError> {
    let path = dir.join(transcript_file_name(
        &transcript.model,
        &transcript.strategy,
        &transcript.case_id,
    ));
    write_atomic(&path, transcript_to_jsonl(transcript).as_bytes())?;
    Ok(path)
}

/// Load a transcript, checking the event count and the transcript's own
/// structural invariants. Errors name the offending line.
pub fn load_transcript(path: &Path) -> Result<Transcript, PersistError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| malformed(path, 1, "empty file, expected a header record"))?;
    let header: TranscriptHeader = serde_json::from_str(header_line)
        .map_err(|e| malformed(path, 1, format!("bad header: {e}")))?;

    let mut events: Vec<TranscriptEvent> = Vec::with_capacity(header.event_count);
    for (index, line) in lines {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        if events.len() == header.event_count {
            return Err(malformed(
                path,
                line_no,
                format!("more than the {} events the header promises", header.event_count),
            ));
        }
        let event: TranscriptEvent = serde_json::from_str(line)
            .map_err(|e| malformed(path, line_no, format!("bad event: {e}")))?;
        events.push(event);
    }
    if events.len() < header.event_count {
        return Err(malformed(
            path,
            events.len() + 2,
            format!(
                "truncated: header promises {} events, file ends after {}",
                header.event_count,
                events.len()
            ),
        ));
    }

    let transcript = Transcript {
        case_id: header.case_id,
        strategy: header.strategy,
        model: header.model,
        status: header.status,
        abandoned_actions: header.abandoned_actions,
        abort_reason: header.abort_reason,
        events,
    };
    transcript
        .validate()
        .map_err(|problem| malformed(path, 1, format!("invariant violation: {problem}")))?;
    Ok(transcript)
}

/// Write any serializable value as pretty JSON, atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| malformed(path, 1, e.to_string()))?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

/// Read a JSON file written by [`write_json`].
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PersistError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e.line(), e.to_string()))
}
