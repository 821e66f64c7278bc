//! Run orchestration: configuration, the episode worker pool, crash-safe
//! persistence of transcripts and results, and report rendering.

pub mod persist;
pub mod report;
pub mod runner;

/// Anything that can go wrong while orchestrating a run.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Sim(#[from] crate::user_sim::SimError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Persist(#[from] persist::PersistError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("no script for case {case_id} (model {model})")]
    MissingScript { case_id: String, model: String },
    #[error("parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse: {0}")]
    Toml(#[from] toml::de::Error),
}
