//! askbench — an evaluation harness for tool-calling assistants that are given
//! noisy instructions (missing details, ambiguous references, outright errors,
//! or requests the toolset cannot serve).
//!
//! The harness runs an agent strategy against a dataset of test cases, lets a
//! simulated user answer clarifying questions, executes API calls against a
//! fixture-backed toolbox, and scores the resulting transcripts on five
//! metrics: A1 (asked the anticipated questions), A2 (made the anticipated API
//! calls with correct arguments), A3 (surfaced the anticipated facts in the
//! final answer), Re (redundant or irrelevant questions), and Steps (actions
//! spent).
//!
//! Module map:
//! - [`corpus`]: dataset schema, loading, validation, category statistics
//! - [`toolbox`]: API specs, argument validation, fixture-backed execution
//! - [`backend`]: chat-completion backends (live HTTP, scripted, recording)
//! - [`agent`]: action grammar, prompts, CoT and DFSDT episode loops
//! - [`user_sim`]: text similarity and the simulated user
//! - [`eval`]: per-case scoring and cross-case aggregation
//! - [`harness`]: run orchestration, persistence, report rendering

pub mod agent;
pub mod backend;
pub mod corpus;
pub mod eval;
pub mod harness;
pub mod toolbox;
pub mod user_sim;
