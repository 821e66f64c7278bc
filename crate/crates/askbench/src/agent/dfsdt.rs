//! Depth-first strategy: explore up to `dfsdt_k` candidate actions per node,
//! committing to the first branch that reaches finish/refuse and abandoning
//! branches that hit tool errors, unparseable candidates, give-up thoughts,
//! or the depth limit. The step budget is global across all branches.

use crate::agent::prompts::{
    corrective_reprompt, diversity_reprompt, initial_messages, observation_message, PromptAssets,
};
use crate::agent::{is_give_up, parse_action, Action, StrategyConfig, TerminalStatus, Transcript};
use crate::backend::{Backend, ChatMessage};
use crate::corpus::TestCase;
use crate::toolbox::{execute_call, ApiCall};
use crate::user_sim::{SimSession, SimilarityProvider};

struct Ctx<'a> {
    case: &'a TestCase,
    backend: &'a dyn Backend,
    config: &'a StrategyConfig,
}

/// Outcome of expanding one node.
enum Expand {
    /// Episode is over; the transcript's current events are the final path.
    Stop(TerminalStatus),
    /// This subtree is a dead end; the caller abandons the candidate.
    Failed,
}

/// Outcome of generating one candidate action (with in-slot parse retries).
enum Gen {
    Action(Action, String),
    /// Parse retries exhausted; the candidate slot is abandoned.
    SlotFailed,
    /// Episode-ending condition (budget or backend failure).
    Hard(TerminalStatus),
}

fn generate_candidate(
    ctx: &Ctx,
    transcript: &mut Transcript,
    local: &mut Vec<ChatMessage>,
    generated: &mut u32,
) -> Gen {
    let mut failures: u32 = 0;
    loop {
        if *generated >= ctx.config.max_steps {
            return Gen::Hard(TerminalStatus::BudgetExhausted);
        }
        let output = match ctx.backend.complete(local) {
            Ok(o) => o,
            Err(e) => {
                transcript.abort_reason = Some(e.to_string());
                return Gen::Hard(TerminalStatus::BackendError);
            }
        };
        *generated += 1;
        local.push(ChatMessage::assistant(&output.text));
        match parse_action(&output.text) {
            Ok(action) => return Gen::Action(action, output.text),
            Err(err) => {
                transcript.push_parse_failure(output.text, err.to_string());
                failures += 1;
                if failures > ctx.config.parse_retry_limit {
                    return Gen::SlotFailed;
                }
                local.push(ChatMessage::user(corrective_reprompt(&err)));
            }
        }
    }
}

fn expand(
    ctx: &Ctx,
    transcript: &mut Transcript,
    sim: &mut SimSession,
    messages: &[ChatMessage],
    depth: u32,
    generated: &mut u32,
) -> Expand {
    // Budget before depth: running out of budget ends the episode with the
    // current path intact, it is not a backtrackable dead end.
    if *generated >= ctx.config.max_steps {
        return Expand::Stop(TerminalStatus::BudgetExhausted);
    }
    if depth >= ctx.config.dfsdt_max_depth {
        return Expand::Failed;
    }

    let mut tried: Vec<String> = Vec::new();
    for _ in 0..ctx.config.dfsdt_k {
        if *generated >= ctx.config.max_steps {
            return Expand::Stop(TerminalStatus::BudgetExhausted);
        }
        let mark = transcript.events.len();
        let sim_mark = sim.snapshot();
        let abandon = |t: &mut Transcript, s: &mut SimSession| {
            t.events.truncate(mark);
            s.restore(sim_mark.clone());
        };

        let mut local = messages.to_vec();
        if !tried.is_empty() {
            local.push(ChatMessage::user(diversity_reprompt(&tried)));
        }
        let (action, raw) = match generate_candidate(ctx, transcript, &mut local, generated) {
            Gen::Hard(status) => return Expand::Stop(status),
            Gen::SlotFailed => {
                abandon(transcript, sim);
                continue;
            }
            Gen::Action(action, raw) => (action, raw),
        };
        tried.push(raw);
        transcript.push_action(action.clone());

        match action {
            Action::Think { thought } => {
                if is_give_up(&thought) {
                    abandon(transcript, sim);
                    continue;
                }
            }
            Action::AskUser { question } => {
                let reply = match sim.respond(&question) {
                    Ok(r) => r,
                    Err(e) => {
                        transcript.abort_reason = Some(format!("user simulator: {e}"));
                        return Expand::Stop(TerminalStatus::BackendError);
                    }
                };
                transcript.push_reply(reply.clone());
                local.push(ChatMessage::user(reply));
            }
            Action::CallApi { api, arguments } => {
                let response = execute_call(&ApiCall { api: api.clone(), arguments }, ctx.case);
                transcript.push_tool(response.clone());
                if response.is_error() {
                    abandon(transcript, sim);
                    continue;
                }
                local.push(ChatMessage::user(observation_message(&api, &response)));
            }
            Action::Finish { .. } => return Expand::Stop(TerminalStatus::Finished),
            Action::Refuse { .. } => return Expand::Stop(TerminalStatus::Refused),
        }

        match expand(ctx, transcript, sim, &local, depth + 1, generated) {
            Expand::Stop(status) => return Expand::Stop(status),
            Expand::Failed => {
                abandon(transcript, sim);
                continue;
            }
        }
    }
    Expand::Failed
}

/// Run one episode with the depth-first strategy. Actions generated on
/// abandoned branches are removed from the transcript but tallied in
/// [`Transcript::abandoned_actions`].
pub fn run_dfsdt(
    case: &TestCase,
    backend: &dyn Backend,
    provider: &SimilarityProvider,
    assets: &PromptAssets,
    config: &StrategyConfig,
) -> Transcript {
    let mut transcript = Transcript::new(&case.id, config.label(), backend.label());
    let mut sim = SimSession::new(case, provider);
    let messages = initial_messages(case, config.awn, assets);
    let mut generated: u32 = 0;
    let ctx = Ctx { case, backend, config };

    transcript.status =
        match expand(&ctx, &mut transcript, &mut sim, &messages, 0, &mut generated) {
            Expand::Stop(status) => status,
            Expand::Failed => {
                transcript.abort_reason =
                    Some("every branch was abandoned before a terminal action".into());
                TerminalStatus::BudgetExhausted
            }
        };
    let on_path = transcript.agent_events().count() as u32;
    transcript.abandoned_actions = generated - on_path;

    debug_assert_eq!(transcript.validate(), Ok(()));
    transcript
}
