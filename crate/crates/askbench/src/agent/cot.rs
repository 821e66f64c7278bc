//! Linear strategy: one action per turn, committed immediately, until a
//! terminal action, the step budget, or too many parse failures in a row.

use crate::agent::prompts::{
    corrective_reprompt, initial_messages, observation_message, PromptAssets,
};
use crate::agent::{parse_action, Action, StrategyConfig, TerminalStatus, Transcript};
use crate::backend::{Backend, ChatMessage};
use crate::corpus::TestCase;
use crate::toolbox::{execute_call, ApiCall};
use crate::user_sim::{SimSession, SimilarityProvider};

/// Run one episode with the linear strategy. The transcript always comes
/// back, whatever the terminal status; infrastructure failures abort the
/// episode with [`TerminalStatus::BackendError`] and the reason recorded.
pub fn run_cot(
    case: &TestCase,
    backend: &dyn Backend,
    provider: &SimilarityProvider,
    assets: &PromptAssets,
    config: &StrategyConfig,
) -> Transcript {
    let mut transcript = Transcript::new(&case.id, config.label(), backend.label());
    let mut sim = SimSession::new(case, provider);
    let mut messages = initial_messages(case, config.awn, assets);
    let mut generated: u32 = 0;
    let mut consecutive_failures: u32 = 0;

    loop {
        if generated >= config.max_steps {
            transcript.status = TerminalStatus::BudgetExhausted;
            break;
        }
        let output = match backend.complete(&messages) {
            Ok(o) => o,
            Err(e) => {
                transcript.status = TerminalStatus::BackendError;
                transcript.abort_reason = Some(e.to_string());
                break;
            }
        };
        generated += 1;
        messages.push(ChatMessage::assistant(&output.text));

        let action = match parse_action(&output.text) {
            Ok(a) => a,
            Err(err) => {
                transcript.push_parse_failure(output.text, err.to_string());
                consecutive_failures += 1;
                if consecutive_failures > config.parse_retry_limit {
                    transcript.status = TerminalStatus::ParseFailed;
                    transcript.abort_reason = Some(format!(
                        "{consecutive_failures} unparseable replies in a row"
                    ));
                    break;
                }
                messages.push(ChatMessage::user(corrective_reprompt(&err)));
                continue;
            }
        };
        consecutive_failures = 0;
        transcript.push_action(action.clone());

        match action {
            Action::Think { .. } => {}
            Action::AskUser { question } => {
                let reply = match sim.respond(&question) {
                    Ok(r) => r,
                    Err(e) => {
                        transcript.status = TerminalStatus::BackendError;
                        transcript.abort_reason = Some(format!("user simulator: {e}"));
                        break;
                    }
                };
                transcript.push_reply(reply.clone());
                messages.push(ChatMessage::user(reply));
            }
            Action::CallApi { api, arguments } => {
                let response = execute_call(&ApiCall { api: api.clone(), arguments }, case);
                transcript.push_tool(response.clone());
                messages.push(ChatMessage::user(observation_message(&api, &response)));
            }
            Action::Finish { .. } => {
                transcript.status = TerminalStatus::Finished;
                break;
            }
            Action::Refuse { .. } => {
                transcript.status = TerminalStatus::Refused;
                break;
            }
        }
    }

    debug_assert_eq!(transcript.validate(), Ok(()));
    transcript
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Actor, EventBody};
    use crate::backend::make_scripted;
    use crate::corpus::load_dataset;
    use crate::user_sim::FALLBACK_REPLY;

    fn pack() -> crate::corpus::Dataset {
        load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pack.json")).unwrap()
    }

    fn cfg(max_steps: u32, retry: u32) -> StrategyConfig {
        StrategyConfig { max_steps, parse_retry_limit: retry, ..StrategyConfig::default() }
    }

    #[test]
    fn happy_path_ask_call_finish() {
        let dataset = pack();
        let case = dataset.case("imki-alarm").unwrap();
        let backend = make_scripted(vec![
            r#"{"type":"ask_user","question":"What time should the alarm be set for?"}"#.into(),
            r#"{"type":"call_api","api":"set_alarm","arguments":{"time":"07:30"}}"#.into(),
            r#"{"type":"finish","answer":"Your alarm is set for 07:30."}"#.into(),
        ]);
        let provider = SimilarityProvider::lexical(0.7);
        let t = run_cot(case, &backend, &provider, &PromptAssets::default(), &cfg(8, 1));

        assert_eq!(t.status, TerminalStatus::Finished);
        assert_eq!(t.abandoned_actions, 0);
        assert_eq!(t.events.len(), 5); // ask, reply, call, tool, finish
        assert!(t.validate().is_ok());
        let EventBody::Reply { reply } = &t.events[1].body else { panic!() };
        assert_eq!(reply, "Set it for 07:30.");
        let EventBody::ToolResult { response } = &t.events[3].body else { panic!() };
        assert!(!response.is_error());
    }

    #[test]
    fn threshold_decides_whether_a_vague_question_gets_an_answer() {
        let dataset = pack();
        let case = dataset.case("imki-alarm").unwrap();
        let script = vec![
            r#"{"type":"ask_user","question":"When?"}"#.into(),
            r#"{"type":"finish","answer":"ok"}"#.into(),
        ];
        // "When?" shares no tokens with the anticipated question: fallback.
        let strict = SimilarityProvider::lexical(0.7);
        let backend = make_scripted(script.clone());
        let t = run_cot(case, &backend, &strict, &PromptAssets::default(), &cfg(8, 1));
        let EventBody::Reply { reply } = &t.events[1].body else { panic!() };
        assert_eq!(reply, FALLBACK_REPLY);

        // A closer paraphrase clears a lower threshold and gets the answer.
        let script = vec![
            r#"{"type":"ask_user","question":"What time do you want the alarm?"}"#.into(),
            r#"{"type":"finish","answer":"ok"}"#.into(),
        ];
        let lax = SimilarityProvider::lexical(0.5);
        let backend = make_scripted(script);
        let t = run_cot(case, &backend, &lax, &PromptAssets::default(), &cfg(8, 1));
        let EventBody::Reply { reply } = &t.events[1].body else { panic!() };
        assert_eq!(reply, "Set it for 07:30.");
    }

    #[test]
    fn one_parse_failure_is_retried_then_recovered() {
        let dataset = pack();
        let case = dataset.case("ibtc-stock").unwrap();
        let backend = make_scripted(vec![
            "Let me think about this first.".into(),
            r#"{"type":"refuse","statement":"cannot do that"}"#.into(),
        ]);
        let provider = SimilarityProvider::lexical(0.7);
        let t = run_cot(case, &backend, &provider, &PromptAssets::default(), &cfg(8, 1));

        assert_eq!(t.status, TerminalStatus::Refused);
        assert_eq!(t.events.len(), 2);
        assert!(matches!(t.events[0].body, EventBody::ParseFailure { .. }));
        assert_eq!(t.events[0].actor, Actor::Agent);
        assert_eq!(t.agent_events().count(), 2);
    }

    #[test]
    fn repeated_parse_failures_exhaust_the_retry_limit() {
        let dataset = pack();
        let case = dataset.case("ibtc-stock").unwrap();
        let backend = make_scripted(vec!["junk one".into(), "junk two".into()]);
        let provider = SimilarityProvider::lexical(0.7);
        let t = run_cot(case, &backend, &provider, &PromptAssets::default(), &cfg(8, 1));

        assert_eq!(t.status, TerminalStatus::ParseFailed);
        assert_eq!(t.events.len(), 2);
        assert!(t.abort_reason.as_deref().unwrap().contains("unparseable"));
    }

    #[test]
    fn budget_exhaustion_stops_the_loop() {
        let dataset = pack();
        let case = dataset.case("ibtc-stock").unwrap();
        let think = r#"{"type":"think","thought":"still thinking"}"#.to_string();
        let backend = make_scripted(vec![think.clone(), think.clone(), think]);
        let provider = SimilarityProvider::lexical(0.7);
        let t = run_cot(case, &backend, &provider, &PromptAssets::default(), &cfg(3, 1));

        assert_eq!(t.status, TerminalStatus::BudgetExhausted);
        assert_eq!(t.events.len(), 3);
    }

    #[test]
    fn script_exhaustion_surfaces_as_backend_error() {
        let dataset = pack();
        let case = dataset.case("ibtc-stock").unwrap();
        let backend = make_scripted(vec![r#"{"type":"think","thought":"x"}"#.into()]);
        let provider = SimilarityProvider::lexical(0.7);
        let t = run_cot(case, &backend, &provider, &PromptAssets::default(), &cfg(8, 1));

        assert_eq!(t.status, TerminalStatus::BackendError);
        assert_eq!(t.events.len(), 1);
        assert!(t.abort_reason.is_some());
    }
}
