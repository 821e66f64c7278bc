//! Prompt assembly: system prompts (with and without the ask-when-needed
//! wrapper), API guideline rendering, and the fixed re-prompt messages used
//! by the strategy loops.

use std::fs;
use std::path::Path;

use crate::agent::ParseError;
use crate::backend::ChatMessage;
use crate::corpus::TestCase;
use crate::toolbox::{ApiSpec, ToolResponse};

/// The text assets prompts are assembled from. [`Default`] uses the copies
/// compiled into the binary; [`PromptAssets::from_dir`] loads overrides from
/// a directory with the same file names.
#[derive(Debug, Clone)]
pub struct PromptAssets {
    pub base_system: String,
    pub awn_system: String,
    pub category_imki: String,
    pub category_imr: String,
    pub category_iwe: String,
    pub category_ibtc: String,
    pub judge_a2: String,
    pub judge_a3: String,
}

impl Default for PromptAssets {
    fn default() -> Self {
        PromptAssets {
            base_system: include_str!("../../prompts/base_system.txt").to_string(),
            awn_system: include_str!("../../prompts/awn_system.txt").to_string(),
            category_imki: include_str!("../../prompts/category_imki.txt").to_string(),
            category_imr: include_str!("../../prompts/category_imr.txt").to_string(),
            category_iwe: include_str!("../../prompts/category_iwe.txt").to_string(),
            category_ibtc: include_str!("../../prompts/category_ibtc.txt").to_string(),
            judge_a2: include_str!("../../prompts/judge_a2.txt").to_string(),
            judge_a3: include_str!("../../prompts/judge_a3.txt").to_string(),
        }
    }
}

impl PromptAssets {
    /// Load all eight assets from a directory (file names as in `prompts/`).
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| fs::read_to_string(dir.join(name));
        Ok(PromptAssets {
            base_system: read("base_system.txt")?,
            awn_system: read("awn_system.txt")?,
            category_imki: read("category_imki.txt")?,
            category_imr: read("category_imr.txt")?,
            category_iwe: read("category_iwe.txt")?,
            category_ibtc: read("category_ibtc.txt")?,
            judge_a2: read("judge_a2.txt")?,
            judge_a3: read("judge_a3.txt")?,
        })
    }
}

// ============================================================================
// System prompt assembly
// ============================================================================

/// Render the API catalogue the agent may call.
pub fn render_api_guidelines(apis: &[ApiSpec]) -> String {
    let mut out = String::from("You can call these APIs:\n");
    for api in apis {
        out.push_str(&format!("\n- {}: {}\n", api.name, api.description));
        if api.parameters.is_empty() {
            out.push_str("  (no parameters)\n");
            continue;
        }
        for p in &api.parameters {
            let req = if p.required { "required" } else { "optional" };
            out.push_str(&format!(
                "  - {} ({}, {}): {}\n",
                p.name, p.param_type, req, p.description
            ));
        }
    }
    out
}

/// The action wire format, spelled out for the model.
pub fn action_grammar() -> String {
    r#"Respond with exactly one JSON object per turn, nothing else. The object must be one of:
{"type": "think", "thought": "<your reasoning>"}
{"type": "ask_user", "question": "<one clarifying question for the user>"}
{"type": "call_api", "api": "<api name>", "arguments": {"<param>": "<value>", ...}}
{"type": "finish", "answer": "<your final answer to the user>"}
{"type": "refuse", "statement": "<why the request cannot be served>"}
Argument values must be scalars. Use finish or refuse exactly once, as your last action."#
        .to_string()
}

/// Build the full system prompt for an episode. With `awn` the
/// ask-when-needed instructions and their per-situation guidance come first;
/// the plain persona, API catalogue, and action grammar always follow.
pub fn build_system_prompt(apis: &[ApiSpec], awn: bool, assets: &PromptAssets) -> String {
    let mut sections: Vec<String> = Vec::new();
    if awn {
        sections.push(assets.awn_system.trim_end().to_string());
        sections.push(format!(
            "How to handle each situation:\n\n{}\n\n{}\n\n{}\n\n{}",
            assets.category_imki.trim_end(),
            assets.category_imr.trim_end(),
            assets.category_iwe.trim_end(),
            assets.category_ibtc.trim_end(),
        ));
    }
    sections.push(assets.base_system.trim_end().to_string());
    sections.push(render_api_guidelines(apis).trim_end().to_string());
    sections.push(action_grammar());
    sections.join("\n\n")
}

/// The opening conversation for an episode: system prompt plus the noisy
/// user request.
pub fn initial_messages(case: &TestCase, awn: bool, assets: &PromptAssets) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(build_system_prompt(&case.apis, awn, assets)),
        ChatMessage::user(&case.query),
    ]
}

// ============================================================================
// In-episode messages
// ============================================================================

/// Corrective message sent after a reply failed to parse as an action.
pub fn corrective_reprompt(error: &ParseError) -> String {
    format!(
        "Your last reply was not a valid action ({}). Reply again with exactly one JSON object \
         in the documented action format and nothing else.",
        error.reason
    )
}

/// Message asking for a different candidate action than the ones already
/// proposed at this point (used by the depth-first strategy for siblings).
pub fn diversity_reprompt(tried: &[String]) -> String {
    let mut out = String::from(
        "The following actions were already proposed at this point and did not work out:\n",
    );
    for t in tried {
        out.push_str(&format!("- {}\n", t.trim()));
    }
    out.push_str("Propose a different action. Reply with exactly one JSON object.");
    out
}

/// How a tool response is shown to the model.
pub fn observation_message(api: &str, response: &ToolResponse) -> String {
    let body = serde_json::to_string(response).expect("tool responses serialize");
    format!("Observation from {api}: {body}")
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::parse_action;
    use crate::corpus::{load_dataset, REFUSAL_SENTINEL};

    fn sample_apis() -> Vec<ApiSpec> {
        let json = r#"[{
            "name": "set_alarm",
            "description": "Set an alarm.",
            "parameters": [
                {"name": "time", "type": "string", "required": true, "description": "HH:MM"}
            ]
        }]"#;
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn default_assets_match_the_files_on_disk() {
        let compiled = PromptAssets::default();
        let loaded = PromptAssets::from_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/prompts"))
            .unwrap();
        assert_eq!(compiled.awn_system, loaded.awn_system);
        assert_eq!(compiled.base_system, loaded.base_system);
        assert_eq!(compiled.judge_a2, loaded.judge_a2);
    }

    #[test]
    fn awn_prompt_states_the_refusal_sentence() {
        let assets = PromptAssets::default();
        assert!(assets.awn_system.contains(REFUSAL_SENTINEL));
        let prompt = build_system_prompt(&sample_apis(), true, &assets);
        assert!(prompt.contains(REFUSAL_SENTINEL));
    }

    #[test]
    fn plain_prompt_omits_the_awn_block_but_keeps_grammar_and_apis() {
        let assets = PromptAssets::default();
        let plain = build_system_prompt(&sample_apis(), false, &assets);
        assert!(!plain.contains(REFUSAL_SENTINEL));
        assert!(plain.contains("set_alarm"));
        assert!(plain.contains("\"type\": \"ask_user\""));
        assert!(plain.contains("\"type\": \"refuse\""));

        let awn = build_system_prompt(&sample_apis(), true, &assets);
        assert!(awn.starts_with(assets.awn_system.trim_end()));
        assert!(awn.contains(&plain));
    }

    #[test]
    fn api_guidelines_list_every_parameter() {
        let text = render_api_guidelines(&sample_apis());
        assert!(text.contains("set_alarm"));
        assert!(text.contains("time (string, required): HH:MM"));
    }

    #[test]
    fn grammar_examples_in_the_prompt_actually_parse() {
        for line in action_grammar().lines().filter(|l| l.starts_with('{')) {
            // Placeholders are plain strings, so each template line is valid.
            let filled = line.replace("<param>", "p").replace(", ...", "");
            parse_action(&filled).unwrap_or_else(|e| panic!("{line}: {e}"));
        }
    }

    #[test]
    fn initial_messages_carry_the_case_query() {
        let dataset =
            load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pack.json")).unwrap();
        let case = dataset.case("imki-alarm").unwrap();
        let messages = initial_messages(case, false, &PromptAssets::default());
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[1].content, case.query);
    }

    #[test]
    fn reprompts_mention_the_problem() {
        let err = parse_action("not json").unwrap_err();
        let msg = corrective_reprompt(&err);
        assert!(msg.contains("not a valid action"));

        let msg = diversity_reprompt(&["{\"type\":\"think\",\"thought\":\"x\"}".to_string()]);
        assert!(msg.contains("different action"));
        assert!(msg.contains("think"));
    }

    #[test]
    fn observations_embed_the_tool_payload() {
        let msg = observation_message("set_alarm", &ToolResponse::ok("done"));
        assert_eq!(msg, r#"Observation from set_alarm: {"status":"ok","payload":"done"}"#);
    }
}
