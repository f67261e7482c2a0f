//! The three decision prompts. Wording and layout are fixed; only the marked
//! variables are substituted.

use super::{ChatMessage, NluError};

pub const MODE_SYSTEM_PROMPT: &str = r#"Answer with "yes" or "no" only."#;

const MODE_USER_PREFIX: &str = "Is the following text a question / command / requesting or not: ";

const INTENT_SYSTEM_HEAD: &str = "Given this list of possible response candidates:";
const INTENT_SYSTEM_TAIL: &str = "Decide which of the response candidate texts most closely matches the user intent, and only output the responses index. Do not output any other text, any code, or anything else.";

const FILTER_SYSTEM_HEAD: &str = "You will be provided with a json list of facts and a query.
You are to act as a first filter to decide which of the given facts answer the query or are relevant to answering the query, at least partially, and which ones are not relevant to answering the query at all?
Assign each fact a relevance indicator between 0 and 2, and add a justification of why it is relevant (2), partially related (1), or irrelevant (0).
Facts are also considered relevant if they imply the answer.
If facts contain placeholders inside curly braces, assume the placeholder will be filled with a reasonable value.
Don't return anything besides the json list of relevant facts, and only return facts with relevance indicator higher than 0. Don't return code or additional text.

REMEMBER: even if some facts are only slightly relevant to answering the query, it is better to rate them with a relevance of 1 than to have all facts have relevance 0.";

const FILTER_SYSTEM_NOTE: &str = "Note that the fact with key 4 was excluded from the output, as it has a relevance of 0: Fact 4 is not related to the query about the weather in Singapore.";

pub(crate) const FACTS_HEADER: &str = "======= Facts =======";
pub(crate) const QUERY_HEADER: &str = "======= Query =======";

/// In-context example block for the filter prompt (version 1).
pub const DEFAULT_FILTER_EXAMPLES: &str = include_str!("../../assets/prompts/filter_examples.v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    Mode,
    Intent,
    Filter,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PromptInputs<'a> {
    pub utterance: Option<&'a str>,
    /// Intent texts (intent prompt) or node texts (filter prompt).
    pub candidates: Option<&'a [&'a str]>,
    pub examples: Option<&'a str>,
}

pub fn build_prompt(kind: PromptKind, inputs: &PromptInputs<'_>) -> Result<Vec<ChatMessage>, NluError> {
    let utterance = inputs.utterance.ok_or(NluError::MissingInput("utterance"))?;
    match kind {
        PromptKind::Mode => Ok(mode_messages(utterance)),
        PromptKind::Intent => {
            let candidates = inputs.candidates.ok_or(NluError::MissingInput("candidates"))?;
            Ok(intent_messages(utterance, candidates))
        }
        PromptKind::Filter => {
            let facts = inputs.candidates.ok_or(NluError::MissingInput("candidates"))?;
            let examples = inputs.examples.ok_or(NluError::MissingInput("examples"))?;
            Ok(filter_messages(utterance, facts, Some(examples)))
        }
    }
}

pub(crate) fn mode_messages(utterance: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(MODE_SYSTEM_PROMPT),
        ChatMessage::user(format!("{MODE_USER_PREFIX}{utterance}?")),
    ]
}

pub(crate) fn intent_messages(utterance: &str, candidates: &[&str]) -> Vec<ChatMessage> {
    let list = json_list(candidates.iter().enumerate().map(|(i, c)| {
        format!("{{\"index\": {i}, \"intent\": {}}}", json_string(c))
    }));
    vec![
        ChatMessage::system(format!("{INTENT_SYSTEM_HEAD}\n{list}\n{INTENT_SYSTEM_TAIL}")),
        ChatMessage::user(utterance),
    ]
}

/// Filter prompt; `examples = None` drops the in-context block and the note
/// that refers to it.
pub(crate) fn filter_messages(utterance: &str, facts: &[&str], examples: Option<&str>) -> Vec<ChatMessage> {
    let system = match examples {
        Some(ex) => format!("{FILTER_SYSTEM_HEAD}\n\n{ex}\n\n{FILTER_SYSTEM_NOTE}"),
        None => FILTER_SYSTEM_HEAD.to_string(),
    };
    let list = json_list(
        facts
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{{\"key\": {i}, \"fact\": {}}}", json_string(f))),
    );
    vec![
        ChatMessage::system(system),
        ChatMessage::user(format!("{FACTS_HEADER}\n{list}\n{QUERY_HEADER}\n{utterance}")),
    ]
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// `[a,\nb,\nc]`, the layout used by the example blocks.
fn json_list(items: impl Iterator<Item = String>) -> String {
    let items: Vec<String> = items.collect();
    format!("[{}]", items.join(",\n"))
}

/// Recovers the prompt kind and the user utterance from messages built by
/// this module.
pub fn identify_prompt(messages: &[ChatMessage]) -> Option<(PromptKind, String)> {
    let system = messages.iter().find(|m| m.role == super::Role::System)?;
    let user = messages.iter().rev().find(|m| m.role == super::Role::User)?;
    if system.text == MODE_SYSTEM_PROMPT {
        let u = user.text.strip_prefix(MODE_USER_PREFIX)?;
        Some((PromptKind::Mode, u.strip_suffix('?').unwrap_or(u).to_string()))
    } else if system.text.starts_with(INTENT_SYSTEM_HEAD) {
        Some((PromptKind::Intent, user.text.clone()))
    } else if system.text.starts_with(&FILTER_SYSTEM_HEAD[..40]) {
        let (_, u) = user.text.split_once(&format!("{QUERY_HEADER}\n"))?;
        Some((PromptKind::Filter, u.to_string()))
    } else {
        None
    }
}

/// Plain-text rendering of a message list, one `### role` header per message.
pub fn render_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        let role = match m.role {
            super::Role::System => "system",
            super::Role::User => "user",
        };
        out.push_str("### ");
        out.push_str(role);
        out.push('\n');
        out.push_str(&m.text);
        out.push('\n');
    }
    out
}
