//! Language understanding: prompt construction for the three LLM decisions
//! (interaction mode, intent, goal-candidate filtering), output parsing,
//! retry/fallback composition, and offline backends.

mod llm;
mod oracle;
mod parse;
mod prompts;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DialogGraph;
use crate::planner::GoalSet;
use crate::retrieval::RetrievalError;

pub use llm::{
    classify_intent, classify_mode, filter_goal_candidates, lexical_intent_fallback, LlmNlu, NluConfig,
};
pub use oracle::{LexicalNlu, OracleNlu};
pub use parse::{
    parse_filter_output, parse_intent_output, parse_mode_output, serialize_judgments, FilterParse,
    FilterParseError, IntentParseError,
};
pub use prompts::{
    build_prompt, identify_prompt, render_messages, PromptInputs, PromptKind, DEFAULT_FILTER_EXAMPLES, MODE_SYSTEM_PROMPT,
};
pub use scripted::{ScriptFixture, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("backend returned an empty completion")]
    Empty,
}

/// A chat-completion model.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError> {
        (**self).complete(messages, params)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError> {
        (**self).complete(messages, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeLabel {
    Guided,
    Free,
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeLabel::Guided => "Guided",
            ModeLabel::Free => "Free",
        })
    }
}

/// One verdict of the goal-candidate filter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub key: usize,
    pub relevance: u8,
    pub justification: String,
}

/// An answer the user may pick at a question node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntentCandidate<'a> {
    pub answer_id: &'a str,
    pub intent_text: &'a str,
    pub paraphrases: &'a [String],
}

impl<'a> IntentCandidate<'a> {
    /// Candidates for the answers of the node `node_id`, in authored order.
    pub fn for_node(graph: &'a DialogGraph, node_id: &str) -> Vec<IntentCandidate<'a>> {
        graph
            .node(node_id)
            .map(|n| {
                n.answers
                    .iter()
                    .map(|a| IntentCandidate {
                        answer_id: &a.id,
                        intent_text: &a.intent_text,
                        paraphrases: graph.paraphrases(&a.id),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// A decision plus how it was reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision<T> {
    pub value: T,
    pub retries: u32,
    /// Set when the value comes from a fallback rather than the model.
    pub degraded: bool,
}

impl<T> Decision<T> {
    pub fn clean(value: T) -> Self {
        Decision {
            value,
            retries: 0,
            degraded: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum NluError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("missing prompt input: {0}")]
    MissingInput(&'static str),
}

/// The three language-understanding decisions the dialog policy needs.
pub trait Nlu {
    fn classify_mode(&self, utterance: &str) -> Result<Decision<ModeLabel>, NluError>;

    fn classify_intent(
        &self,
        utterance: &str,
        candidates: &[IntentCandidate<'_>],
    ) -> Result<Decision<usize>, NluError>;

    fn filter_goals(&self, utterance: &str, graph: &DialogGraph) -> Result<Decision<GoalSet>, NluError>;
}

impl<N: Nlu + ?Sized> Nlu for &N {
    fn classify_mode(&self, utterance: &str) -> Result<Decision<ModeLabel>, NluError> {
        (**self).classify_mode(utterance)
    }

    fn classify_intent(
        &self,
        utterance: &str,
        candidates: &[IntentCandidate<'_>],
    ) -> Result<Decision<usize>, NluError> {
        (**self).classify_intent(utterance, candidates)
    }

    fn filter_goals(&self, utterance: &str, graph: &DialogGraph) -> Result<Decision<GoalSet>, NluError> {
        (**self).filter_goals(utterance, graph)
    }
}

impl<N: Nlu + ?Sized> Nlu for std::sync::Arc<N> {
    fn classify_mode(&self, utterance: &str) -> Result<Decision<ModeLabel>, NluError> {
        (**self).classify_mode(utterance)
    }

    fn classify_intent(
        &self,
        utterance: &str,
        candidates: &[IntentCandidate<'_>],
    ) -> Result<Decision<usize>, NluError> {
        (**self).classify_intent(utterance, candidates)
    }

    fn filter_goals(&self, utterance: &str, graph: &DialogGraph) -> Result<Decision<GoalSet>, NluError> {
        (**self).filter_goals(utterance, graph)
    }
}
