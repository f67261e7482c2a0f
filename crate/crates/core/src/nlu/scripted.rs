//! Deterministic backends for tests and offline runs.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::prompts::identify_prompt;
use super::{BackendError, ChatMessage, DecodingParams, LlmBackend, PromptKind};

/// Canned completions keyed by prompt kind and user utterance.
///
/// ```json
/// {"mode": {"hello": "no"}, "intent": {"by rail": "0"}, "filter": {"hot?": "[]"},
///  "defaults": {"mode": "no"}}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptFixture {
    pub mode: BTreeMap<String, String>,
    pub intent: BTreeMap<String, String>,
    pub filter: BTreeMap<String, String>,
    /// Completion per kind when the utterance has no entry.
    pub defaults: BTreeMap<String, String>,
}

impl ScriptFixture {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn lookup(&self, kind: PromptKind, utterance: &str) -> Option<&String> {
        let (table, name) = match kind {
            PromptKind::Mode => (&self.mode, "mode"),
            PromptKind::Intent => (&self.intent, "intent"),
            PromptKind::Filter => (&self.filter, "filter"),
        };
        table.get(utterance.trim()).or_else(|| self.defaults.get(name))
    }
}

enum Script {
    Sequence(Mutex<VecDeque<Result<String, BackendError>>>),
    Fixture(ScriptFixture),
}

/// Replays scripted completions and records every request.
pub struct ScriptedBackend {
    script: Script,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedBackend {
    /// Returns the given results in order, then `Unavailable`.
    pub fn sequence(results: Vec<Result<String, BackendError>>) -> Self {
        ScriptedBackend {
            script: Script::Sequence(Mutex::new(results.into())),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn fixture(fixture: ScriptFixture) -> Self {
        ScriptedBackend {
            script: Script::Fixture(fixture),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _params: &DecodingParams) -> Result<String, BackendError> {
        self.calls.lock().unwrap().push(messages.to_vec());
        match &self.script {
            Script::Sequence(queue) => queue
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(BackendError::Unavailable("script exhausted".into()))),
            Script::Fixture(f) => {
                let (kind, utterance) = identify_prompt(messages)
                    .ok_or_else(|| BackendError::Protocol("unrecognized prompt".into()))?;
                f.lookup(kind, &utterance)
                    .cloned()
                    .ok_or_else(|| BackendError::Unavailable(format!("no scripted {kind:?} reply for {utterance:?}")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::prompts::{intent_messages, mode_messages};

    #[test]
    fn sequence_then_exhausted() {
        let b = ScriptedBackend::sequence(vec![Ok("a".into())]);
        let p = DecodingParams::default();
        assert_eq!(b.complete(&mode_messages("x"), &p), Ok("a".into()));
        assert!(matches!(b.complete(&mode_messages("x"), &p), Err(BackendError::Unavailable(_))));
        assert_eq!(b.call_count(), 2);
    }

    #[test]
    fn fixture_lookup() {
        let f = ScriptFixture::from_json(r#"{"mode": {"hi": "no"}, "defaults": {"intent": "0"}}"#).unwrap();
        let b = ScriptedBackend::fixture(f);
        let p = DecodingParams::default();
        assert_eq!(b.complete(&mode_messages("hi"), &p), Ok("no".into()));
        assert!(b.complete(&mode_messages("other"), &p).is_err());
        assert_eq!(b.complete(&intent_messages("whatever", &["a"]), &p), Ok("0".into()));
    }
}
