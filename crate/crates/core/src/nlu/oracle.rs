//! Model-free [`Nlu`] implementations.

use crate::graph::DialogGraph;
use crate::planner::GoalSet;
use crate::retrieval::{LexicalEmbedder, RetrievalConfig, Retriever};

use super::llm::lexical_intent_fallback;
use super::{Decision, IntentCandidate, ModeLabel, Nlu, NluError};

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['.', '!', '?'])
        .to_lowercase()
}

/// Exact intent match against intent texts and paraphrases, falling back to
/// lexical similarity (flagged degraded).
fn match_intent(utterance: &str, candidates: &[IntentCandidate<'_>]) -> Result<Decision<usize>, NluError> {
    if candidates.is_empty() {
        return Err(NluError::MissingInput("candidates"));
    }
    let u = normalize(utterance);
    let exact = candidates.iter().position(|c| {
        normalize(c.intent_text) == u || c.paraphrases.iter().any(|p| normalize(p) == u)
    });
    Ok(match exact {
        Some(i) => Decision::clean(i),
        None => Decision {
            value: lexical_intent_fallback(utterance, candidates),
            retries: 0,
            degraded: true,
        },
    })
}

/// Knows the ground truth: a fixed mode and goal set, as a simulated user's
/// own understanding would be.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleNlu {
    pub mode: ModeLabel,
    pub goals: GoalSet,
}

impl OracleNlu {
    pub fn new(mode: ModeLabel, goals: GoalSet) -> Self {
        OracleNlu { mode, goals }
    }
}

impl Nlu for OracleNlu {
    fn classify_mode(&self, _utterance: &str) -> Result<Decision<ModeLabel>, NluError> {
        Ok(Decision::clean(self.mode))
    }

    fn classify_intent(
        &self,
        utterance: &str,
        candidates: &[IntentCandidate<'_>],
    ) -> Result<Decision<usize>, NluError> {
        match_intent(utterance, candidates)
    }

    fn filter_goals(&self, _utterance: &str, _graph: &DialogGraph) -> Result<Decision<GoalSet>, NluError> {
        Ok(Decision::clean(self.goals.clone()))
    }
}

const QUESTION_WORDS: [&str; 12] = [
    "what", "how", "when", "where", "which", "who", "why", "can", "do", "does", "is", "are",
];

/// Heuristic offline backend: keyword mode detection and bag-of-words goal
/// retrieval. Useful for demos and smoke tests without a model.
pub struct LexicalNlu {
    retriever: Retriever<f64, LexicalEmbedder>,
    config: RetrievalConfig,
}

impl Default for LexicalNlu {
    fn default() -> Self {
        LexicalNlu {
            retriever: Retriever::new(LexicalEmbedder::default()),
            config: RetrievalConfig::default(),
        }
    }
}

impl LexicalNlu {
    pub fn new(config: RetrievalConfig) -> Self {
        LexicalNlu {
            config,
            ..Default::default()
        }
    }
}

impl Nlu for LexicalNlu {
    fn classify_mode(&self, utterance: &str) -> Result<Decision<ModeLabel>, NluError> {
        let words: Vec<String> = utterance.split_whitespace().map(|w| w.to_lowercase()).collect();
        let free = utterance.contains('?')
            || words.first().is_some_and(|w| QUESTION_WORDS.contains(&w.as_str()))
            || words.len() > 3;
        Ok(Decision::clean(if free { ModeLabel::Free } else { ModeLabel::Guided }))
    }

    fn classify_intent(
        &self,
        utterance: &str,
        candidates: &[IntentCandidate<'_>],
    ) -> Result<Decision<usize>, NluError> {
        match_intent(utterance, candidates).map(|d| Decision { degraded: false, ..d })
    }

    /// Top-ranked candidates (all ties at the best score); empty when nothing
    /// shares a token with the utterance.
    fn filter_goals(&self, utterance: &str, graph: &DialogGraph) -> Result<Decision<GoalSet>, NluError> {
        let ranked = self.retriever.prefilter(utterance, graph, &self.config)?;
        let Some(best) = ranked.first().map(|c| c.score) else {
            return Ok(Decision::clean(GoalSet::new()));
        };
        if best <= 0.0 {
            return Ok(Decision::clean(GoalSet::new()));
        }
        let goals = ranked
            .into_iter()
            .take_while(|c| (best - c.score).abs() < 1e-12)
            .map(|c| c.node)
            .collect();
        Ok(Decision::clean(goals))
    }
}
