//! LLM-backed decisions with a one-retry policy and deterministic fallbacks.

use serde::{Deserialize, Serialize};

use crate::graph::{DialogGraph, DialogNode};
use crate::planner::GoalSet;
use crate::retrieval::{
    candidate_nodes, dot, lexical_embed, EmbeddingProvider, RetrievalConfig, Retriever,
    DEFAULT_LEXICAL_DIMENSION,
};

use super::parse::{parse_filter_output, parse_intent_output, parse_mode_output};
use super::prompts::{filter_messages, intent_messages, mode_messages, DEFAULT_FILTER_EXAMPLES};
use super::{
    BackendError, DecodingParams, Decision, IntentCandidate, LlmBackend, ModeLabel, Nlu, NluError,
};

const ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NluConfig {
    pub retrieval: RetrievalConfig,
    /// Minimum relevance (0-2) for a filtered candidate to become a goal.
    pub relevance_threshold: u8,
    pub decoding: DecodingParams,
    /// Rank with the embedding pre-filter; otherwise every candidate node is
    /// sent to the model.
    pub use_prefilter: bool,
    pub include_examples: bool,
    /// Replacement in-context example block.
    pub examples: Option<String>,
}

impl Default for NluConfig {
    fn default() -> Self {
        NluConfig {
            retrieval: RetrievalConfig::default(),
            relevance_threshold: 2,
            decoding: DecodingParams::default(),
            use_prefilter: true,
            include_examples: true,
            examples: None,
        }
    }
}

impl NluConfig {
    fn examples(&self) -> Option<&str> {
        self.include_examples
            .then(|| self.examples.as_deref().unwrap_or(DEFAULT_FILTER_EXAMPLES))
    }
}

fn complete_nonempty<B: LlmBackend + ?Sized>(
    backend: &B,
    messages: &[super::ChatMessage],
    params: &DecodingParams,
) -> Result<String, BackendError> {
    let out = backend.complete(messages, params)?;
    if out.trim().is_empty() {
        Err(BackendError::Empty)
    } else {
        Ok(out)
    }
}

pub fn classify_mode<B: LlmBackend + ?Sized>(
    utterance: &str,
    backend: &B,
    params: &DecodingParams,
) -> Result<Decision<ModeLabel>, NluError> {
    let messages = mode_messages(utterance);
    let mut last = None;
    for attempt in 0..ATTEMPTS {
        match complete_nonempty(backend, &messages, params) {
            Ok(text) => {
                return Ok(Decision {
                    value: parse_mode_output(&text),
                    retries: attempt,
                    degraded: false,
                })
            }
            Err(e) => {
                tracing::warn!(attempt, error = %e, "mode classification call failed");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt").into())
}

/// Index of the candidate most lexically similar to the utterance, counting
/// its paraphrases. Ties go to the lower index.
pub fn lexical_intent_fallback(utterance: &str, candidates: &[IntentCandidate<'_>]) -> usize {
    let q: Vec<f64> = lexical_embed(utterance, DEFAULT_LEXICAL_DIMENSION);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let score = std::iter::once(c.intent_text)
            .chain(c.paraphrases.iter().map(String::as_str))
            .map(|t| dot(&q, &lexical_embed::<f64>(t, DEFAULT_LEXICAL_DIMENSION)))
            .fold(f64::NEG_INFINITY, f64::max);
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

pub fn classify_intent<B: LlmBackend + ?Sized>(
    utterance: &str,
    candidates: &[IntentCandidate<'_>],
    backend: &B,
    params: &DecodingParams,
) -> Result<Decision<usize>, NluError> {
    if candidates.is_empty() {
        return Err(NluError::MissingInput("candidates"));
    }
    let texts: Vec<&str> = candidates.iter().map(|c| c.intent_text).collect();
    let messages = intent_messages(utterance, &texts);
    let mut backend_error = None;
    for attempt in 0..ATTEMPTS {
        match complete_nonempty(backend, &messages, params) {
            Ok(text) => match parse_intent_output(&text, candidates.len()) {
                Ok(index) => {
                    return Ok(Decision {
                        value: index,
                        retries: attempt,
                        degraded: false,
                    })
                }
                Err(e) => {
                    tracing::warn!(attempt, error = %e, output = %text, "unusable intent output");
                    backend_error = None;
                }
            },
            Err(e) => {
                tracing::warn!(attempt, error = %e, "intent classification call failed");
                backend_error = Some(e);
            }
        }
    }
    if let Some(e) = backend_error {
        return Err(e.into());
    }
    Ok(Decision {
        value: lexical_intent_fallback(utterance, candidates),
        retries: ATTEMPTS - 1,
        degraded: true,
    })
}

/// Pre-filter, ask the model to judge relevance, keep judgments at or above
/// the threshold, and map their keys back to node ids.
pub fn filter_goal_candidates<S, P, B>(
    utterance: &str,
    graph: &DialogGraph,
    retriever: &Retriever<S, P>,
    backend: &B,
    config: &NluConfig,
) -> Result<Decision<GoalSet>, NluError>
where
    S: crate::Scalar,
    P: EmbeddingProvider<S>,
    B: LlmBackend + ?Sized,
{
    let candidates: Vec<&DialogNode> = if config.use_prefilter {
        let ranked = retriever.prefilter(utterance, graph, &config.retrieval)?;
        tracing::info!(k = config.retrieval.k, returned = ranked.len(), "goal pre-filter");
        ranked
            .iter()
            .map(|c| graph.node(c.node.as_str()).expect("ranked node exists"))
            .collect()
    } else {
        candidate_nodes(graph, &config.retrieval).collect()
    };
    let texts: Vec<&str> = candidates.iter().map(|n| n.text.as_str()).collect();
    let messages = filter_messages(utterance, &texts, config.examples());

    let mut backend_error = None;
    for attempt in 0..ATTEMPTS {
        match complete_nonempty(backend, &messages, &config.decoding) {
            Ok(text) => match parse_filter_output(&text) {
                Ok(parsed) => {
                    let goals = goals_from_judgments(&parsed.judgments, &candidates, config.relevance_threshold);
                    return Ok(Decision {
                        value: goals,
                        retries: attempt,
                        degraded: false,
                    });
                }
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "unusable filter output");
                    backend_error = None;
                }
            },
            Err(e) => {
                tracing::warn!(attempt, error = %e, "goal filter call failed");
                backend_error = Some(e);
            }
        }
    }
    if let Some(e) = backend_error {
        return Err(e.into());
    }
    Ok(Decision {
        value: GoalSet::new(),
        retries: ATTEMPTS - 1,
        degraded: true,
    })
}

fn goals_from_judgments(
    judgments: &[super::RelevanceJudgment],
    candidates: &[&DialogNode],
    threshold: u8,
) -> GoalSet {
    judgments
        .iter()
        .filter(|j| j.relevance >= threshold)
        .filter_map(|j| candidates.get(j.key).map(|n| n.id.clone()))
        .collect::<GoalSet>()
}

/// [`Nlu`] backed by a chat model and an embedding retriever.
pub struct LlmNlu<S: crate::Scalar, P, B> {
    backend: B,
    retriever: Retriever<S, P>,
    config: NluConfig,
}

impl<S, P, B> LlmNlu<S, P, B>
where
    S: crate::Scalar,
    P: EmbeddingProvider<S>,
    B: LlmBackend,
{
    pub fn new(backend: B, provider: P, config: NluConfig) -> Self {
        LlmNlu {
            backend,
            retriever: Retriever::new(provider),
            config,
        }
    }

    pub fn config(&self) -> &NluConfig {
        &self.config
    }

    pub fn retriever(&self) -> &Retriever<S, P> {
        &self.retriever
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }
}

impl<S, P, B> Nlu for LlmNlu<S, P, B>
where
    S: crate::Scalar,
    P: EmbeddingProvider<S>,
    B: LlmBackend,
{
    fn classify_mode(&self, utterance: &str) -> Result<Decision<ModeLabel>, NluError> {
        classify_mode(utterance, &self.backend, &self.config.decoding)
    }

    fn classify_intent(
        &self,
        utterance: &str,
        candidates: &[IntentCandidate<'_>],
    ) -> Result<Decision<usize>, NluError> {
        classify_intent(utterance, candidates, &self.backend, &self.config.decoding)
    }

    fn filter_goals(&self, utterance: &str, graph: &DialogGraph) -> Result<Decision<GoalSet>, NluError> {
        filter_goal_candidates(utterance, graph, &self.retriever, &self.backend, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::{serialize_judgments, ScriptedBackend};
    use crate::retrieval::LexicalEmbedder;

    fn cands<'a>(texts: &'a [&'a str], paraphrases: &'a [String]) -> Vec<IntentCandidate<'a>> {
        texts
            .iter()
            .map(|t| IntentCandidate {
                answer_id: t,
                intent_text: t,
                paraphrases,
            })
            .collect()
    }

    #[test]
    fn mode_composition() {
        let b = ScriptedBackend::sequence(vec![Ok("yes".into())]);
        assert_eq!(classify_mode("x", &b, &DecodingParams::default()).unwrap().value, ModeLabel::Free);
        let b = ScriptedBackend::sequence(vec![Ok("no".into())]);
        assert_eq!(classify_mode("x", &b, &DecodingParams::default()).unwrap().value, ModeLabel::Guided);
    }

    #[test]
    fn mode_backend_fails_twice() {
        let down = || Err(BackendError::Unavailable("down".into()));
        let b = ScriptedBackend::sequence(vec![down(), down()]);
        assert!(matches!(
            classify_mode("x", &b, &DecodingParams::default()),
            Err(NluError::Backend(_))
        ));
        let b = ScriptedBackend::sequence(vec![down(), Ok("yes".into())]);
        let d = classify_mode("x", &b, &DecodingParams::default()).unwrap();
        assert_eq!((d.value, d.retries), (ModeLabel::Free, 1));
    }

    #[test]
    fn intent_retry_then_success() {
        let b = ScriptedBackend::sequence(vec![Ok("idx 7".into()), Ok("1".into())]);
        let c = cands(&["a", "b", "c"], &[]);
        let d = classify_intent("b", &c, &b, &DecodingParams::default()).unwrap();
        assert_eq!(d, Decision { value: 1, retries: 1, degraded: false });
    }

    #[test]
    fn intent_lexical_fallback() {
        let b = ScriptedBackend::sequence(vec![Ok("???".into()), Ok("no idea".into())]);
        // no lexical overlap with either intent text: tie goes to index 0
        let c = cands(&["Train", "Plane"], &[]);
        let d = classify_intent("by rail", &c, &b, &DecodingParams::default()).unwrap();
        assert_eq!((d.value, d.degraded), (0, true));

        // with paraphrases the match is exact
        let rail = vec!["Train".to_string(), "By rail".to_string()];
        let plane = vec!["Plane".to_string(), "By air".to_string()];
        let c = vec![
            IntentCandidate { answer_id: "a3", intent_text: "Train", paraphrases: &rail },
            IntentCandidate { answer_id: "a4", intent_text: "Plane", paraphrases: &plane },
        ];
        let b = ScriptedBackend::sequence(vec![Ok("x".into()), Ok("y".into())]);
        assert_eq!(classify_intent("by air", &c, &b, &DecodingParams::default()).unwrap().value, 1);
    }

    fn appendix_reply() -> &'static str {
        DEFAULT_FILTER_EXAMPLES
            .rsplit_once("formatted like this:\n\n")
            .unwrap()
            .1
    }

    /// Graph whose candidate pool is exactly the seven example facts.
    fn appendix_graph() -> DialogGraph {
        let facts = [
            "In Singapore, at 9 a.m., it is usually around 35 degrees celsius.",
            "In Singapore, between 8 a.m. and 11 a.m., the weather is around 35 degrees celsius.",
            "In London, at 9 a.m., it is usually 25 degrees celsius.",
            "In Singapore, between 10 a.m. and 11 a.m., it is usually around 30 degrees celsius.",
            "In Singapore, there are many tourist attractions.",
            "In Singapore, it is usually around 35 degrees celsius in the mornings, but cooler in the evenings.",
            "In {{ COUNTRY }}, at 9 a.m., it is usually around 35 degrees celsius.",
        ];
        let mut nodes = vec![format!(
            r#"{{"id":"s","type":"start","text":"Weather?","answers":[{}]}}"#,
            (0..7)
                .map(|i| format!(r#"{{"id":"a{i}","intent_text":"f{i}","target":"f{i}"}}"#))
                .collect::<Vec<_>>()
                .join(",")
        )];
        for (i, f) in facts.iter().enumerate() {
            nodes.push(format!(r#"{{"id":"f{i}","type":"information","text":"{f}"}}"#));
        }
        let doc = format!(r#"{{"version":1,"start":"s","nodes":[{}]}}"#, nodes.join(","));
        crate::graph::parse_graph(doc.as_bytes()).unwrap()
    }

    fn keys(goals: &GoalSet) -> Vec<&str> {
        goals.iter().map(|n| n.as_str()).collect()
    }

    #[test]
    fn appendix_reply_thresholds() {
        let g = appendix_graph();
        // no pre-filter: candidates keep authored order, so key i is fact i
        let mut config = NluConfig {
            use_prefilter: false,
            ..Default::default()
        };
        let r = Retriever::<f64, _>::new(LexicalEmbedder::default());
        let q = "What is the weather usually in Singapore at 9 a.m.?";

        let b = ScriptedBackend::sequence(vec![Ok(appendix_reply().into())]);
        let d = filter_goal_candidates(q, &g, &r, &b, &config).unwrap();
        assert_eq!(keys(&d.value), vec!["f0", "f1", "f5", "f6"]);

        config.relevance_threshold = 1;
        let b = ScriptedBackend::sequence(vec![Ok(appendix_reply().into())]);
        let d = filter_goal_candidates(q, &g, &r, &b, &config).unwrap();
        assert_eq!(keys(&d.value), vec!["f0", "f1", "f2", "f3", "f5", "f6"]);
    }

    #[test]
    fn filter_parse_failure_degrades_to_empty() {
        let g = appendix_graph();
        let r = Retriever::<f64, _>::new(LexicalEmbedder::default());
        let b = ScriptedBackend::sequence(vec![Ok("nothing".into()), Ok("still nothing".into())]);
        let d = filter_goal_candidates("weather", &g, &r, &b, &NluConfig::default()).unwrap();
        assert!(d.value.is_empty());
        assert!(d.degraded);
    }

    #[test]
    fn filter_result_within_prefilter() {
        let g = crate::fixtures::mini_domain();
        let r = Retriever::<f64, _>::new(LexicalEmbedder::default());
        let config = NluConfig {
            retrieval: RetrievalConfig::with_k(3),
            ..Default::default()
        };
        let q = "train seat reservation";
        let top: Vec<crate::graph::NodeId> = r.prefilter(q, &g, &config.retrieval).unwrap().into_iter().map(|c| c.node).collect();
        let all: Vec<_> = (0..10)
            .map(|k| crate::nlu::RelevanceJudgment { key: k, relevance: 2, justification: String::new() })
            .collect();
        let b = ScriptedBackend::sequence(vec![Ok(serialize_judgments(&all))]);
        let d = filter_goal_candidates(q, &g, &r, &b, &config).unwrap();
        assert_eq!(d.value.len(), 3);
        assert!(d.value.iter().all(|n| top.contains(n)));
    }
}
