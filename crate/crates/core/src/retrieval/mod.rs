//! Embedding-based pre-filter: ranks candidate nodes by dot-product
//! similarity to the user utterance and keeps the top `k`.

mod cache;
mod lexical;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DialogGraph, DialogNode, NodeId, NodeType};
use crate::Scalar;

pub use cache::{graph_content_hash, CacheFileError};
pub use lexical::{lexical_embed, LexicalEmbedder, DEFAULT_LEXICAL_DIMENSION};

#[derive(Debug, Error)]
#[error("embedding provider failed: {message}")]
pub struct ProviderError {
    pub message: String,
    #[source]
    pub source: Option<Box<dyn std::error::Error + Send + Sync>>,
}

impl ProviderError {
    pub fn new(message: impl Into<String>) -> Self {
        ProviderError {
            message: message.into(),
            source: None,
        }
    }

    pub fn with_source(
        message: impl Into<String>,
        source: impl std::error::Error + Send + Sync + 'static,
    ) -> Self {
        ProviderError {
            message: message.into(),
            source: Some(Box::new(source)),
        }
    }
}

/// Maps text to fixed-dimension vectors. The same text must always map to
/// the same vector for a given provider instance.
pub trait EmbeddingProvider<S: Scalar>: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<S>, ProviderError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, ProviderError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<S: Scalar, P: EmbeddingProvider<S> + ?Sized> EmbeddingProvider<S> for Arc<P> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<S>, ProviderError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, ProviderError> {
        (**self).embed_batch(texts)
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query must not be empty")]
    EmptyQuery,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("provider returned a vector of dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate<S> {
    pub node: NodeId,
    pub score: S,
    /// 1-based position in the ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub candidate_node_types: Vec<NodeType>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 15,
            candidate_node_types: vec![NodeType::Information, NodeType::Question],
        }
    }
}

impl RetrievalConfig {
    pub fn with_k(k: usize) -> Self {
        RetrievalConfig {
            k,
            ..Default::default()
        }
    }

    pub fn admits(&self, node: &DialogNode) -> bool {
        self.candidate_node_types.contains(&node.node_type) && !node.text.trim().is_empty()
    }
}

/// Nodes eligible for retrieval under `config`, in authored order.
pub fn candidate_nodes<'g>(
    graph: &'g DialogGraph,
    config: &RetrievalConfig,
) -> impl Iterator<Item = &'g DialogNode> + 'g {
    let config = config.clone();
    graph.nodes().iter().filter(move |n| config.admits(n))
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Top-`k` candidates for `query` without caching node embeddings.
pub fn prefilter<S: Scalar, P: EmbeddingProvider<S> + ?Sized>(
    query: &str,
    graph: &DialogGraph,
    provider: &P,
    config: &RetrievalConfig,
) -> Result<Vec<ScoredCandidate<S>>, RetrievalError> {
    if query.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let nodes: Vec<&DialogNode> = candidate_nodes(graph, config).collect();
    let texts: Vec<&str> = nodes.iter().map(|n| n.text.as_str()).collect();
    let q = checked(provider.embed(query)?, provider.dimension())?;
    let vectors = provider.embed_batch(&texts)?;
    let scored = nodes
        .iter()
        .zip(vectors)
        .map(|(n, v)| Ok((n.id.clone(), dot(&q, &checked(v, provider.dimension())?))))
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    Ok(rank(scored, config.k))
}

fn checked<S>(v: Vec<S>, expected: usize) -> Result<Vec<S>, RetrievalError> {
    if v.len() == expected {
        Ok(v)
    } else {
        Err(RetrievalError::DimensionMismatch {
            expected,
            got: v.len(),
        })
    }
}

/// Sorts by descending score (ties by node id) and keeps the first `k`.
pub fn rank<S: Scalar>(mut scored: Vec<(NodeId, S)>, k: usize) -> Vec<ScoredCandidate<S>> {
    scored.sort_by(|(ia, sa), (ib, sb)| {
        // NaN scores sink to the bottom
        match (sa.is_nan(), sb.is_nan()) {
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => sb.partial_cmp(sa).unwrap_or(Ordering::Equal),
        }
        .then_with(|| ia.cmp(ib))
    });
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (node, score))| ScoredCandidate {
            node,
            score,
            rank: i + 1,
        })
        .collect()
}

/// A provider plus a per-text embedding cache, shareable across sessions.
pub struct Retriever<S: Scalar, P> {
    provider: P,
    cache: RwLock<HashMap<String, Arc<Vec<S>>>>,
}

impl<S: Scalar, P: EmbeddingProvider<S>> Retriever<S, P> {
    pub fn new(provider: P) -> Self {
        Retriever {
            provider,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    fn node_vectors(&self, texts: &[&str]) -> Result<Vec<Arc<Vec<S>>>, RetrievalError> {
        let missing: Vec<&str> = {
            let cache = self.cache.read().unwrap();
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .copied()
                .filter(|t| !cache.contains_key(*t) && seen.insert(*t))
                .collect()
        };
        if !missing.is_empty() {
            let vectors = self.provider.embed_batch(&missing)?;
            let mut cache = self.cache.write().unwrap();
            for (text, v) in missing.into_iter().zip(vectors) {
                let v = checked(v, self.provider.dimension())?;
                cache.insert(text.to_string(), Arc::new(v));
            }
        }
        let cache = self.cache.read().unwrap();
        Ok(texts.iter().map(|t| Arc::clone(&cache[*t])).collect())
    }

    /// Same ranking as [`prefilter`], reusing cached node embeddings.
    pub fn prefilter(
        &self,
        query: &str,
        graph: &DialogGraph,
        config: &RetrievalConfig,
    ) -> Result<Vec<ScoredCandidate<S>>, RetrievalError> {
        if query.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let nodes: Vec<&DialogNode> = candidate_nodes(graph, config).collect();
        let texts: Vec<&str> = nodes.iter().map(|n| n.text.as_str()).collect();
        let vectors = self.node_vectors(&texts)?;
        let q = checked(self.provider.embed(query)?, self.provider.dimension())?;
        let scored = nodes
            .iter()
            .zip(vectors)
            .map(|(n, v)| (n.id.clone(), dot(&q, &v)))
            .collect();
        tracing::debug!(k = config.k, candidates = nodes.len(), "prefilter");
        Ok(rank(scored, config.k))
    }

    /// Writes cached embeddings to a versioned sidecar file tagged with the
    /// graph's content hash.
    pub fn save_cache(&self, path: &std::path::Path, graph: &DialogGraph) -> Result<(), CacheFileError> {
        let cache = self.cache.read().unwrap();
        let mut entries: Vec<(&String, &Arc<Vec<S>>)> = cache.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        cache::write_sidecar(path, &graph_content_hash(graph), self.provider.dimension(), &entries)
    }

    /// Loads a sidecar written for the same graph content and dimension.
    /// Returns the number of entries loaded.
    pub fn load_cache(&self, path: &std::path::Path, graph: &DialogGraph) -> Result<usize, CacheFileError> {
        let entries = cache::read_sidecar::<S>(path, &graph_content_hash(graph), self.provider.dimension())?;
        let n = entries.len();
        let mut cache = self.cache.write().unwrap();
        for (text, v) in entries {
            cache.insert(text, Arc::new(v));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;

    fn docs_graph(texts: &[&str]) -> DialogGraph {
        let mut nodes = vec![format!(
            r#"{{"id":"s","type":"start","text":"Hello","answers":[{}]}}"#,
            (0..texts.len())
                .map(|i| format!(r#"{{"id":"a{i}","intent_text":"t{i}","target":"d{i}"}}"#))
                .collect::<Vec<_>>()
                .join(",")
        )];
        for (i, t) in texts.iter().enumerate() {
            nodes.push(format!(r#"{{"id":"d{i}","type":"information","text":"{t}"}}"#));
        }
        let doc = format!(r#"{{"version":1,"start":"s","nodes":[{}]}}"#, nodes.join(","));
        parse_graph(doc.as_bytes()).unwrap()
    }

    #[test]
    fn lexical_ranking_example() {
        let g = docs_graph(&["train seat rules", "hotel booking", "seat on plane"]);
        let out: Vec<ScoredCandidate<f64>> =
            prefilter("train seat", &g, &LexicalEmbedder::default(), &RetrievalConfig::default()).unwrap();
        let order: Vec<&str> = out.iter().map(|c| c.node.as_str()).collect();
        assert_eq!(order, vec!["d0", "d2", "d1"]);
        // hand-computed cosines: 2/sqrt(6), 1/sqrt(6), 0
        assert!((out[0].score - 2.0 / 6f64.sqrt()).abs() < 1e-12);
        assert!((out[1].score - 1.0 / 6f64.sqrt()).abs() < 1e-12);
        assert!(out[2].score.abs() < 1e-12);
        assert_eq!(out.iter().map(|c| c.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn k_larger_than_pool_returns_all() {
        let g = docs_graph(&["a", "b"]);
        let out: Vec<ScoredCandidate<f32>> =
            prefilter("a", &g, &LexicalEmbedder::default(), &RetrievalConfig::with_k(15)).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn ties_broken_by_node_id() {
        let g = docs_graph(&["same words", "same words", "other"]);
        let out: Vec<ScoredCandidate<f64>> =
            prefilter("same", &g, &LexicalEmbedder::default(), &RetrievalConfig::default()).unwrap();
        assert_eq!(out[0].node, "d0");
        assert_eq!(out[1].node, "d1");
    }

    #[test]
    fn empty_query_rejected() {
        let g = docs_graph(&["a"]);
        let err = prefilter::<f64, _>(" ", &g, &LexicalEmbedder::default(), &RetrievalConfig::default());
        assert!(matches!(err, Err(RetrievalError::EmptyQuery)));
    }

    struct Failing;
    impl EmbeddingProvider<f64> for Failing {
        fn dimension(&self) -> usize {
            4
        }
        fn embed(&self, _: &str) -> Result<Vec<f64>, ProviderError> {
            Err(ProviderError::with_source(
                "backend down",
                std::io::Error::new(std::io::ErrorKind::ConnectionRefused, "refused"),
            ))
        }
    }

    #[test]
    fn provider_errors_propagate_with_cause() {
        let g = docs_graph(&["a"]);
        let err = prefilter("query", &g, &Failing, &RetrievalConfig::default()).unwrap_err();
        let RetrievalError::Provider(p) = err else { panic!("{err}") };
        assert!(std::error::Error::source(&p).unwrap().to_string().contains("refused"));
    }

    #[test]
    fn cached_retriever_matches_uncached() {
        let g = crate::fixtures::mini_domain();
        let r = Retriever::<f64, _>::new(LexicalEmbedder::default());
        let config = RetrievalConfig::default();
        for q in ["train seat", "my family on research semester", "hotel per night"] {
            let a = r.prefilter(q, &g, &config).unwrap();
            let b = prefilter(q, &g, &LexicalEmbedder::default(), &config).unwrap();
            assert_eq!(a, b);
        }
        assert!(r.cached_len() > 0);
    }

    #[test]
    fn sidecar_round_trip() {
        let g = crate::fixtures::mini_domain();
        let r = Retriever::<f64, _>::new(LexicalEmbedder::default());
        r.prefilter("train", &g, &RetrievalConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.cache");
        r.save_cache(&path, &g).unwrap();

        let fresh = Retriever::<f64, _>::new(LexicalEmbedder::default());
        assert_eq!(fresh.load_cache(&path, &g).unwrap(), r.cached_len());

        let other = docs_graph(&["x"]);
        assert!(matches!(
            fresh.load_cache(&path, &other),
            Err(CacheFileError::GraphMismatch)
        ));
    }
}
