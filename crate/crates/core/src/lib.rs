//! Controllable task-oriented dialog over expert-authored dialog graphs.
//!
//! The engine walks a [`graph::DialogGraph`] node by node and only ever shows
//! authored node text to the user. Language understanding (interaction mode,
//! intent, goal candidates) is delegated to pluggable backends in [`nlu`];
//! dialog planning uses longest shared path prefixes computed in [`planner`].

pub mod eval;
pub mod fixtures;
pub mod graph;
pub mod nlu;
pub mod planner;
pub mod policy;
pub mod retrieval;
pub mod scalar;
pub mod simulator;

pub use scalar::Scalar;

/// Double-precision instantiations of the generic types.
pub type ScoredCandidate64 = retrieval::ScoredCandidate<f64>;
pub type LexicalRetriever = retrieval::Retriever<f64, retrieval::LexicalEmbedder>;
pub type LexicalLlmNlu<B> = nlu::LlmNlu<f64, retrieval::LexicalEmbedder, B>;
