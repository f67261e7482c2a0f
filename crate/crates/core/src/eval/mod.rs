//! Objective metrics over simulated dialogs, pre-filter recall, the Barnard
//! exact test and the controllability audit.

mod barnard;
mod report;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{rendering_pattern, DialogGraph, NodeId};
use crate::nlu::ModeLabel;
use crate::policy::{ActionKind, RecordKind, SystemAction, TranscriptRecord};
use crate::retrieval::{EmbeddingProvider, RetrievalConfig, RetrievalError, Retriever};
use crate::simulator::DialogOutcome;
use crate::Scalar;

pub use barnard::{
    barnard_exact, barnard_exact_with, wald_statistic, Alternative, Table2x2, TableError, BARNARD_VARIANT,
    DEFAULT_GRID_STEP,
};
pub use report::{read_report, write_report, ReportFormat, CSV_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("report has no outcomes")]
    EmptyReport,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dialogs: usize,
    pub successes: usize,
    /// Percentage of successful dialogs.
    pub success_rate: f64,
    /// Mean length of dialogs whose true mode is guided; `None` without any.
    pub avg_length_guided: Option<f64>,
    pub avg_length_free: Option<f64>,
    /// Binary F1 of the predicted mode, free being the positive class.
    pub mode_f1: f64,
    /// Percentage of dialogs with at least one degraded decision.
    pub degraded_rate: f64,
}

fn mean(xs: &[usize]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<usize>() as f64 / xs.len() as f64)
}

/// F1 with `Free` as the positive class; an unpredicted mode counts as guided.
/// Defined as 1.0 when there are neither positives nor false alarms.
pub fn mode_f1(pairs: impl IntoIterator<Item = (ModeLabel, Option<ModeLabel>)>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (truth, predicted) in pairs {
        let p = predicted == Some(ModeLabel::Free);
        match (truth == ModeLabel::Free, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn aggregate(outcomes: &[DialogOutcome]) -> Result<Metrics, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let n = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.success).count();
    let lengths = |mode| -> Vec<usize> {
        outcomes.iter().filter(|o| o.true_mode == mode).map(|o| o.length).collect()
    };
    let degraded = outcomes.iter().filter(|o| o.degraded).count();
    Ok(Metrics {
        dialogs: n,
        successes,
        success_rate: 100.0 * successes as f64 / n as f64,
        avg_length_guided: mean(&lengths(ModeLabel::Guided)),
        avg_length_free: mean(&lengths(ModeLabel::Free)),
        mode_f1: mode_f1(outcomes.iter().map(|o| (o.true_mode, o.predicted_mode))),
        degraded_rate: 100.0 * degraded as f64 / n as f64,
    })
}

/// (FAQ question, node it belongs to) for every FAQ entry, in node order.
pub fn faq_question_set(graph: &DialogGraph) -> Vec<(String, NodeId)> {
    graph
        .nodes()
        .iter()
        .flat_map(|n| graph.faq(n.id.as_str()).iter().map(move |q| (q.clone(), n.id.clone())))
        .collect()
}

/// Fraction of questions whose answer node is in the top `k` of the
/// pre-filter, for each `k`.
pub fn recall_at_k<S: Scalar, P: EmbeddingProvider<S>>(
    graph: &DialogGraph,
    questions: &[(String, NodeId)],
    retriever: &Retriever<S, P>,
    candidate_types: &RetrievalConfig,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>, RetrievalError> {
    let all = RetrievalConfig {
        k: usize::MAX,
        ..candidate_types.clone()
    };
    let mut ranks: Vec<Option<usize>> = Vec::with_capacity(questions.len());
    for (q, answer) in questions {
        let ranked = retriever.prefilter(q, graph, &all)?;
        ranks.push(ranked.iter().find(|c| &c.node == answer).map(|c| c.rank));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            let recall = if questions.is_empty() { 0.0 } else { hits as f64 / questions.len() as f64 };
            (k, recall)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: NodeId,
    pub text: Option<String>,
    pub reason: String,
}

/// Checks that every ASK shows an authored node text, placeholders filled.
pub struct ControllabilityAudit<'g> {
    graph: &'g DialogGraph,
    patterns: HashMap<NodeId, regex::Regex>,
}

impl<'g> ControllabilityAudit<'g> {
    pub fn new(graph: &'g DialogGraph) -> Self {
        ControllabilityAudit {
            graph,
            patterns: HashMap::new(),
        }
    }

    pub fn check(&mut self, node: &NodeId, text: Option<&str>) -> Option<Violation> {
        let violation = |reason: &str| Violation {
            node: node.clone(),
            text: text.map(str::to_string),
            reason: reason.to_string(),
        };
        let Some(authored) = self.graph.node(node.as_str()) else {
            return Some(violation("node not in graph"));
        };
        let Some(text) = text else {
            return Some(violation("ASK without text"));
        };
        let pattern = self
            .patterns
            .entry(node.clone())
            .or_insert_with(|| rendering_pattern(&authored.text));
        (!pattern.is_match(text)).then(|| violation("text is not a rendering of the node"))
    }

    pub fn actions<'a>(&mut self, actions: impl IntoIterator<Item = &'a SystemAction>) -> Vec<Violation> {
        actions
            .into_iter()
            .filter(|a| a.kind == ActionKind::Ask)
            .filter_map(|a| self.check(&a.node, a.rendered_text.as_deref()))
            .collect()
    }

    pub fn records(&mut self, records: &[TranscriptRecord]) -> Vec<Violation> {
        records
            .iter()
            .filter(|r| r.kind == RecordKind::Ask)
            .filter_map(|r| match &r.node {
                Some(n) => self.check(n, r.text.as_deref()),
                None => Some(Violation {
                    node: NodeId::from(""),
                    text: r.text.clone(),
                    reason: "ASK record without node".into(),
                }),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::mini_domain;
    use crate::retrieval::LexicalEmbedder;
    use crate::simulator::Termination;

    fn outcome(success: bool, truth: ModeLabel, predicted: ModeLabel, length: usize) -> DialogOutcome {
        DialogOutcome {
            index: 0,
            goal: "g".into(),
            success,
            length,
            true_mode: truth,
            predicted_mode: Some(predicted),
            turns_used: length,
            termination: if success { Termination::Goal } else { Termination::DeadEnd },
            degraded: false,
            off_path_events: 0,
            transcript: vec![],
        }
    }

    #[test]
    fn f1_hand_case() {
        use ModeLabel::*;
        let pairs = [
            (Free, Some(Free)),
            (Free, Some(Free)),
            (Free, Some(Free)),
            (Guided, Some(Free)),
            (Free, Some(Guided)),
            (Guided, Some(Guided)),
        ];
        assert!((mode_f1(pairs) - 0.75).abs() < 1e-12);
        assert_eq!(mode_f1([(Free, Some(Free)), (Guided, Some(Guided))]), 1.0);
        assert_eq!(mode_f1([(Free, Some(Guided)), (Guided, Some(Free))]), 0.0);
    }

    #[test]
    fn aggregate_basics() {
        use ModeLabel::*;
        let outs = vec![
            outcome(true, Free, Free, 3),
            outcome(true, Guided, Guided, 8),
            outcome(true, Free, Free, 5),
        ];
        let m = aggregate(&outs).unwrap();
        assert_eq!(m.success_rate, 100.0);
        assert_eq!(m.avg_length_free, Some(4.0));
        assert_eq!(m.avg_length_guided, Some(8.0));
        assert_eq!(m.mode_f1, 1.0);
        let mut rev = outs.clone();
        rev.reverse();
        assert_eq!(aggregate(&rev).unwrap(), m);
        assert!(matches!(aggregate(&[]), Err(EvalError::EmptyReport)));
    }

    #[test]
    fn recall_curve_on_mini_domain() {
        let g = mini_domain();
        let qs = faq_question_set(&g);
        let r = Retriever::<f64, _>::new(LexicalEmbedder::default());
        let n = crate::retrieval::candidate_nodes(&g, &RetrievalConfig::default()).count();
        let ks: Vec<usize> = (1..=n).collect();
        let curve = recall_at_k(&g, &qs, &r, &RetrievalConfig::default(), &ks).unwrap();
        assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(curve.last().unwrap().1, 1.0);
    }

    #[test]
    fn audit_flags_foreign_text() {
        let g = mini_domain();
        let mut audit = ControllabilityAudit::new(&g);
        let ok = SystemAction {
            kind: ActionKind::Ask,
            node: "n12".into(),
            rendered_text: Some("For trips to France, the daily allowance is 40 euros.".into()),
            suggestions: vec![],
        };
        let bad = SystemAction {
            rendered_text: Some("For trips to France, the daily allowance is 400 euros.".into()),
            ..ok.clone()
        };
        let skip = SystemAction::skip("n1".into());
        let v = audit.actions([&ok, &bad, &skip]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].node, "n12");
    }
}
