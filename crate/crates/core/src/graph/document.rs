//! Versioned JSON graph document: parsing with full violation reporting,
//! and canonical serialization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Answer, Condition, DialogGraph, DialogNode, LogicBranch, NodeId, NodeType, Value, ValueKind,
    VariableDecl,
};

pub const FORMAT_VERSION: u32 = 1;

/// A single problem found while loading a graph document.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error{}: {message}", node.as_ref().map(|n| format!(" in node {n:?}")).unwrap_or_default())]
    Schema {
        node: Option<String>,
        message: String,
    },
    #[error("dangling link from {from:?} to {target:?}")]
    Link { from: String, target: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
}

/// Every violation found in a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphErrors(pub Vec<GraphError>);

impl GraphErrors {
    pub fn iter(&self) -> impl Iterator<Item = &GraphError> {
        self.0.iter()
    }

    pub fn first(&self) -> &GraphError {
        &self.0[0]
    }
}

impl fmt::Display for GraphErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for GraphErrors {}

#[derive(Debug, Serialize, Deserialize)]
struct GraphDoc {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    start: String,
    nodes: Vec<serde_json::Value>,
    #[serde(default)]
    faq: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    paraphrases: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    #[serde(rename = "type")]
    node_type: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variable: Option<VariableDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    branches: Vec<BranchDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchDoc {
    condition: String,
    target: String,
}

/// Parses and validates a graph document, reporting every violation found.
pub fn parse_graph(bytes: &[u8]) -> Result<DialogGraph, GraphErrors> {
    let doc: GraphDoc = serde_json::from_slice(bytes).map_err(|e| {
        let err = if e.is_data() {
            GraphError::Schema {
                node: None,
                message: e.to_string(),
            }
        } else {
            GraphError::Syntax(e.to_string())
        };
        GraphErrors(vec![err])
    })?;

    let mut errors = Vec::new();
    let schema = |node: Option<&str>, message: String| GraphError::Schema {
        node: node.map(str::to_string),
        message,
    };

    if doc.version != FORMAT_VERSION {
        errors.push(schema(
            None,
            format!("unsupported version {} (expected {FORMAT_VERSION})", doc.version),
        ));
    }

    let mut nodes = Vec::with_capacity(doc.nodes.len());
    let mut seen_ids = HashSet::new();
    let mut seen_answers = HashSet::new();
    let mut links: Vec<(String, String)> = Vec::new();
    let mut start_count = 0;
    for (pos, raw) in doc.nodes.into_iter().enumerate() {
        let label = raw
            .get("id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{pos}"));
        let nd: NodeDoc = match serde_json::from_value(raw) {
            Ok(nd) => nd,
            Err(e) => {
                errors.push(schema(Some(&label), e.to_string()));
                continue;
            }
        };
        if !seen_ids.insert(nd.id.clone()) {
            errors.push(GraphError::DuplicateId(nd.id.clone()));
            continue;
        }
        if nd.node_type == "start" {
            start_count += 1;
        }
        let targets = nd
            .answers
            .iter()
            .map(|a| a.target.to_string())
            .chain(nd.branches.iter().map(|b| b.target.clone()))
            .chain(nd.next.iter().cloned());
        links.extend(targets.map(|t| (nd.id.clone(), t)));
        match build_node(nd, &mut seen_answers) {
            Ok(node) => nodes.push(node),
            Err(mut errs) => errors.append(&mut errs),
        }
    }

    if start_count != 1 {
        errors.push(schema(
            None,
            format!("expected exactly one start node, found {start_count}"),
        ));
    }
    match nodes.iter().find(|n| n.id == doc.start.as_str()) {
        Some(n) if n.node_type != NodeType::Start => errors.push(schema(
            Some(&doc.start),
            "`start` must name the start node".into(),
        )),
        Some(_) => {}
        None if seen_ids.contains(&doc.start) => {}
        None => errors.push(GraphError::Link {
            from: "start".into(),
            target: doc.start.clone(),
        }),
    }

    for (from, target) in links {
        if !seen_ids.contains(&target) {
            errors.push(GraphError::Link { from, target });
        }
    }
    for key in doc.faq.keys() {
        if !seen_ids.contains(key) {
            errors.push(GraphError::Link {
                from: "faq".into(),
                target: key.clone(),
            });
        }
    }
    for key in doc.paraphrases.keys() {
        if !seen_answers.contains(key) {
            errors.push(GraphError::Link {
                from: "paraphrases".into(),
                target: key.clone(),
            });
        }
    }

    if !errors.is_empty() {
        return Err(GraphErrors(errors));
    }
    let faq = doc
        .faq
        .into_iter()
        .map(|(k, v)| (NodeId::from(k), v))
        .collect();
    Ok(DialogGraph::assemble(
        doc.version,
        doc.name,
        NodeId::from(doc.start),
        nodes,
        faq,
        doc.paraphrases,
    ))
}

fn build_node(nd: NodeDoc, seen_answers: &mut HashSet<String>) -> Result<DialogNode, Vec<GraphError>> {
    let mut errors = Vec::new();
    let id = nd.id.clone();
    let schema = |message: String| GraphError::Schema {
        node: Some(id.clone()),
        message,
    };
    let Some(node_type) = NodeType::parse(&nd.node_type) else {
        return Err(vec![schema(format!("unknown node type {:?}", nd.node_type))]);
    };

    if node_type != NodeType::Logic && nd.text.trim().is_empty() {
        errors.push(schema("text must be non-empty".into()));
    }
    if node_type.has_answers() {
        if nd.answers.is_empty() {
            errors.push(schema(format!("{node_type} node needs at least one answer")));
        }
    } else if !nd.answers.is_empty() {
        errors.push(schema(format!("{node_type} node cannot have answers")));
    }
    for a in &nd.answers {
        if a.intent_text.trim().is_empty() {
            errors.push(schema(format!("answer {:?} has empty intent_text", a.id)));
        }
        if !seen_answers.insert(a.id.clone()) {
            errors.push(GraphError::DuplicateId(a.id.clone()));
        }
    }
    match node_type {
        NodeType::Variable | NodeType::Logic if nd.variable.is_none() => {
            errors.push(schema(format!("{node_type} node must declare a variable")));
        }
        NodeType::Start | NodeType::Question | NodeType::Information if nd.variable.is_some() => {
            errors.push(schema(format!("{node_type} node cannot declare a variable")));
        }
        _ => {}
    }
    if nd.next.is_some() && !matches!(node_type, NodeType::Information | NodeType::Variable) {
        errors.push(schema(format!("{node_type} node cannot have `next`")));
    }

    let mut branches = Vec::new();
    if node_type == NodeType::Logic {
        if nd.branches.is_empty() {
            errors.push(schema("logic node needs at least one branch".into()));
        }
        let mut defaults = 0;
        for b in &nd.branches {
            match Condition::parse(&b.condition) {
                Ok(condition) => {
                    if let (Some(var), Some(decl)) = (condition.variable(), &nd.variable) {
                        if var != decl.name {
                            errors.push(schema(format!(
                                "condition tests {var:?} but the node declares {:?}",
                                decl.name
                            )));
                        }
                    }
                    if let (Condition::Compare { literal, .. }, Some(decl)) = (&condition, &nd.variable) {
                        if !literal_fits(literal, decl.value_kind) {
                            errors.push(schema(format!(
                                "literal in {:?} does not match value kind {}",
                                b.condition, decl.value_kind
                            )));
                        }
                    }
                    if condition == Condition::Default {
                        defaults += 1;
                    }
                    branches.push(LogicBranch {
                        condition,
                        target: NodeId::from(b.target.clone()),
                    });
                }
                Err(e) => errors.push(schema(e.to_string())),
            }
        }
        if defaults > 1 {
            errors.push(schema("more than one DEFAULT branch".into()));
        }
    } else if !nd.branches.is_empty() {
        errors.push(schema(format!("{node_type} node cannot have branches")));
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(DialogNode {
        id: NodeId::from(nd.id),
        node_type,
        text: nd.text,
        variable: nd.variable,
        answers: nd.answers,
        branches,
        next: nd.next.map(NodeId::from),
    })
}

fn literal_fits(literal: &Value, kind: ValueKind) -> bool {
    literal.kind() == kind
}

/// Serializes a graph to its canonical document form (pretty JSON, authored
/// node order, sorted faq/paraphrase keys).
pub fn to_document(graph: &DialogGraph) -> String {
    let nodes = graph
        .nodes()
        .iter()
        .map(|n| {
            let nd = NodeDoc {
                id: n.id.to_string(),
                node_type: n.node_type.as_str().to_string(),
                text: n.text.clone(),
                variable: n.variable.clone(),
                answers: n.answers.clone(),
                branches: n
                    .branches
                    .iter()
                    .map(|b| BranchDoc {
                        condition: b.condition.to_string(),
                        target: b.target.to_string(),
                    })
                    .collect(),
                next: n.next.as_ref().map(|t| t.to_string()),
            };
            serde_json::to_value(nd).expect("node serializes")
        })
        .collect();
    let doc = GraphDoc {
        version: graph.version(),
        name: graph.name().map(str::to_string),
        start: graph.start().to_string(),
        nodes,
        faq: graph
            .faq_map()
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
        paraphrases: graph.paraphrase_map().clone(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("document serializes");
    out.push('\n');
    out
}
