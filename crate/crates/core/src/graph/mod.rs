//! Dialog graph domain model: typed nodes, intent-labelled edges, templates,
//! FAQ questions and answer paraphrases.

mod condition;
mod document;
mod template;
mod validate;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use condition::{
    Beliefstate, CoercionError, CompareOp, Condition, ConditionError, Value, ValueKind,
};
pub use document::{parse_graph, to_document, GraphError, GraphErrors, FORMAT_VERSION};
pub use template::{fill_template, has_placeholders, placeholders, rendering_pattern, MissingVariable};
pub use validate::{tree_depth, validate_graph, Diagnostic};

/// Identifier of a dialog node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl PartialEq<str> for NodeId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for NodeId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Start,
    Question,
    Variable,
    Logic,
    Information,
}

impl NodeType {
    pub fn parse(s: &str) -> Option<NodeType> {
        Some(match s {
            "start" => NodeType::Start,
            "question" => NodeType::Question,
            "variable" => NodeType::Variable,
            "logic" => NodeType::Logic,
            "information" => NodeType::Information,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Start => "start",
            NodeType::Question => "question",
            NodeType::Variable => "variable",
            NodeType::Logic => "logic",
            NodeType::Information => "information",
        }
    }

    /// Whether the user chooses among authored answers at this node.
    pub fn has_answers(self) -> bool {
        matches!(self, NodeType::Start | NodeType::Question)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub value_kind: ValueKind,
}

/// An intent-labelled edge leaving a question or start node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub id: String,
    pub intent_text: String,
    pub target: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicBranch {
    pub condition: Condition,
    pub target: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogNode {
    pub id: NodeId,
    pub node_type: NodeType,
    pub text: String,
    pub variable: Option<VariableDecl>,
    pub answers: Vec<Answer>,
    pub branches: Vec<LogicBranch>,
    pub next: Option<NodeId>,
}

impl DialogNode {
    /// Resolves a logic node against the beliefstate: the first branch whose
    /// condition holds. `Err(name)` when the tested variable is unset.
    pub fn resolve_branch(&self, beliefstate: &Beliefstate) -> Result<Option<usize>, String> {
        let name = match &self.variable {
            Some(decl) => &decl.name,
            None => return Ok(self.branches.iter().position(|b| b.condition == Condition::Default)),
        };
        match beliefstate.get(name) {
            Some(value) => Ok(self.branches.iter().position(|b| b.condition.holds(value))),
            None => Err(name.clone()),
        }
    }
}

/// How an edge is labelled in the authored graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeLabel {
    /// Index into the source node's answers.
    Answer(usize),
    /// Index into the source node's logic branches.
    Branch(usize),
    Next,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge<'g> {
    pub source: &'g NodeId,
    pub target: &'g NodeId,
    pub label: EdgeLabel,
}

/// An immutable, validated dialog graph.
#[derive(Debug, Clone)]
pub struct DialogGraph {
    version: u32,
    name: Option<String>,
    start: NodeId,
    nodes: Vec<DialogNode>,
    index: HashMap<NodeId, usize>,
    // de-duplicated successor indices in authored order
    successors: Vec<Vec<usize>>,
    faq: BTreeMap<NodeId, Vec<String>>,
    paraphrases: BTreeMap<String, Vec<String>>,
    answers: HashMap<String, (usize, usize)>,
}

impl PartialEq for DialogGraph {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.name == other.name
            && self.start == other.start
            && self.nodes == other.nodes
            && self.faq == other.faq
            && self.paraphrases == other.paraphrases
    }
}

impl DialogGraph {
    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn start(&self) -> &NodeId {
        &self.start
    }

    pub fn start_node(&self) -> &DialogNode {
        &self.nodes[self.index[&self.start]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in authored order.
    pub fn nodes(&self) -> &[DialogNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&DialogNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_at(&self, index: usize) -> &DialogNode {
        &self.nodes[index]
    }

    /// Successor indices of the node at `index`, de-duplicated, in authored
    /// order (answers, then branches, then `next`).
    pub fn successor_indices(&self, index: usize) -> &[usize] {
        &self.successors[index]
    }

    pub fn successors(&self, id: &str) -> Vec<&NodeId> {
        match self.index_of(id) {
            Some(i) => self.successors[i]
                .iter()
                .map(|&j| &self.nodes[j].id)
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn has_successors(&self, id: &str) -> bool {
        self.index_of(id)
            .is_some_and(|i| !self.successors[i].is_empty())
    }

    /// All labelled edges leaving `id`, in authored order.
    pub fn edges(&self, id: &str) -> Vec<Edge<'_>> {
        let Some(node) = self.node(id) else {
            return Vec::new();
        };
        let mut edges: Vec<Edge<'_>> = node
            .answers
            .iter()
            .enumerate()
            .map(|(i, a)| Edge {
                source: &node.id,
                target: &a.target,
                label: EdgeLabel::Answer(i),
            })
            .collect();
        edges.extend(node.branches.iter().enumerate().map(|(i, b)| Edge {
            source: &node.id,
            target: &b.target,
            label: EdgeLabel::Branch(i),
        }));
        if let Some(next) = &node.next {
            edges.push(Edge {
                source: &node.id,
                target: next,
                label: EdgeLabel::Next,
            });
        }
        edges
    }

    pub fn faq(&self, id: &str) -> &[String] {
        self.faq.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn faq_map(&self) -> &BTreeMap<NodeId, Vec<String>> {
        &self.faq
    }

    pub fn paraphrases(&self, answer_id: &str) -> &[String] {
        self.paraphrases
            .get(answer_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn paraphrase_map(&self) -> &BTreeMap<String, Vec<String>> {
        &self.paraphrases
    }

    /// Looks up an answer by id, together with the node it leaves.
    pub fn answer(&self, answer_id: &str) -> Option<(&DialogNode, &Answer)> {
        self.answers.get(answer_id).map(|&(n, a)| {
            let node = &self.nodes[n];
            (node, &node.answers[a])
        })
    }

    /// Variable nodes declaring `name`, in authored order.
    pub fn variable_declarers<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a DialogNode> + 'a {
        self.nodes.iter().filter(move |n| {
            n.node_type == NodeType::Variable
                && n.variable.as_ref().is_some_and(|v| v.name == name)
        })
    }

    /// Breadth-first distance in edges from `from` to every reachable node,
    /// indexed like `nodes()`.
    pub fn distances_from(&self, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[from] = Some(0);
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for &v in &self.successors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_reachable(&self, from: &str, to: &str) -> bool {
        match (self.index_of(from), self.index_of(to)) {
            (Some(f), Some(t)) => self.distances_from(f)[t].is_some(),
            _ => false,
        }
    }

    pub(crate) fn assemble(
        version: u32,
        name: Option<String>,
        start: NodeId,
        nodes: Vec<DialogNode>,
        faq: BTreeMap<NodeId, Vec<String>>,
        paraphrases: BTreeMap<String, Vec<String>>,
    ) -> DialogGraph {
        let index: HashMap<NodeId, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let successors = nodes
            .iter()
            .map(|n| {
                let mut out: Vec<usize> = Vec::new();
                let targets = n
                    .answers
                    .iter()
                    .map(|a| &a.target)
                    .chain(n.branches.iter().map(|b| &b.target))
                    .chain(n.next.iter());
                for t in targets {
                    let j = index[t];
                    if !out.contains(&j) {
                        out.push(j);
                    }
                }
                out
            })
            .collect();
        let answers = nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| {
                n.answers
                    .iter()
                    .enumerate()
                    .map(move |(j, a)| (a.id.clone(), (i, j)))
            })
            .collect();
        DialogGraph {
            version,
            name,
            start,
            nodes,
            index,
            successors,
            faq,
            paraphrases,
            answers,
        }
    }
}
